#include "disam/datamodel.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "disam/errors.hpp"
#include "disam/image_io.hpp"

namespace disam {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

double parse_double(const std::string& tok, int line_no) {
  double v = 0;
  const char* b = tok.data();
  auto [p, ec] = std::from_chars(b, b + tok.size(), v);
  if (ec != std::errc() || p != b + tok.size())
    throw MalformedRecord("line " + std::to_string(line_no) + ": bad number '" + tok + "'");
  return v;
}

long parse_int(const std::string& tok, int line_no) {
  long v = 0;
  const char* b = tok.data();
  auto [p, ec] = std::from_chars(b, b + tok.size(), v);
  if (ec != std::errc() || p != b + tok.size())
    throw MalformedRecord("line " + std::to_string(line_no) + ": bad integer '" + tok + "'");
  return v;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

Split parse_split(const std::string& s, int line_no) {
  if (s == "database") return Split::database;
  if (s == "query") return Split::query;
  if (s == "train") return Split::train;
  throw MalformedRecord("line " + std::to_string(line_no) + ": unknown split '" + s + "'");
}

}  // namespace

double Pose::quat_norm() const {
  return std::sqrt(quaternion[0] * quaternion[0] + quaternion[1] * quaternion[1] +
                   quaternion[2] * quaternion[2] + quaternion[3] * quaternion[3]);
}

const char* to_string(Split s) {
  switch (s) {
    case Split::database: return "database";
    case Split::query: return "query";
    case Split::train: return "train";
  }
  return "?";
}

const char* to_string(Stage s) { return s == Stage::coarse ? "coarse" : "fine"; }

std::vector<const ManifestRecord*> Manifest::split_records(Split s) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(&r);
  return out;
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);

  Manifest m;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("#domains:", 0) == 0) {
      std::string rest = line.substr(9);
      std::string name;
      std::istringstream is(rest);
      m.domain_names.clear();
      while (std::getline(is, name, ',')) {
        // trim surrounding spaces
        const auto b = name.find_first_not_of(' ');
        const auto e = name.find_last_not_of(' ');
        if (b == std::string::npos)
          throw MalformedRecord("line " + std::to_string(line_no) + ": empty domain name");
        m.domain_names.push_back(name.substr(b, e - b + 1));
      }
      continue;
    }
    if (line.rfind("#image_size:", 0) == 0) {
      std::string rest = line.substr(12);
      for (char& c : rest)
        if (c == ',') c = ' ';
      auto toks = split_ws(rest);
      if (toks.size() != 2)
        throw MalformedRecord("line " + std::to_string(line_no) + ": bad image_size header");
      m.image_height = static_cast<int>(parse_int(toks[0], line_no));
      m.image_width = static_cast<int>(parse_int(toks[1], line_no));
      continue;
    }
    if (line[0] == '#') continue;  // other comments

    auto toks = split_ws(line);
    // id path domain place (pose: '-' or 7 floats) split
    if (toks.size() != 6 && toks.size() != 12)
      throw MalformedRecord("line " + std::to_string(line_no) + ": expected 6 or 12 fields, got " +
                            std::to_string(toks.size()));
    ManifestRecord rec;
    rec.id = toks[0];
    rec.image_path = toks[1];
    const long dom = parse_int(toks[2], line_no);
    if (dom < 0 || dom >= static_cast<long>(m.domain_names.size()))
      throw UnknownDomain("line " + std::to_string(line_no) + ": domain index " +
                          std::to_string(dom) + " not in [0," +
                          std::to_string(m.domain_names.size()) + ")");
    rec.domain.index = static_cast<int>(dom);
    const long place = parse_int(toks[3], line_no);
    if (place < 0)
      throw MalformedRecord("line " + std::to_string(line_no) + ": negative place index");
    rec.place.index = static_cast<int>(place);

    size_t k = 4;
    if (toks.size() == 6) {
      if (toks[4] != "-")
        throw MalformedRecord("line " + std::to_string(line_no) + ": expected '-' or 7 pose values");
      ++k;
    } else {
      Pose pose;
      for (int i = 0; i < 3; ++i) pose.position[i] = parse_double(toks[k + static_cast<size_t>(i)], line_no);
      for (int i = 0; i < 4; ++i) pose.quaternion[i] = parse_double(toks[k + 3 + static_cast<size_t>(i)], line_no);
      if (std::abs(pose.quat_norm() - 1.0) > 1e-6)
        throw MalformedRecord("line " + std::to_string(line_no) + ": quaternion norm " +
                              fmt_double(pose.quat_norm()) + " not unit");
      rec.pose = pose;
      k += 7;
    }
    rec.split = parse_split(toks[k], line_no);
    if (rec.split == Split::database && !rec.pose)
      throw MissingPoseForDatabase("line " + std::to_string(line_no) + ": database record '" +
                                   rec.id + "' has no pose");
    if (!seen_ids.insert(rec.id).second)
      throw DuplicateId("line " + std::to_string(line_no) + ": duplicate id '" + rec.id + "'");
    m.records.push_back(std::move(rec));
  }
  return m;
}

void save_manifest(const Manifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest: " + path);
  if (!m.domain_names.empty()) {
    out << "#domains: ";
    for (size_t i = 0; i < m.domain_names.size(); ++i)
      out << (i ? "," : "") << m.domain_names[i];
    out << '\n';
    out << "#image_size: " << m.image_height << ',' << m.image_width << '\n';
  }
  for (const auto& r : m.records) {
    out << r.id << '\t' << r.image_path << '\t' << r.domain.index << '\t' << r.place.index << '\t';
    if (r.pose) {
      const Pose& p = *r.pose;
      out << fmt_double(p.position[0]) << ' ' << fmt_double(p.position[1]) << ' '
          << fmt_double(p.position[2]) << ' ' << fmt_double(p.quaternion[0]) << ' '
          << fmt_double(p.quaternion[1]) << ' ' << fmt_double(p.quaternion[2]) << ' '
          << fmt_double(p.quaternion[3]);
    } else {
      out << '-';
    }
    out << '\t' << to_string(r.split) << '\n';
  }
  if (!out) throw IoError("short write: " + path);
}

ImageSample load_image_sample(const Manifest& m, const ManifestRecord& rec,
                              const std::string& manifest_dir) {
  namespace fs = std::filesystem;
  fs::path p(rec.image_path);
  if (p.is_relative() && !manifest_dir.empty()) p = fs::path(manifest_dir) / p;
  ImageSample s;
  s.id = rec.id;
  s.pixels = read_ppm(p.string());
  if (m.image_height > 0 &&
      (s.pixels.dim(1) != m.image_height || s.pixels.dim(2) != m.image_width))
    throw ShapeMismatch("image '" + rec.id + "' is " + s.pixels.shape_str() +
                        ", manifest expects (3," + std::to_string(m.image_height) + "," +
                        std::to_string(m.image_width) + ")");
  s.domain = rec.domain;
  s.place = rec.place;
  s.pose = rec.pose;
  s.split = rec.split;
  return s;
}

ImageSample flip_horizontal(const ImageSample& img) {
  ImageSample out = img;
  out.id = img.id + "#flip";
  const int c = img.pixels.dim(0), h = img.pixels.dim(1), w = img.pixels.dim(2);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.pixels.at(ch, y, x) = img.pixels.at(ch, y, w - 1 - x);
  return out;
}

}  // namespace disam
