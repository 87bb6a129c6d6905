#include "disam/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>

#include "disam/crc32.hpp"
#include "disam/samcore.hpp"

namespace disam {
namespace retrieval {

namespace {

constexpr char kMagic[] = "DISAMFDB";
constexpr uint32_t kVersion = 1;

void warn_fingerprint(const std::string& what, const std::string& db_fp,
                      const std::string& model_fp, bool strict) {
  if (db_fp == model_fp) return;
  const std::string msg = "fingerprint mismatch: " + what + " database was built with model " +
                          db_fp + ", queried with " + model_fp;
  if (strict) throw FingerprintMismatch(msg);
  std::cerr << "warning: " << msg << "\n";
}

std::vector<RankedMatch> rank_all(const FeatureDatabase& db,
                                  const std::function<double(const DbEntry&)>& score, int top_n) {
  if (db.empty()) throw EmptyDatabase("retrieval over an empty feature database");
  if (top_n < 1) throw InvalidConfig("top_n must be >= 1");
  std::vector<RankedMatch> all;
  all.reserve(db.size());
  for (size_t i = 0; i < db.size(); ++i)
    all.push_back({db.entries[i].id, score(db.entries[i]), i});
  std::stable_sort(all.begin(), all.end(), [](const RankedMatch& a, const RankedMatch& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.db_index < b.db_index;
  });
  if (all.size() > static_cast<size_t>(top_n)) all.resize(static_cast<size_t>(top_n));
  return all;
}

}  // namespace

FeatureDatabase build_feature_db(const net::ModelBundle& bundle, const Manifest& manifest,
                                 const std::string& manifest_dir, DomainId domain) {
  FeatureDatabase db;
  db.fingerprint = bundle.fingerprint;
  const auto records = manifest.split_records(Split::database);
  if (records.empty()) throw EmptyDatabase("manifest has no database records");
  for (const ManifestRecord* rec : records) {
    if (!rec->pose) throw MissingPose("database record '" + rec->id + "' has no pose");
    const ImageSample img = load_image_sample(manifest, *rec, manifest_dir);
    FeatureMap z = net::encode(bundle, domain, img);
    if (db.entries.empty()) {
      db.channels = z.dim(0);
      db.height = z.dim(1);
      db.width = z.dim(2);
    }
    db.entries.push_back({rec->id, std::move(z), *rec->pose});
  }
  return db;
}

void save_feature_db(const FeatureDatabase& db, const std::string& path) {
  static_assert(std::endian::native == std::endian::little);
  std::string bytes;
  auto raw = [&bytes](const void* p, size_t n) {
    bytes.append(static_cast<const char*>(p), n);
  };
  auto u32 = [&raw](uint32_t v) { raw(&v, 4); };

  raw(kMagic, sizeof(kMagic) - 1);
  u32(kVersion);
  u32(static_cast<uint32_t>(db.fingerprint.size()));
  raw(db.fingerprint.data(), db.fingerprint.size());
  u32(static_cast<uint32_t>(db.entries.size()));
  u32(static_cast<uint32_t>(db.channels));
  u32(static_cast<uint32_t>(db.height));
  u32(static_cast<uint32_t>(db.width));
  for (const DbEntry& e : db.entries) {
    u32(static_cast<uint32_t>(e.id.size()));
    raw(e.id.data(), e.id.size());
    raw(e.pose.position, sizeof(double) * 3);
    raw(e.pose.quaternion, sizeof(double) * 4);
    raw(e.feature.data(), sizeof(float) * static_cast<size_t>(e.feature.numel()));
  }
  Crc32 crc;
  crc.update(bytes.data(), bytes.size());
  const uint32_t sum = crc.value();
  raw(&sum, 4);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write feature db: " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short feature db write: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move feature db into place: " + ec.message());
}

FeatureDatabase load_feature_db(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature db: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) - 1 + 8) throw IoError("feature db too small: " + path);

  Crc32 crc;
  crc.update(bytes.data(), bytes.size() - 4);
  uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  if (stored != crc.value()) throw IoError("feature db checksum mismatch: " + path);

  size_t pos = 0;
  auto take = [&](size_t n) {
    if (pos + n > bytes.size() - 4) throw IoError("truncated feature db: " + path);
    const char* p = bytes.data() + pos;
    pos += n;
    return p;
  };
  auto u32 = [&take]() {
    uint32_t v;
    std::memcpy(&v, take(4), 4);
    return v;
  };

  if (std::memcmp(take(sizeof(kMagic) - 1), kMagic, sizeof(kMagic) - 1) != 0)
    throw IoError("bad feature db magic: " + path);
  if (u32() != kVersion) throw VersionMismatch("unsupported feature db version");

  FeatureDatabase db;
  const uint32_t fp_len = u32();
  db.fingerprint.assign(take(fp_len), fp_len);
  const uint32_t count = u32();
  db.channels = static_cast<int>(u32());
  db.height = static_cast<int>(u32());
  db.width = static_cast<int>(u32());
  const int64_t numel = static_cast<int64_t>(db.channels) * db.height * db.width;
  for (uint32_t i = 0; i < count; ++i) {
    DbEntry e;
    const uint32_t id_len = u32();
    e.id.assign(take(id_len), id_len);
    std::memcpy(e.pose.position, take(sizeof(double) * 3), sizeof(double) * 3);
    std::memcpy(e.pose.quaternion, take(sizeof(double) * 4), sizeof(double) * 4);
    e.feature = TensorF({db.channels, db.height, db.width});
    std::memcpy(e.feature.data(), take(sizeof(float) * static_cast<size_t>(numel)),
                sizeof(float) * static_cast<size_t>(numel));
    db.entries.push_back(std::move(e));
  }
  return db;
}

double flattened_cosine(const TensorD& a, const TensorD& b) {
  require_same_shape("flattened_cosine", a, b);
  double dot = 0, na = 0, nb = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb) + samcore::kNormEpsilon);
}

double flattened_cosine(const FeatureMap& a, const FeatureMap& b) {
  return flattened_cosine(a.cast<double>(), b.cast<double>());
}

RetrievalResult coarse_retrieve(const FeatureDatabase& db, const FeatureMap& query, int top_n,
                                const std::string& query_id) {
  RetrievalResult r;
  r.query_id = query_id;
  r.stage = RetrievalStage::coarse;
  const TensorD q = query.cast<double>();
  r.ranked = rank_all(
      db,
      [&q](const DbEntry& e) {
        return samcore::mean_channel_cosine(q, e.feature.cast<double>()).value;
      },
      top_n);
  r.predicted_pose = db.entries[r.ranked.front().db_index].pose;
  return r;
}

RetrievalResult fine_retrieve(const FeatureDatabase& db, const FeatureMap& query, int top_n,
                              const std::string& query_id) {
  RetrievalResult r;
  r.query_id = query_id;
  r.stage = RetrievalStage::fine;
  const TensorD q = query.cast<double>();
  r.ranked = rank_all(
      db, [&q](const DbEntry& e) { return flattened_cosine(q, e.feature.cast<double>()); }, top_n);
  r.predicted_pose = db.entries[r.ranked.front().db_index].pose;
  return r;
}

FineFeatureSource reencode_source(const net::ModelBundle& fine_bundle, const Manifest& manifest,
                                  const std::string& manifest_dir, const FeatureDatabase& coarse_db,
                                  DomainId db_domain) {
  // Resolve entry ids to manifest records once.
  auto by_id = std::make_shared<std::map<std::string, const ManifestRecord*>>();
  for (const auto& rec : manifest.records) (*by_id)[rec.id] = &rec;
  for (const auto& e : coarse_db.entries)
    if (!by_id->count(e.id))
      throw MissingPose("database entry '" + e.id + "' not present in the manifest");
  const Manifest* m = &manifest;
  return [&fine_bundle, m, manifest_dir, &coarse_db, db_domain, by_id](size_t idx) {
    const ManifestRecord* rec = by_id->at(coarse_db.entries[idx].id);
    const ImageSample img = load_image_sample(*m, *rec, manifest_dir);
    return net::encode(fine_bundle, db_domain, img);
  };
}

FineFeatureSource cached_source(const FeatureDatabase& fine_db) {
  return [&fine_db](size_t idx) { return fine_db.entries[idx].feature; };
}

RetrievalResult coarse_to_fine(const FeatureDatabase& coarse_db,
                               const net::ModelBundle& fine_bundle,
                               const net::ModelBundle& coarse_bundle, const TensorF& query_pixels,
                               DomainId query_domain, const FineFeatureSource& fine_features,
                               const CoarseToFineOptions& opts, const std::string& query_id) {
  warn_fingerprint("coarse", coarse_db.fingerprint, coarse_bundle.fingerprint,
                   opts.strict_fingerprint);

  const FeatureMap q_coarse = net::encode_pixels(coarse_bundle, query_domain, query_pixels);
  const RetrievalResult shortlist = coarse_retrieve(coarse_db, q_coarse, opts.top_n, query_id);

  const FeatureMap q_fine = net::encode_pixels(fine_bundle, query_domain, query_pixels);
  const TensorD qf = q_fine.cast<double>();

  RetrievalResult r;
  r.query_id = query_id;
  r.stage = RetrievalStage::coarse_to_fine;
  for (const RankedMatch& cand : shortlist.ranked) {
    const FeatureMap zf = fine_features(cand.db_index);
    r.ranked.push_back({cand.db_id, flattened_cosine(qf, zf.cast<double>()), cand.db_index});
  }
  std::stable_sort(r.ranked.begin(), r.ranked.end(), [](const RankedMatch& a, const RankedMatch& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.db_index < b.db_index;
  });
  r.predicted_pose = coarse_db.entries[r.ranked.front().db_index].pose;
  return r;
}

}  // namespace retrieval
}  // namespace disam
