#include "disam/image_io.hpp"

#include <cstdio>
#include <fstream>
#include <vector>

#include "disam/errors.hpp"

namespace disam {

namespace {

// Skips whitespace and '#' comments between PPM header tokens.
int next_header_int(std::istream& in, const std::string& path) {
  int c = in.get();
  while (c == '#' || std::isspace(c)) {
    if (c == '#') {
      while (c != '\n' && c != EOF) c = in.get();
    }
    c = in.get();
  }
  if (c == EOF) throw IoError("truncated PPM header: " + path);
  in.unget();
  int v = 0;
  if (!(in >> v)) throw IoError("bad PPM header: " + path);
  return v;
}

}  // namespace

TensorF read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '6') throw IoError("not a P6 PPM file: " + path);
  const int w = next_header_int(in, path);
  const int h = next_header_int(in, path);
  const int maxval = next_header_int(in, path);
  if (w <= 0 || h <= 0 || maxval != 255)
    throw IoError("unsupported PPM geometry in " + path);
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> bytes(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw IoError("truncated PPM payload: " + path);

  TensorF out({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const unsigned char b = bytes[(static_cast<size_t>(y) * w + x) * 3 + c];
        out.at(c, y, x) = static_cast<float>(b) / 255.0f * 2.0f - 1.0f;
      }
  return out;
}

void write_ppm(const TensorF& pixels, const std::string& path) {
  if (pixels.ndim() != 3 || pixels.dim(0) != 3)
    throw ShapeMismatch("write_ppm expects (3,H,W), got " + pixels.shape_str());
  const int h = pixels.dim(1), w = pixels.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image: " + path);
  char header[64];
  std::snprintf(header, sizeof(header), "P6\n%d %d\n255\n", w, h);
  out << header;
  std::vector<unsigned char> bytes(static_cast<size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = (pixels.at(c, y, x) + 1.0f) * 0.5f * 255.0f;
        v = std::min(255.0f, std::max(0.0f, std::round(v)));
        bytes[(static_cast<size_t>(y) * w + x) * 3 + c] = static_cast<unsigned char>(v);
      }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write: " + path);
}

}  // namespace disam
