#include "disam/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "disam/errors.hpp"
#include "disam/image_io.hpp"
#include "disam/rng.hpp"

namespace disam {
namespace synthgen {

namespace {

uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  uint64_t h = seed ^ 0x9E3779B97F4A7C15ull;
  for (uint64_t v : {a, b, c}) {
    h ^= v + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
    h *= 0xFF51AFD7ED558CCDull;
    h ^= h >> 33;
  }
  return h;
}

struct Shape {
  bool disc = false;
  double cx = 0, cy = 0;   // scene coordinates, pixels
  double hx = 0, hy = 0;   // half extents (radius for discs)
  double color[3] = {0, 0, 0};
};

struct Scene {
  double base[3];
  double amp[3];
  double fx, fy, px, py;
  std::vector<Shape> shapes;
};

// Geometry depends only on (seed, place): all domains and views share it.
Scene make_scene(uint64_t seed, int place, int image_size) {
  Rng rng(mix_seed(seed, 0x5C3, static_cast<uint64_t>(place)));
  Scene s;
  for (int c = 0; c < 3; ++c) {
    s.base[c] = rng.uniform(0.42, 0.58);
    s.amp[c] = rng.uniform(0.03, 0.06);
  }
  s.fx = rng.uniform(1.0, 2.0);
  s.fy = rng.uniform(1.0, 2.0);
  s.px = rng.uniform(0.0, 2 * M_PI);
  s.py = rng.uniform(0.0, 2 * M_PI);
  const double size = image_size;
  const int n_shapes = 6 + place % 3;
  for (int i = 0; i < n_shapes; ++i) {
    Shape sh;
    sh.disc = rng.coin();
    sh.cx = rng.uniform(0.15, 0.85) * size;
    sh.cy = rng.uniform(0.15, 0.85) * size;
    sh.hx = rng.uniform(0.07, 0.20) * size;
    sh.hy = sh.disc ? sh.hx : rng.uniform(0.07, 0.20) * size;
    // dark or light against the ~0.5 background so edges stay strong
    const bool dark = rng.coin();
    for (int c = 0; c < 3; ++c)
      sh.color[c] = dark ? rng.uniform(0.20, 0.38) : rng.uniform(0.62, 0.80);
    s.shapes.push_back(sh);
  }
  return s;
}

struct DomainTransform {
  double rot[3][3];   // hue rotation about the gray axis
  double gain = 1.0;
  double bias = 0.0;
  double tint_amp[3] = {0, 0, 0};
  double tint_fx = 1, tint_fy = 1, tint_px = 0, tint_py = 0;
};

DomainTransform make_transform(uint64_t seed, int domain) {
  DomainTransform t;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) t.rot[a][b] = a == b ? 1.0 : 0.0;
  if (domain == 0) return t;  // reference condition stays natural

  Rng rng(mix_seed(seed, 0xD0E, static_cast<uint64_t>(domain)));
  // Alternate rotation direction by domain so non-reference domains spread
  // apart from each other too.
  const double theta =
      (domain % 2 ? 1.0 : -1.0) * rng.uniform(25.0, 50.0) * M_PI / 180.0;
  // Rodrigues rotation about u = (1,1,1)/sqrt(3); preserves the channel mean.
  const double u = 1.0 / std::sqrt(3.0);
  const double cth = std::cos(theta), sth = std::sin(theta);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      const double eye = a == b ? 1.0 : 0.0;
      double cross = 0;  // [u]x matrix entry
      if (a == 0 && b == 1) cross = -u;
      if (a == 0 && b == 2) cross = u;
      if (a == 1 && b == 0) cross = u;
      if (a == 1 && b == 2) cross = -u;
      if (a == 2 && b == 0) cross = -u;
      if (a == 2 && b == 1) cross = u;
      t.rot[a][b] = cth * eye + sth * cross + (1 - cth) * u * u;
    }
  t.gain = rng.uniform(0.85, 1.18);
  t.bias = (domain % 2 ? 1.0 : -1.0) * rng.uniform(0.03, 0.09);
  for (int c = 0; c < 3; ++c) t.tint_amp[c] = rng.uniform(0.03, 0.05);
  t.tint_fx = rng.uniform(0.5, 1.5);
  t.tint_fy = rng.uniform(0.5, 1.5);
  t.tint_px = rng.uniform(0.0, 2 * M_PI);
  t.tint_py = rng.uniform(0.0, 2 * M_PI);
  return t;
}

TensorF render(const SynthConfig& cfg, const Scene& scene, const DomainTransform& t, int place,
               int domain, int view) {
  const int size = cfg.image_size;
  Rng noise(mix_seed(cfg.seed, static_cast<uint64_t>(place) * 977 + 13,
                     static_cast<uint64_t>(domain), static_cast<uint64_t>(view)));
  const double offx = 3.0 * view;  // discrete camera shift per view
  const double offy = 1.0 * view;

  TensorF img({3, size, size});
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double sx = x + offx, sy = y + offy;
      double px[3];
      for (int c = 0; c < 3; ++c)
        px[c] = scene.base[c] +
                scene.amp[c] * std::sin(2 * M_PI * scene.fx * sx / size + scene.px) *
                    std::cos(2 * M_PI * scene.fy * sy / size + scene.py);
      for (const Shape& sh : scene.shapes) {
        const double dx = sx - sh.cx, dy = sy - sh.cy;
        const bool inside = sh.disc ? (dx * dx + dy * dy <= sh.hx * sh.hx)
                                    : (std::abs(dx) <= sh.hx && std::abs(dy) <= sh.hy);
        if (inside)
          for (int c = 0; c < 3; ++c) px[c] = sh.color[c];
      }

      // photometric domain transform
      double rot[3];
      for (int a = 0; a < 3; ++a)
        rot[a] = t.rot[a][0] * px[0] + t.rot[a][1] * px[1] + t.rot[a][2] * px[2];
      for (int c = 0; c < 3; ++c) {
        double v = (rot[c] - 0.5) * t.gain + 0.5 + t.bias;
        v += t.tint_amp[c] * std::sin(2 * M_PI * t.tint_fx * x / size + t.tint_px) *
             std::sin(2 * M_PI * t.tint_fy * y / size + t.tint_py);
        v += noise.uniform(-cfg.noise_level, cfg.noise_level);
        v = std::clamp(v, 0.0, 1.0);
        img.at(c, y, x) = static_cast<float>(v * 2.0 - 1.0);
      }
    }
  return img;
}

Pose sample_pose(int place, int view) {
  Pose p;
  p.position[0] = 10.0 * place + 0.4 * view;
  p.position[1] = 0.0;
  p.position[2] = 0.0;
  const double yaw = 3.0 * view * M_PI / 180.0;
  p.quaternion[0] = std::cos(yaw / 2);
  p.quaternion[3] = std::sin(yaw / 2);
  return p;
}

std::string image_name(int place, int domain, int view) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "p%03d_d%d_v%d", place, domain, view);
  return buf;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_places < 2) throw InvalidConfig("n_places must be >= 2");
  if (n_domains < 2) throw InvalidConfig("n_domains must be >= 2");
  if (views_per_place < 1) throw InvalidConfig("views_per_place must be >= 1");
  if (image_size < 8) throw InvalidConfig("image_size must be >= 8");
  if (noise_level < 0) throw InvalidConfig("noise_level must be nonnegative");
}

Manifest generate(const SynthConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) throw IoError("cannot create output directory: " + out_dir);

  std::vector<DomainTransform> transforms;
  for (int d = 0; d < cfg.n_domains; ++d) transforms.push_back(make_transform(cfg.seed, d));

  for (int p = 0; p < cfg.n_places; ++p) {
    const Scene scene = make_scene(cfg.seed, p, cfg.image_size);
    for (int d = 0; d < cfg.n_domains; ++d)
      for (int v = 0; v < cfg.views_per_place; ++v) {
        const TensorF img = render(cfg, scene, transforms[static_cast<size_t>(d)], p, d, v);
        const std::string path =
            (fs::path(out_dir) / "images" / (image_name(p, d, v) + ".ppm")).string();
        write_ppm(img, path);
      }
  }

  Manifest m;
  for (int d = 0; d < cfg.n_domains; ++d) m.domain_names.push_back("dom" + std::to_string(d));
  m.image_height = cfg.image_size;
  m.image_width = cfg.image_size;

  auto add = [&m](const std::string& id, int p, int d, int v, Split split, bool with_pose) {
    ManifestRecord rec;
    rec.id = id;
    rec.image_path = "images/" + image_name(p, d, v) + ".ppm";
    rec.domain = DomainId{d};
    rec.place = PlaceId{p};
    if (with_pose) rec.pose = sample_pose(p, v);
    rec.split = split;
    m.records.push_back(std::move(rec));
  };

  // database: the reference domain
  for (int p = 0; p < cfg.n_places; ++p)
    for (int v = 0; v < cfg.views_per_place; ++v)
      add("db_" + image_name(p, 0, v), p, 0, v, Split::database, true);
  // queries: every other domain
  for (int d = 1; d < cfg.n_domains; ++d)
    for (int p = 0; p < cfg.n_places; ++p)
      for (int v = 0; v < cfg.views_per_place; ++v)
        add("q_" + image_name(p, d, v), p, d, v, Split::query, true);
  // training covers every image; poses withheld (training is unsupervised)
  for (int d = 0; d < cfg.n_domains; ++d)
    for (int p = 0; p < cfg.n_places; ++p)
      for (int v = 0; v < cfg.views_per_place; ++v)
        add("t_" + image_name(p, d, v), p, d, v, Split::train, false);

  save_manifest(m, (fs::path(out_dir) / "manifest.tsv").string());
  return m;
}

}  // namespace synthgen
}  // namespace disam
