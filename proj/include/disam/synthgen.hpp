#pragma once

#include <cstdint>
#include <string>

#include "disam/datamodel.hpp"

namespace disam {
namespace synthgen {

// Deterministic multi-domain synthetic dataset: each place is a procedural
// scene rendered once per domain and view. Geometry is shared across
// domains; domains differ only photometrically (hue rotation, global
// contrast/brightness, a low-frequency tint field and mild noise), so
// domain-invariant retrieval is learnable at desk scale.
struct SynthConfig {
  int n_places = 24;
  int n_domains = 3;
  int views_per_place = 2;
  int image_size = 64;
  uint64_t seed = 0;
  double noise_level = 0.005;        // additive uniform noise in [0,1] units
  double min_photometric_gap = 0.05; // documented floor on cross-domain mean abs diff

  void validate() const;
};

// Renders every (place, domain, view) image under out_dir/images/, writes
// out_dir/manifest.tsv and returns the manifest. Splits: domain 0 is the
// database, all other domains are queries, and every image additionally
// appears as a train record. Distinct places sit more than 5 m apart along
// the synthetic trajectory.
Manifest generate(const SynthConfig& cfg, const std::string& out_dir);

}  // namespace synthgen
}  // namespace disam
