#pragma once

#include <optional>
#include <string>
#include <vector>

#include "disam/tensor.hpp"

namespace disam {

// One environmental condition (season / weather / illumination). Each
// domain owns its own encoder, decoder and discriminator.
struct DomainId {
  int index = 0;
  bool operator==(const DomainId&) const = default;
};

// The physical place depicted; the latent content code is meant to depend
// only on this.
struct PlaceId {
  int index = 0;
  bool operator==(const PlaceId&) const = default;
};

// 6-DoF pose: position in meters, orientation as unit quaternion (w,x,y,z).
struct Pose {
  double position[3] = {0, 0, 0};
  double quaternion[4] = {1, 0, 0, 0};

  double quat_norm() const;
  bool operator==(const Pose&) const = default;
};

enum class Split { database, query, train };

// Coarse model: trained without SAM terms (feature-consistency objective);
// fine model adds the activation-map terms.
enum class Stage { coarse, fine };

const char* to_string(Split s);
const char* to_string(Stage s);

// Latent content code z with shape (channels, height, width); the unit of
// retrieval.
using FeatureMap = TensorF;

// Nonnegative (height, width) similarity activation map. Kept in double:
// map differences are small near convergence.
using ActivationMap = TensorD;

// Image pixels (3,H,W) in [-1,1] plus identity metadata.
struct ImageSample {
  std::string id;
  TensorF pixels;  // (3, H, W), values in [-1, 1]
  DomainId domain;
  PlaceId place;
  std::optional<Pose> pose;
  Split split = Split::train;
};

// Descriptor line of a manifest; pixels are loaded on demand.
struct ManifestRecord {
  std::string id;
  std::string image_path;
  DomainId domain;
  PlaceId place;
  std::optional<Pose> pose;
  Split split = Split::train;
};

struct Manifest {
  std::vector<ManifestRecord> records;
  std::vector<std::string> domain_names;
  int image_height = 0;
  int image_width = 0;

  int n_domains() const { return static_cast<int>(domain_names.size()); }
  std::vector<const ManifestRecord*> split_records(Split s) const;
};

// Parses and validates a manifest file. Record order is preserved; every
// validation failure names the offending line.
Manifest load_manifest(const std::string& path);

// Writes the normalized form (load followed by save is byte-stable).
void save_manifest(const Manifest& m, const std::string& path);

// Loads the pixels for a record, relative paths resolved against the
// manifest's directory.
ImageSample load_image_sample(const Manifest& m, const ManifestRecord& rec,
                              const std::string& manifest_dir);

// Reverses pixel columns; metadata preserved except the id gains a "#flip"
// suffix. Involution on pixels.
ImageSample flip_horizontal(const ImageSample& img);

}  // namespace disam
