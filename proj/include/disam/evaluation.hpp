#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "disam/datamodel.hpp"

namespace disam {
namespace evaluation {

struct ErrorThreshold {
  double max_position_m = 0;
  double max_angle_deg = 0;
};

// Position error in meters, rotation error in degrees (quaternion geodesic,
// sign-invariant).
struct PoseError {
  double position_m = 0;
  double angle_deg = 0;
};
PoseError pose_error(const Pose& a, const Pose& b);

struct Prediction {
  std::string query_id;
  Pose pose;
};

struct EvalReport {
  struct ThresholdRow {
    ErrorThreshold threshold;
    double percent = 0;                      // over all queries
    std::vector<double> per_condition;       // aligned with condition_names
  };
  std::vector<ThresholdRow> rows;
  std::vector<std::string> condition_names;
  std::vector<int> condition_counts;
  std::vector<double> recall_curve;  // recall@1..recall@N, when computed
  int n_queries = 0;
};

// Percentage of queries whose position AND angle errors are within each
// threshold. Optional condition labels produce a per-condition breakdown.
EvalReport localize_percentages(const std::vector<Prediction>& predictions,
                                const std::map<std::string, Pose>& ground_truth,
                                const std::vector<ErrorThreshold>& thresholds,
                                const std::map<std::string, std::string>* condition_of = nullptr);

struct RankedList {
  std::string query_id;
  std::vector<std::string> db_ids;  // best first
};

// recall@N = fraction of queries with at least one matching entry in the
// top N. `same_place` decides matches (place-id equality, or a radius rule
// for pose-labeled data).
std::vector<double> recall_at_n(const std::vector<RankedList>& results,
                                const std::map<std::string, PlaceId>& query_place,
                                const std::map<std::string, PlaceId>& db_place, int n_max);

std::vector<double> recall_at_n_radius(const std::vector<RankedList>& results,
                                       const std::map<std::string, Pose>& query_pose,
                                       const std::map<std::string, Pose>& db_pose, double radius_m,
                                       int n_max);

std::vector<ErrorThreshold> parse_thresholds(const std::string& spec);  // "0.25,2;0.5,5"

// Renders an activation map as a heat overlay on top of the image (nearest
// upsampling, red-hot colormap); output is a (3,H,W) raster in [-1,1].
TensorF sam_overlay(const TensorF& pixels, const ActivationMap& map);

}  // namespace evaluation
}  // namespace disam
