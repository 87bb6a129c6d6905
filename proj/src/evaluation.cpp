#include "disam/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "disam/errors.hpp"

namespace disam {
namespace evaluation {

namespace {

constexpr double kRadToDeg = 180.0 / M_PI;

void check_unit(const Pose& p) {
  if (std::abs(p.quat_norm() - 1.0) > 1e-3)
    throw NonUnitQuaternion("quaternion norm " + std::to_string(p.quat_norm()) + " is not unit");
}

bool within(const PoseError& e, const ErrorThreshold& t) {
  return e.position_m <= t.max_position_m && e.angle_deg <= t.max_angle_deg;
}

std::vector<double> recall_curve(const std::vector<RankedList>& results,
                                 const std::function<bool(const std::string&, const std::string&)>& match,
                                 int n_max) {
  if (n_max < 1) throw InvalidConfig("recall N must be >= 1");
  std::vector<double> curve(static_cast<size_t>(n_max), 0.0);
  for (const RankedList& r : results) {
    int first_hit = -1;
    const int depth = std::min<int>(n_max, static_cast<int>(r.db_ids.size()));
    for (int n = 0; n < depth; ++n) {
      if (match(r.query_id, r.db_ids[static_cast<size_t>(n)])) {
        first_hit = n;
        break;
      }
    }
    if (first_hit >= 0)
      for (int n = first_hit; n < n_max; ++n) curve[static_cast<size_t>(n)] += 1.0;
  }
  for (double& v : curve) v /= results.empty() ? 1.0 : static_cast<double>(results.size());
  // Monotone by construction; keep the guard as an executable invariant.
  for (size_t i = 1; i < curve.size(); ++i)
    if (curve[i] < curve[i - 1]) throw Error("recall curve is not nondecreasing");
  return curve;
}

}  // namespace

PoseError pose_error(const Pose& a, const Pose& b) {
  check_unit(a);
  check_unit(b);
  PoseError e;
  double d2 = 0;
  for (int i = 0; i < 3; ++i) {
    const double d = a.position[i] - b.position[i];
    d2 += d * d;
  }
  e.position_m = std::sqrt(d2);
  double dot = 0;
  for (int i = 0; i < 4; ++i) dot += a.quaternion[i] * b.quaternion[i];
  e.angle_deg = 2.0 * std::acos(std::min(1.0, std::abs(dot))) * kRadToDeg;
  return e;
}

EvalReport localize_percentages(const std::vector<Prediction>& predictions,
                                const std::map<std::string, Pose>& ground_truth,
                                const std::vector<ErrorThreshold>& thresholds,
                                const std::map<std::string, std::string>* condition_of) {
  EvalReport report;
  report.n_queries = static_cast<int>(predictions.size());

  std::vector<PoseError> errors;
  std::vector<int> condition_idx(predictions.size(), -1);
  std::map<std::string, int> cond_index;
  errors.reserve(predictions.size());
  for (size_t q = 0; q < predictions.size(); ++q) {
    const auto& p = predictions[q];
    const auto it = ground_truth.find(p.query_id);
    if (it == ground_truth.end())
      throw MissingGroundTruth("no ground-truth pose for query '" + p.query_id + "'");
    errors.push_back(pose_error(p.pose, it->second));
    if (condition_of) {
      const auto c = condition_of->find(p.query_id);
      const std::string name = c == condition_of->end() ? "?" : c->second;
      auto [ci, inserted] = cond_index.try_emplace(name, static_cast<int>(cond_index.size()));
      condition_idx[q] = ci->second;
      if (inserted) {
        report.condition_names.push_back(name);
        report.condition_counts.push_back(0);
      }
      ++report.condition_counts[static_cast<size_t>(ci->second)];
    }
  }

  for (const ErrorThreshold& t : thresholds) {
    if (!(t.max_position_m > 0) || !(t.max_angle_deg > 0))
      throw InvalidConfig("pose error thresholds must be positive");
    EvalReport::ThresholdRow row;
    row.threshold = t;
    int hits = 0;
    std::vector<int> cond_hits(report.condition_names.size(), 0);
    for (size_t q = 0; q < errors.size(); ++q) {
      if (within(errors[q], t)) {
        ++hits;
        if (condition_idx[q] >= 0) ++cond_hits[static_cast<size_t>(condition_idx[q])];
      }
    }
    row.percent = predictions.empty() ? 0.0 : 100.0 * hits / static_cast<double>(predictions.size());
    for (size_t c = 0; c < cond_hits.size(); ++c)
      row.per_condition.push_back(100.0 * cond_hits[c] /
                                  std::max(1, report.condition_counts[c]));
    report.rows.push_back(std::move(row));
  }

  // Looser thresholds can only admit more queries.
  for (size_t a = 0; a < report.rows.size(); ++a)
    for (size_t b = 0; b < report.rows.size(); ++b) {
      const auto& ta = report.rows[a].threshold;
      const auto& tb = report.rows[b].threshold;
      if (ta.max_position_m <= tb.max_position_m && ta.max_angle_deg <= tb.max_angle_deg)
        if (report.rows[a].percent > report.rows[b].percent + 1e-9)
          throw Error("percentage monotonicity violated across thresholds");
    }
  return report;
}

std::vector<double> recall_at_n(const std::vector<RankedList>& results,
                                const std::map<std::string, PlaceId>& query_place,
                                const std::map<std::string, PlaceId>& db_place, int n_max) {
  auto match = [&](const std::string& q, const std::string& db) {
    const auto qi = query_place.find(q);
    if (qi == query_place.end()) throw MissingPlaceLabel("no place label for query '" + q + "'");
    const auto di = db_place.find(db);
    if (di == db_place.end()) throw MissingPlaceLabel("no place label for db entry '" + db + "'");
    return qi->second == di->second;
  };
  return recall_curve(results, match, n_max);
}

std::vector<double> recall_at_n_radius(const std::vector<RankedList>& results,
                                       const std::map<std::string, Pose>& query_pose,
                                       const std::map<std::string, Pose>& db_pose, double radius_m,
                                       int n_max) {
  auto match = [&](const std::string& q, const std::string& db) {
    const auto qi = query_pose.find(q);
    if (qi == query_pose.end()) throw MissingPlaceLabel("no pose for query '" + q + "'");
    const auto di = db_pose.find(db);
    if (di == db_pose.end()) throw MissingPlaceLabel("no pose for db entry '" + db + "'");
    double d2 = 0;
    for (int i = 0; i < 3; ++i) {
      const double d = qi->second.position[i] - di->second.position[i];
      d2 += d * d;
    }
    return std::sqrt(d2) <= radius_m;
  };
  return recall_curve(results, match, n_max);
}

std::vector<ErrorThreshold> parse_thresholds(const std::string& spec) {
  std::vector<ErrorThreshold> out;
  std::istringstream groups(spec);
  std::string group;
  while (std::getline(groups, group, ';')) {
    if (group.empty()) continue;
    const auto comma = group.find(',');
    if (comma == std::string::npos)
      throw InvalidConfig("bad threshold '" + group + "', expected 'meters,degrees'");
    ErrorThreshold t;
    t.max_position_m = std::stod(group.substr(0, comma));
    t.max_angle_deg = std::stod(group.substr(comma + 1));
    out.push_back(t);
  }
  if (out.empty()) throw InvalidConfig("no thresholds in '" + spec + "'");
  return out;
}

TensorF sam_overlay(const TensorF& pixels, const ActivationMap& map) {
  if (pixels.ndim() != 3 || pixels.dim(0) != 3)
    throw ShapeMismatch("sam_overlay expects (3,H,W) pixels");
  const int h = pixels.dim(1), w = pixels.dim(2);
  const int mh = map.dim(0), mw = map.dim(1);
  double peak = 0;
  for (int64_t i = 0; i < map.numel(); ++i) peak = std::max(peak, map[i]);
  TensorF out(pixels.shape());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int my = std::min(mh - 1, y * mh / h);
      const int mx = std::min(mw - 1, x * mw / w);
      const double a = peak > 0 ? map[my * mw + mx] / peak : 0.0;  // 0..1 heat
      // blend toward a red-yellow ramp
      const float heat[3] = {static_cast<float>(2 * a - 1), static_cast<float>(2 * a * a - 1),
                             -1.0f};
      for (int c = 0; c < 3; ++c) {
        const float v = 0.5f * pixels.at(c, y, x) + 0.5f * heat[c];
        out.at(c, y, x) = std::clamp(v, -1.0f, 1.0f);
      }
    }
  return out;
}

}  // namespace evaluation
}  // namespace disam
