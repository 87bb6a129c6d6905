#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "disam/evaluation.hpp"
#include "test_util.hpp"

using namespace disam;
using namespace disam::evaluation;

namespace {

Pose make_pose(double x, double y, double z, double qw, double qx, double qy, double qz) {
  Pose p;
  p.position[0] = x;
  p.position[1] = y;
  p.position[2] = z;
  p.quaternion[0] = qw;
  p.quaternion[1] = qx;
  p.quaternion[2] = qy;
  p.quaternion[3] = qz;
  return p;
}

Pose random_pose(Rng& rng) {
  double q[4];
  double n2 = 0;
  for (double& v : q) {
    v = rng.normal();
    n2 += v * v;
  }
  const double n = std::sqrt(n2);
  return make_pose(rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-5, 5), q[0] / n,
                   q[1] / n, q[2] / n, q[3] / n);
}

std::string pct2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

TEST_CASE("pose error basics") {
  const Pose a = make_pose(1, 2, 3, 1, 0, 0, 0);
  const PoseError zero = pose_error(a, a);
  CHECK(zero.position_m == 0.0);
  CHECK(zero.angle_deg == 0.0);

  const Pose b = make_pose(1.3, 2, 3, 1, 0, 0, 0);
  const PoseError trans = pose_error(a, b);
  CHECK(trans.position_m == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(trans.angle_deg == 0.0);

  // 10 degrees about z: q = (cos5, 0, 0, sin5)
  const double half = 5.0 * M_PI / 180.0;
  const Pose rot = make_pose(1, 2, 3, std::cos(half), 0, 0, std::sin(half));
  const PoseError re = pose_error(a, rot);
  CHECK(re.position_m == 0.0);
  CHECK(re.angle_deg == doctest::Approx(10.0).epsilon(1e-6));

  CHECK_THROWS_AS(pose_error(a, make_pose(0, 0, 0, 2, 0, 0, 0)), NonUnitQuaternion);
}

TEST_CASE("pose error is symmetric and sign-invariant") {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const Pose a = random_pose(rng);
    Pose b = random_pose(rng);
    const PoseError ab = pose_error(a, b);
    const PoseError ba = pose_error(b, a);
    CHECK(ab.position_m == doctest::Approx(ba.position_m).epsilon(1e-12));
    CHECK(ab.angle_deg == doctest::Approx(ba.angle_deg).epsilon(1e-9));

    for (double& v : b.quaternion) v = -v;  // q and -q are the same rotation
    const PoseError flipped = pose_error(a, b);
    CHECK(flipped.angle_deg == doctest::Approx(ab.angle_deg).epsilon(1e-9));
  }
}

TEST_CASE("pose error matches an independent recomputation on 1000 pairs") {
  Rng rng(2);
  for (int t = 0; t < 1000; ++t) {
    const Pose a = random_pose(rng);
    const Pose b = random_pose(rng);
    const PoseError got = pose_error(a, b);
    double d2 = 0;
    for (int i = 0; i < 3; ++i)
      d2 += (a.position[i] - b.position[i]) * (a.position[i] - b.position[i]);
    double dot = 0;
    for (int i = 0; i < 4; ++i) dot += a.quaternion[i] * b.quaternion[i];
    const double want_angle = 2 * std::acos(std::min(1.0, std::abs(dot))) * 180.0 / M_PI;
    CHECK(std::abs(got.position_m - std::sqrt(d2)) <= 1e-9);
    CHECK(std::abs(got.angle_deg - want_angle) <= 1e-9);
  }
}

TEST_CASE("worked localization example: 33.33 / 66.67 / 66.67") {
  const Pose origin = make_pose(0, 0, 0, 1, 0, 0, 0);
  auto rotated = [&](double deg, double dx) {
    const double half = deg / 2 * M_PI / 180.0;
    return make_pose(dx, 0, 0, std::cos(half), 0, 0, std::sin(half));
  };
  std::vector<Prediction> preds = {{"q0", rotated(1.0, 0.1)},
                                   {"q1", rotated(3.0, 0.4)},
                                   {"q2", rotated(20.0, 6.0)}};
  std::map<std::string, Pose> gt = {{"q0", origin}, {"q1", origin}, {"q2", origin}};
  const auto report = localize_percentages(preds, gt, parse_thresholds("0.25,2;0.5,5;5,10"));
  REQUIRE(report.rows.size() == 3);
  CHECK(pct2(report.rows[0].percent) == "33.33");
  CHECK(pct2(report.rows[1].percent) == "66.67");
  CHECK(pct2(report.rows[2].percent) == "66.67");

  // exact predictions localize everywhere
  std::vector<Prediction> exact = {{"q0", origin}, {"q1", origin}, {"q2", origin}};
  const auto all = localize_percentages(exact, gt, parse_thresholds("0.25,2;0.5,5"));
  for (const auto& row : all.rows) CHECK(row.percent == 100.0);

  // permutation invariance
  std::vector<Prediction> shuffled = {preds[2], preds[0], preds[1]};
  const auto r2 = localize_percentages(shuffled, gt, parse_thresholds("0.25,2;0.5,5;5,10"));
  for (size_t i = 0; i < 3; ++i) CHECK(r2.rows[i].percent == report.rows[i].percent);

  // missing ground truth is an error
  std::vector<Prediction> missing = {{"nope", origin}};
  CHECK_THROWS_AS(localize_percentages(missing, gt, parse_thresholds("0.25,2")),
                  MissingGroundTruth);
}

TEST_CASE("per-condition breakdown") {
  const Pose origin = make_pose(0, 0, 0, 1, 0, 0, 0);
  const Pose far = make_pose(100, 0, 0, 1, 0, 0, 0);
  std::vector<Prediction> preds = {{"a", origin}, {"b", far}};
  std::map<std::string, Pose> gt = {{"a", origin}, {"b", origin}};
  std::map<std::string, std::string> cond = {{"a", "day"}, {"b", "night"}};
  const auto r = localize_percentages(preds, gt, parse_thresholds("0.5,5"), &cond);
  REQUIRE(r.condition_names.size() == 2);
  const size_t day = r.condition_names[0] == "day" ? 0 : 1;
  CHECK(r.rows[0].per_condition[day] == 100.0);
  CHECK(r.rows[0].per_condition[1 - day] == 0.0);
}

TEST_CASE("recall@N: fixed-rank cases") {
  std::map<std::string, PlaceId> qp = {{"q", PlaceId{7}}};
  std::map<std::string, PlaceId> dp = {
      {"d0", PlaceId{1}}, {"d1", PlaceId{2}}, {"d2", PlaceId{7}}, {"d3", PlaceId{7}}};

  {
    std::vector<RankedList> res = {{"q", {"d2", "d0", "d1"}}};
    const auto curve = recall_at_n(res, qp, dp, 3);
    CHECK(curve == std::vector<double>{1.0, 1.0, 1.0});
  }
  {
    std::vector<RankedList> res = {{"q", {"d0", "d1", "d2", "d3"}}};
    const auto curve = recall_at_n(res, qp, dp, 4);
    CHECK(curve == std::vector<double>{0.0, 0.0, 1.0, 1.0});
  }
  {
    std::vector<RankedList> res = {{"q", {"d0", "missing"}}};
    CHECK_THROWS_AS(recall_at_n(res, qp, dp, 2), MissingPlaceLabel);
  }
}

TEST_CASE("recall@N under random rankings approximates N/D") {
  // D database entries, exactly 1 correct; a uniformly random ranking puts
  // the correct one in the top N with probability N/D.
  Rng rng(3);
  const int d = 20;
  const int trials = 4000;
  std::map<std::string, PlaceId> qp, dp;
  qp["q"] = PlaceId{0};
  std::vector<std::string> ids;
  for (int i = 0; i < d; ++i) {
    ids.push_back("d" + std::to_string(i));
    dp[ids.back()] = PlaceId{i};  // only d0 matches place 0
  }
  std::vector<double> acc(static_cast<size_t>(d), 0.0);
  for (int t = 0; t < trials; ++t) {
    std::vector<std::string> shuffled = ids;
    rng.shuffle(shuffled.begin(), shuffled.end());
    std::vector<RankedList> res = {{"q", shuffled}};
    const auto curve = recall_at_n(res, qp, dp, d);
    for (int n = 0; n < d; ++n) acc[static_cast<size_t>(n)] += curve[static_cast<size_t>(n)];
  }
  for (int n = 1; n <= d; ++n) {
    const double p = static_cast<double>(n) / d;
    const double mean = acc[static_cast<size_t>(n - 1)] / trials;
    const double sigma = std::sqrt(p * (1 - p) / trials);
    CHECK(std::abs(mean - p) <= 3.0 * sigma + 1e-12);
  }
}

TEST_CASE("threshold parsing") {
  const auto ts = parse_thresholds("0.25,2;0.5,5;5,10");
  REQUIRE(ts.size() == 3);
  CHECK(ts[0].max_position_m == 0.25);
  CHECK(ts[2].max_angle_deg == 10.0);
  CHECK_THROWS_AS(parse_thresholds(""), InvalidConfig);
  CHECK_THROWS_AS(parse_thresholds("abc"), InvalidConfig);
}

TEST_CASE("sam overlay stays a valid raster") {
  Rng rng(4);
  const TensorF img = testutil::random_tensor_f(rng, {3, 16, 16});
  ActivationMap map({4, 4});
  for (int64_t i = 0; i < map.numel(); ++i) map[i] = rng.uniform(0.0, 2.0);
  const TensorF out = sam_overlay(img, map);
  CHECK(out.shape() == img.shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    CHECK(out[i] <= 1.0f);
    CHECK(out[i] >= -1.0f);
  }
}
