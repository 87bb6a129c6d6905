#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "disam/samcore.hpp"
#include "test_util.hpp"

using namespace disam;
using samcore::activation_map;
using samcore::activation_map_vjp;
using samcore::cosine_gradient;
using samcore::kNormEpsilon;
using samcore::mean_channel_cosine;
using samcore::sam_weights;
using testutil::random_tensor;

namespace {

// Independent scalar transcription of the similarity score: plain nested
// loops, no shared helpers with the implementation.
double oracle_score(const TensorD& a, const TensorD& b) {
  const int n = a.dim(0), h = a.dim(1), w = a.dim(2);
  double y = 0.0;
  for (int k = 0; k < n; ++k) {
    double dot = 0.0, qa = 0.0, qb = 0.0;
    for (int p = 0; p < h; ++p)
      for (int q = 0; q < w; ++q) {
        dot += a.at(k, p, q) * b.at(k, p, q);
        qa += a.at(k, p, q) * a.at(k, p, q);
        qb += b.at(k, p, q) * b.at(k, p, q);
      }
    y += dot / (std::sqrt(qa) * std::sqrt(qb) + 1e-8);
  }
  return y / n;
}

// Scalar transcription of the weight/map chain for the oracle comparisons.
std::vector<double> oracle_weights(const TensorD& a, const TensorD& b) {
  const int n = a.dim(0), h = a.dim(1), w = a.dim(2);
  std::vector<double> omega(static_cast<size_t>(n), 0.0);
  for (int k = 0; k < n; ++k) {
    double dot = 0.0, qa = 0.0, qb = 0.0;
    for (int p = 0; p < h; ++p)
      for (int q = 0; q < w; ++q) {
        dot += a.at(k, p, q) * b.at(k, p, q);
        qa += a.at(k, p, q) * a.at(k, p, q);
        qb += b.at(k, p, q) * b.at(k, p, q);
      }
    const double denom = std::sqrt(qa) * std::sqrt(qb) + 1e-8;
    const double cos_k = dot / denom;
    double acc = 0.0;
    for (int p = 0; p < h; ++p)
      for (int q = 0; q < w; ++q)
        acc += (b.at(k, p, q) / denom - cos_k * a.at(k, p, q) / (qa + 1e-8)) / n;
    omega[static_cast<size_t>(k)] = acc;
  }
  return omega;
}

TensorD oracle_map(const TensorD& a, const TensorD& b) {
  const auto omega = oracle_weights(a, b);
  const int n = a.dim(0), h = a.dim(1), w = a.dim(2);
  TensorD map({h, w});
  for (int p = 0; p < h; ++p)
    for (int q = 0; q < w; ++q) {
      double u = 0.0;
      for (int k = 0; k < n; ++k) u += omega[static_cast<size_t>(k)] * a.at(k, p, q);
      map[p * w + q] = std::max(0.0, u);
    }
  return map;
}

}  // namespace

TEST_CASE("similarity score: self, negated, orthogonal") {
  Rng rng(11);
  TensorD z = random_tensor(rng, {6, 4, 4});
  CHECK(mean_channel_cosine(z, z).value >= 1.0 - 1e-6);
  CHECK(mean_channel_cosine(z, z).value <= 1.0 + 1e-9);

  TensorD neg = z;
  for (int64_t i = 0; i < neg.numel(); ++i) neg[i] = -neg[i];
  CHECK(mean_channel_cosine(z, neg).value <= -1.0 + 1e-6);

  // Per-channel orthogonal maps.
  TensorD a({4, 2, 2}), b({4, 2, 2});
  for (int k = 0; k < 4; ++k) {
    a.at(k, 0, 0) = 1.0;
    b.at(k, 0, 1) = 1.0;
  }
  CHECK(std::abs(mean_channel_cosine(a, b).value) <= 1e-9);
}

TEST_CASE("similarity score matches scalar oracle and stays bounded") {
  Rng rng(22);
  for (int trial = 0; trial < 50; ++trial) {
    TensorD a = random_tensor(rng, {4, 3, 3});
    TensorD b = random_tensor(rng, {4, 3, 3});
    const double got = mean_channel_cosine(a, b).value;
    CHECK(std::abs(got - oracle_score(a, b)) <= 1e-9);
    CHECK(std::abs(got) <= 1.0 + 1e-9);
  }
}

TEST_CASE("similarity score rejects mismatched shapes") {
  TensorD a({2, 3, 3}), b({2, 3, 4});
  CHECK_THROWS_AS(mean_channel_cosine(a, b), ShapeMismatch);
}

TEST_CASE("weights vanish at self-similarity (up to the norm guard)") {
  Rng rng(33);
  TensorD z = random_tensor(rng, {5, 4, 4});
  const auto w = sam_weights(z, z);
  for (double v : w.data) CHECK(std::abs(v) <= 1e-6);
}

TEST_CASE("analytic gradient agrees with central finite differences") {
  Rng rng(44);
  TensorD a = random_tensor(rng, {8, 5, 5});
  TensorD b = random_tensor(rng, {8, 5, 5});
  const TensorD g = cosine_gradient(a, b);
  const double step = 1e-4;
  double max_rel = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    TensorD ap = a, am = a;
    ap[i] += step;
    am[i] -= step;
    const double fd = (mean_channel_cosine(ap, b).value - mean_channel_cosine(am, b).value) / (2 * step);
    if (std::abs(g[i]) > 1e-8)
      max_rel = std::max(max_rel, std::abs(fd - g[i]) / std::abs(g[i]));
  }
  CHECK(max_rel < 1e-4);
}

TEST_CASE("scaling the first argument by c scales the weights by 1/c") {
  Rng rng(55);
  TensorD a = random_tensor(rng, {4, 4, 4});
  TensorD b = random_tensor(rng, {4, 4, 4});
  const auto w1 = sam_weights(a, b);
  const double c = 3.5;
  TensorD ac = a;
  for (int64_t i = 0; i < ac.numel(); ++i) ac[i] *= c;
  const auto wc = sam_weights(ac, b);
  for (size_t k = 0; k < w1.data.size(); ++k)
    CHECK(wc.data[k] == doctest::Approx(w1.data[k] / c).epsilon(1e-6));
}

TEST_CASE("activation map matches the scalar oracle") {
  Rng rng(66);
  for (int trial = 0; trial < 20; ++trial) {
    TensorD a = random_tensor(rng, {4, 3, 3});
    TensorD b = random_tensor(rng, {4, 3, 3});
    const ActivationMap got = activation_map(a, b);
    const TensorD want = oracle_map(a, b);
    REQUIRE(got.numel() == want.numel());
    for (int64_t i = 0; i < got.numel(); ++i)
      CHECK(std::abs(got[i] - want[i]) <= 1e-9);
  }
}

TEST_CASE("activation map properties: nonnegative, zero at self, asymmetric") {
  Rng rng(77);
  TensorD a = random_tensor(rng, {6, 5, 5});
  TensorD b = random_tensor(rng, {6, 5, 5});

  const ActivationMap m = activation_map(a, b);
  for (int64_t i = 0; i < m.numel(); ++i) CHECK(m[i] >= 0.0);

  const ActivationMap self = activation_map(a, a);
  for (int64_t i = 0; i < self.numel(); ++i) CHECK(self[i] <= 1e-6);

  // Regression: a fixed random pair must produce different maps in the two
  // argument orders.
  const ActivationMap rev = activation_map(b, a);
  double diff = 0.0;
  for (int64_t i = 0; i < m.numel(); ++i) diff += std::abs(m[i] - rev[i]);
  CHECK(diff > 1e-6);
}

TEST_CASE("single channel with everywhere-negative weight gives a zero map") {
  // One channel, a strictly positive, b = -a: omega < 0 and a > 0, so the
  // pre-ReLU sum is negative at every pixel.
  TensorD a({1, 2, 2}), b({1, 2, 2});
  for (int64_t i = 0; i < 4; ++i) {
    a[i] = 0.5 + 0.1 * static_cast<double>(i);
    b[i] = -a[i];
  }
  const ActivationMap m = activation_map(a, b);
  for (int64_t i = 0; i < m.numel(); ++i) CHECK(m[i] == 0.0);
}

TEST_CASE("zero-norm channel stays finite under the epsilon guard") {
  Rng rng(88);
  TensorD a = random_tensor(rng, {3, 4, 4});
  TensorD b = random_tensor(rng, {3, 4, 4});
  for (int i = 0; i < 16; ++i) a[i] = 0.0;  // kill channel 0 of a

  const double y = mean_channel_cosine(a, b).value;
  CHECK(std::isfinite(y));
  const TensorD g = cosine_gradient(a, b);
  CHECK(g.all_finite());
  const ActivationMap m = activation_map(a, b);
  CHECK(m.all_finite());
}

TEST_CASE("activation map reverse-mode gradients agree with finite differences") {
  Rng rng(99);
  TensorD a = random_tensor(rng, {4, 4, 4});
  TensorD b = random_tensor(rng, {4, 4, 4});
  TensorD weights = random_tensor(rng, {4, 4});  // fixed projection of the map

  auto loss = [&](const TensorD& x, const TensorD& y) {
    const ActivationMap m = activation_map(x, y);
    double acc = 0.0;
    for (int64_t i = 0; i < m.numel(); ++i) acc += weights[i] * m[i];
    return acc;
  };

  const auto grads = activation_map_vjp(a, b, weights);
  const double step = 1e-6;
  double max_abs_err = 0.0, scale = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    TensorD ap = a, am = a;
    ap[i] += step;
    am[i] -= step;
    const double fd = (loss(ap, b) - loss(am, b)) / (2 * step);
    max_abs_err = std::max(max_abs_err, std::abs(fd - grads.g_first[i]));
    scale = std::max(scale, std::abs(fd));

    TensorD bp = b, bm = b;
    bp[i] += step;
    bm[i] -= step;
    const double fd2 = (loss(a, bp) - loss(a, bm)) / (2 * step);
    max_abs_err = std::max(max_abs_err, std::abs(fd2 - grads.g_second[i]));
    scale = std::max(scale, std::abs(fd2));
  }
  CHECK(max_abs_err < 1e-6 * std::max(1.0, scale));
}
