#include "disam/samcore.hpp"

#include <cmath>

#include "disam/errors.hpp"

namespace disam {
namespace samcore {

namespace {

Counters g_counters;

struct ChannelStats {
  double s = 0;    // <a, b>
  double na2 = 0;  // |a|^2
  double nb2 = 0;  // |b|^2
  double sa = 0;   // sum a
  double sb = 0;   // sum b
};

// Sums are accumulated left to right in double so results are bit-equal to
// a plain scalar reference loop.
ChannelStats channel_stats(const TensorD& zi, const TensorD& zj, int k) {
  const int hw = zi.dim(1) * zi.dim(2);
  const double* a = zi.data() + static_cast<int64_t>(k) * hw;
  const double* b = zj.data() + static_cast<int64_t>(k) * hw;
  ChannelStats st;
  for (int i = 0; i < hw; ++i) {
    st.s += a[i] * b[i];
    st.na2 += a[i] * a[i];
    st.nb2 += b[i] * b[i];
    st.sa += a[i];
    st.sb += b[i];
  }
  return st;
}

void check_pair(const TensorD& zi, const TensorD& zj) {
  if (zi.ndim() != 3) throw ShapeMismatch("feature map must be (n,h,w), got " + zi.shape_str());
  require_same_shape("feature pair", zi, zj);
}

}  // namespace

Counters& counters() { return g_counters; }

void reset_counters() {
  g_counters.activation_map_calls = 0;
  g_counters.cosine_calls = 0;
}

SimilarityScore mean_channel_cosine(const TensorD& z_i, const TensorD& z_j) {
  check_pair(z_i, z_j);
  ++g_counters.cosine_calls;
  const int n = z_i.dim(0);
  double y = 0;
  for (int k = 0; k < n; ++k) {
    const ChannelStats st = channel_stats(z_i, z_j, k);
    const double denom = std::sqrt(st.na2) * std::sqrt(st.nb2) + kNormEpsilon;
    y += st.s / denom;
  }
  return SimilarityScore{y / n};
}

SimilarityScore mean_channel_cosine(const TensorF& z_i, const TensorF& z_j) {
  return mean_channel_cosine(z_i.cast<double>(), z_j.cast<double>());
}

TensorD cosine_gradient(const TensorD& z_i, const TensorD& z_j) {
  check_pair(z_i, z_j);
  const int n = z_i.dim(0);
  const int hw = z_i.dim(1) * z_i.dim(2);
  TensorD g(z_i.shape());
  for (int k = 0; k < n; ++k) {
    const ChannelStats st = channel_stats(z_i, z_j, k);
    const double denom = std::sqrt(st.na2) * std::sqrt(st.nb2) + kNormEpsilon;
    const double cos_k = st.s / denom;
    const double self = st.na2 + kNormEpsilon;
    const double* a = z_i.data() + static_cast<int64_t>(k) * hw;
    const double* b = z_j.data() + static_cast<int64_t>(k) * hw;
    double* gk = g.data() + static_cast<int64_t>(k) * hw;
    for (int i = 0; i < hw; ++i) gk[i] = (b[i] / denom - cos_k * a[i] / self) / n;
  }
  return g;
}

SamWeights sam_weights(const TensorD& z_i, const TensorD& z_j) {
  const TensorD g = cosine_gradient(z_i, z_j);
  const int n = z_i.dim(0);
  const int hw = z_i.dim(1) * z_i.dim(2);
  SamWeights w;
  w.data.resize(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) {
    double acc = 0;
    const double* gk = g.data() + static_cast<int64_t>(k) * hw;
    for (int i = 0; i < hw; ++i) acc += gk[i];
    w.data[static_cast<size_t>(k)] = acc;
  }
  return w;
}

SamWeights sam_weights(const TensorF& z_i, const TensorF& z_j) {
  return sam_weights(z_i.cast<double>(), z_j.cast<double>());
}

ActivationMap activation_map(const TensorD& z_i, const TensorD& z_j) {
  check_pair(z_i, z_j);
  ++g_counters.activation_map_calls;
  const SamWeights w = sam_weights(z_i, z_j);
  const int n = z_i.dim(0);
  const int hw = z_i.dim(1) * z_i.dim(2);
  ActivationMap map({z_i.dim(1), z_i.dim(2)});
  for (int k = 0; k < n; ++k) {
    const double wk = w.data[static_cast<size_t>(k)];
    const double* a = z_i.data() + static_cast<int64_t>(k) * hw;
    for (int i = 0; i < hw; ++i) map[i] += wk * a[i];
  }
  for (int i = 0; i < hw; ++i) map[i] = std::max(0.0, map[i]);
  return map;
}

ActivationMap activation_map(const TensorF& z_i, const TensorF& z_j) {
  return activation_map(z_i.cast<double>(), z_j.cast<double>());
}

MapGradients activation_map_vjp(const TensorD& z_i, const TensorD& z_j,
                                const TensorD& upstream) {
  check_pair(z_i, z_j);
  ++g_counters.activation_map_calls;
  const int n = z_i.dim(0);
  const int hw = z_i.dim(1) * z_i.dim(2);
  if (upstream.numel() != hw)
    throw ShapeMismatch("upstream map gradient has wrong size " + upstream.shape_str());

  const SamWeights w = sam_weights(z_i, z_j);

  // Recompute the pre-ReLU sum to mask the upstream gradient.
  std::vector<double> pre(static_cast<size_t>(hw), 0.0);
  for (int k = 0; k < n; ++k) {
    const double wk = w.data[static_cast<size_t>(k)];
    const double* a = z_i.data() + static_cast<int64_t>(k) * hw;
    for (int i = 0; i < hw; ++i) pre[static_cast<size_t>(i)] += wk * a[i];
  }
  std::vector<double> gm(static_cast<size_t>(hw));
  for (int i = 0; i < hw; ++i)
    gm[static_cast<size_t>(i)] = pre[static_cast<size_t>(i)] > 0.0 ? upstream[i] : 0.0;

  MapGradients out;
  out.g_first = TensorD(z_i.shape());
  out.g_second = TensorD(z_i.shape());

  constexpr double kTinyNorm = 1e-12;
  for (int k = 0; k < n; ++k) {
    const ChannelStats st = channel_stats(z_i, z_j, k);
    const double na = std::max(std::sqrt(st.na2), kTinyNorm);
    const double nb = std::max(std::sqrt(st.nb2), kTinyNorm);
    const double d = na * nb + kNormEpsilon;
    const double self = st.na2 + kNormEpsilon;
    const double wk = w.data[static_cast<size_t>(k)];

    const double* a = z_i.data() + static_cast<int64_t>(k) * hw;
    const double* b = z_j.data() + static_cast<int64_t>(k) * hw;
    double* ga = out.g_first.data() + static_cast<int64_t>(k) * hw;
    double* gb = out.g_second.data() + static_cast<int64_t>(k) * hw;

    // c_k = sum_pq gm * a : sensitivity of the loss to omega^k.
    double ck = 0;
    for (int i = 0; i < hw; ++i) ck += gm[static_cast<size_t>(i)] * a[i];

    // omega^k = (1/n)(Sb/D - (s/D) Sa/Na); its gradients are affine in the
    // per-channel slices of z_i and z_j.
    const double aa = (-st.sb * nb / (na * d * d) + 2.0 * st.s * st.sa / (self * self * d) +
                       st.s * st.sa * nb / (na * self * d * d)) / n;
    const double ab = -(st.sa / (self * d)) / n;
    const double ac = -(st.s / (self * d)) / n;

    const double ba = (-st.sb * na / (nb * d * d) + st.s * st.sa * na / (nb * self * d * d)) / n;
    const double bb = -(st.sa / (self * d)) / n;
    const double bc = (1.0 / d) / n;

    for (int i = 0; i < hw; ++i) {
      ga[i] = gm[static_cast<size_t>(i)] * wk + ck * (aa * a[i] + ab * b[i] + ac);
      gb[i] = ck * (ba * b[i] + bb * a[i] + bc);
    }
  }
  return out;
}

}  // namespace samcore
}  // namespace disam
