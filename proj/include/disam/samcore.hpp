#pragma once

#include <atomic>
#include <cstdint>
#include <vector>

#include "disam/datamodel.hpp"
#include "disam/tensor.hpp"

namespace disam {
namespace samcore {

// All math in this module runs in double regardless of network precision;
// activation-map differences are small near convergence.

inline constexpr double kNormEpsilon = 1e-8;

// Mean channel-wise cosine similarity Y in [-1, 1].
struct SimilarityScore {
  double value = 0.0;
};

// Per-channel activation weights (one scalar per feature channel).
struct SamWeights {
  std::vector<double> data;
};

// Y = (1/n) sum_k <z_i^k, z_j^k> / (|z_i^k| |z_j^k| + eps).
SimilarityScore mean_channel_cosine(const TensorD& z_i, const TensorD& z_j);
SimilarityScore mean_channel_cosine(const TensorF& z_i, const TensorF& z_j);

// Analytic gradient of Y w.r.t. the first argument:
//   g^{kpq} = (1/n) [ z_j^{kpq} / (|z_i^k||z_j^k| + eps)
//                     - cos_k * z_i^{kpq} / (|z_i^k|^2 + eps) ].
// The gradient w.r.t. the second argument is cosine_gradient(z_j, z_i).
TensorD cosine_gradient(const TensorD& z_i, const TensorD& z_j);

// Per-channel weights: omega^k = sum_{p,q} g^{kpq}. Asymmetric in its
// arguments; swap them for the counterpart.
SamWeights sam_weights(const TensorD& z_i, const TensorD& z_j);
SamWeights sam_weights(const TensorF& z_i, const TensorF& z_j);

// L^{pq} = max(0, sum_k omega^k z_i^{kpq}). Not symmetric in (z_i, z_j).
ActivationMap activation_map(const TensorD& z_i, const TensorD& z_j);
ActivationMap activation_map(const TensorF& z_i, const TensorF& z_j);

// Reverse-mode derivative of activation_map for loss training: given
// upstream = dLoss/dL, returns dLoss/dz_i and dLoss/dz_j. Exact derivative
// of the implementation above (including the epsilon guards), validated by
// finite differences in the test suite.
struct MapGradients {
  TensorD g_first;   // w.r.t. z_i (the mapped feature)
  TensorD g_second;  // w.r.t. z_j (the reference)
};
MapGradients activation_map_vjp(const TensorD& z_i, const TensorD& z_j,
                                const TensorD& upstream);

// Call counters used by trainer tests to assert which stage evaluates what.
struct Counters {
  std::atomic<uint64_t> activation_map_calls{0};
  std::atomic<uint64_t> cosine_calls{0};
};
Counters& counters();
void reset_counters();

}  // namespace samcore
}  // namespace disam
