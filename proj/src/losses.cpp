#include "disam/losses.hpp"

#include <cmath>
#include <limits>

#include "disam/errors.hpp"
#include "disam/samcore.hpp"

namespace disam {
namespace losses {

namespace {

template <typename T>
double mean_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("loss operands", a, b);
  double acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    acc += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  return acc / static_cast<double>(a.numel());
}

template <typename T>
double rms_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("loss operands", a, b);
  double acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(a.numel()));
}

template <typename T>
double l2_distance_impl(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("distance operands", a, b);
  double acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

template <typename T>
size_t hard_negative_impl(const Tensor<T>& anchor, const std::vector<Tensor<T>>& candidates) {
  if (candidates.empty()) throw EmptyCandidates("hard negative selection over empty pool");
  size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < candidates.size(); ++i) {
    const double d = l2_distance_impl(anchor, candidates[i]);
    if (d < best_d) {  // strict: ties keep the lowest index
      best_d = d;
      best = i;
    }
  }
  return best;
}

}  // namespace

void LossWeights::validate() const {
  const double nonneg[] = {lambda_cyc,      lambda_fcl, lambda_sam, lambda_trip_fcl,
                           lambda_trip_sam, alpha_f,    alpha_s,    ramp_fraction};
  for (double v : nonneg)
    if (!(v >= 0)) throw InvalidConfig("loss weights must be nonnegative");
  if (ramp_fraction > 1.0) throw InvalidConfig("ramp_fraction must be in [0,1]");
  if (!(m_f > 0) || !(m_s > 0)) throw NonpositiveMargin("triplet margins must be > 0");
}

const LossTerm* LossReport::find(const std::string& name) const {
  for (const auto& t : terms)
    if (t.name == name) return &t;
  return nullptr;
}

LossReport LossReport::from_terms(std::vector<LossTerm> terms) {
  LossReport r;
  r.terms = std::move(terms);
  r.total = 0;
  for (const auto& t : r.terms) r.total += t.weight * t.value;
  return r;
}

double cycle_loss(const TensorF& x, const TensorF& x_rec) { return mean_abs_diff(x, x_rec); }

double gan_loss_generator(const TensorF& fake_scores) {
  double acc = 0;
  for (int64_t i = 0; i < fake_scores.numel(); ++i) {
    const double d = static_cast<double>(fake_scores[i]) - 1.0;
    acc += d * d;
  }
  return acc / static_cast<double>(fake_scores.numel());
}

double gan_loss_discriminator(const TensorF& real_scores, const TensorF& fake_scores) {
  double acc_r = 0;
  for (int64_t i = 0; i < real_scores.numel(); ++i) {
    const double d = static_cast<double>(real_scores[i]) - 1.0;
    acc_r += d * d;
  }
  double acc_f = 0;
  for (int64_t i = 0; i < fake_scores.numel(); ++i) {
    const double d = static_cast<double>(fake_scores[i]);
    acc_f += d * d;
  }
  return acc_r / static_cast<double>(real_scores.numel()) +
         acc_f / static_cast<double>(fake_scores.numel());
}

double fcl_loss(const TensorF& z, const TensorF& z_cross, Stage stage) {
  const double l2 = rms_diff(z, z_cross);
  if (stage == Stage::coarse) return l2;
  return l2 + (1.0 - samcore::mean_channel_cosine(z, z_cross).value);
}

double sam_loss(const ActivationMap& map_self, const ActivationMap& map_cross) {
  return rms_diff(map_self, map_cross);
}

double l2_distance(const TensorF& a, const TensorF& b) { return l2_distance_impl(a, b); }
double l2_distance(const TensorD& a, const TensorD& b) { return l2_distance_impl(a, b); }

size_t hard_negative_select(const TensorF& anchor, const std::vector<TensorF>& candidates) {
  return hard_negative_impl(anchor, candidates);
}
size_t hard_negative_select(const TensorD& anchor, const std::vector<TensorD>& candidates) {
  return hard_negative_impl(anchor, candidates);
}

double adaptive_triplet(double d_pos, double d_neg, double margin, double alpha) {
  if (!(margin > 0)) throw NonpositiveMargin("adaptive_triplet margin must be > 0");
  const double denom = d_pos + margin * std::exp(-alpha * d_pos);
  return std::max(0.0, 1.0 - d_neg / denom);
}

namespace {

LossReport stage_total(const DirectionTerms& ij, const DirectionTerms& ji, const LossWeights& w,
                       Stage stage) {
  w.validate();
  const double r = w.ramp_fraction;
  std::vector<LossTerm> terms;
  terms.push_back({"gan", ij.gan_gen + ji.gan_gen, 1.0});  // adversarial weight is not ramped
  terms.push_back({"cycle", ij.cycle + ji.cycle, w.lambda_cyc * r});
  terms.push_back({"fcl", ij.fcl + ji.fcl, w.lambda_fcl * r});
  if (stage == Stage::fine)
    terms.push_back({"sam", ij.sam + ji.sam, w.lambda_sam * r});
  terms.push_back({"triplet_fcl", ij.triplet_fcl + ji.triplet_fcl, w.lambda_trip_fcl * r});
  if (stage == Stage::fine)
    terms.push_back({"triplet_sam", ij.triplet_sam + ji.triplet_sam, w.lambda_trip_sam * r});
  return LossReport::from_terms(std::move(terms));
}

}  // namespace

LossReport coarse_total(const DirectionTerms& ij, const DirectionTerms& ji, const LossWeights& w) {
  return stage_total(ij, ji, w, Stage::coarse);
}

LossReport fine_total(const DirectionTerms& ij, const DirectionTerms& ji, const LossWeights& w) {
  return stage_total(ij, ji, w, Stage::fine);
}

}  // namespace losses
}  // namespace disam
