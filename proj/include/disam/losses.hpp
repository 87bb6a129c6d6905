#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "disam/datamodel.hpp"
#include "disam/tensor.hpp"

namespace disam {
namespace losses {

// Maximum loss weights and triplet hyperparameters. ramp_fraction is the
// multiplier currently applied to every non-adversarial weight; the trainer
// raises it linearly from 0 to 1 over the ramp epochs.
struct LossWeights {
  double lambda_cyc = 10.0;
  double lambda_fcl = 0.1;
  double lambda_sam = 1000.0;
  double lambda_trip_fcl = 1.0;
  double lambda_trip_sam = 1.0;
  double m_f = 5.0;
  double alpha_f = 2.0;
  double m_s = 0.1;
  double alpha_s = 1000.0;
  double ramp_fraction = 1.0;

  void validate() const;  // throws InvalidConfig / NonpositiveMargin
};

struct LossTerm {
  std::string name;
  double value = 0;   // raw, unweighted
  double weight = 0;  // effective multiplier (lambda * ramp)
};

struct LossReport {
  std::vector<LossTerm> terms;
  double total = 0;

  const LossTerm* find(const std::string& name) const;
  static LossReport from_terms(std::vector<LossTerm> terms);
};

// Mean absolute difference between an image and its reconstruction.
double cycle_loss(const TensorF& x, const TensorF& x_rec);

// Least-squares adversarial objectives over patch-score grids. The
// discriminator drives real scores to 1 and fake scores to 0; the generator
// side is the non-saturating counterpart mean((fake-1)^2).
double gan_loss_generator(const TensorF& fake_scores);
double gan_loss_discriminator(const TensorF& real_scores, const TensorF& fake_scores);

// Feature consistency between z = E_i(x) and z_cross = E_j(D_j(E_i(x))).
// Coarse stage: element-mean L2 (RMS of the difference). Fine stage adds
// (1 - mean channel cosine).
double fcl_loss(const TensorF& z, const TensorF& z_cross, Stage stage);

// Element-mean L2 between the two activation maps of a positive pair.
double sam_loss(const ActivationMap& map_self, const ActivationMap& map_cross);

// True (root-sum-square) L2 distance of flattened tensors; the metric used
// for triplet distances so the configured margins keep their scale.
double l2_distance(const TensorF& a, const TensorF& b);
double l2_distance(const TensorD& a, const TensorD& b);

// Index of the candidate closest to the anchor in l2_distance; ties break
// toward the lowest index.
size_t hard_negative_select(const TensorF& anchor, const std::vector<TensorF>& candidates);
size_t hard_negative_select(const TensorD& anchor, const std::vector<TensorD>& candidates);

// max(0, 1 - d_neg / (d_pos + m exp(-alpha d_pos))). Shared kernel for the
// feature-space and activation-map triplet losses.
double adaptive_triplet(double d_pos, double d_neg, double margin, double alpha);

// Raw per-direction terms entering the stage totals.
struct DirectionTerms {
  double gan_gen = 0;
  double cycle = 0;
  double fcl = 0;
  double triplet_fcl = 0;
  double sam = 0;          // fine stage only
  double triplet_sam = 0;  // fine stage only
};

LossReport coarse_total(const DirectionTerms& ij, const DirectionTerms& ji,
                        const LossWeights& w);
LossReport fine_total(const DirectionTerms& ij, const DirectionTerms& ji,
                      const LossWeights& w);

}  // namespace losses
}  // namespace disam
