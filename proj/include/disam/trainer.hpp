#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "disam/checkpoint.hpp"
#include "disam/datamodel.hpp"
#include "disam/losses.hpp"
#include "disam/network.hpp"
#include "disam/rng.hpp"

namespace disam {
namespace trainer {

enum class LrDecay { linear_to_zero };
enum class OptimizerKind { adam };
enum class MarginMode { adaptive, constant };
enum class NegativeMode { automatic, random_only, hard_only };

struct TrainSchedule {
  int total_epochs = 200;
  double lr_initial = 2e-4;
  LrDecay lr_decay = LrDecay::linear_to_zero;
  int ramp_epochs = 50;
  int hard_negative_start_epoch = 100;
  int pool_size = 10;
  int batch_size = 1;
  OptimizerKind optimizer = OptimizerKind::adam;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  uint64_t seed = 0;
  int checkpoint_every = 25;
  int steps_per_epoch = 0;  // 0: ceil(n_train / (2 * batch_size))

  void validate() const;
};

// lr decays linearly from lr_initial at epoch 0 toward 0 at total_epochs.
double current_lr(const TrainSchedule& s, int epoch);
// Non-adversarial loss weights ramp linearly from 0 to their maxima.
double current_ramp(const TrainSchedule& s, int epoch);

// Uniform over ordered pairs (i, j), i != j.
std::pair<DomainId, DomainId> sample_domain_pair(int n_domains, Rng& rng);

// Picks the negative from a candidate pool: uniform before the
// hard-negative start epoch, closest-to-anchor afterwards.
size_t make_negative(const std::vector<FeatureMap>& encoded_pool,
                     const FeatureMap& translated_anchor, int epoch, const TrainSchedule& sched,
                     Rng& rng, NegativeMode mode = NegativeMode::automatic);

class Adam {
 public:
  Adam(double beta1, double beta2) : beta1_(beta1), beta2_(beta2) {}

  void step(const std::vector<net::NamedParam<float>>& params, double lr);
  void save(const std::string& prefix, net::CheckpointExtra& extra) const;
  void load(const std::string& prefix, const net::CheckpointExtra& extra);

 private:
  struct Moments {
    TensorF m, v;
    int64_t t = 0;
  };
  std::map<std::string, Moments> state_;
  double beta1_, beta2_;
};

struct TrainOptions {
  MarginMode margin = MarginMode::adaptive;
  NegativeMode negatives = NegativeMode::automatic;
  double adversarial_weight = 1.0;  // generator-side GAN weight (1 in Eqs. of record)
};

// One element of a step batch; flips are already applied upstream (exactly
// one of x_i / x_j, and pool members complement the anchor's flip state).
struct StepSample {
  TensorF x_i, x_j;
  std::vector<TensorF> pool_j;  // negative candidates for direction i->j
  std::vector<TensorF> pool_i;  // negative candidates for direction j->i
};

struct StepResult {
  losses::LossReport report;  // generator-side objective (stage total)
  double disc_loss = 0;
};

class Trainer {
 public:
  Trainer(net::ModelBundle bundle, losses::LossWeights weights, TrainSchedule sched,
          TrainOptions opts = {});

  // One discriminator update followed by one generator update over the
  // batch, both domain directions. Throws NanLoss naming the first
  // non-finite term.
  StepResult training_step(DomainId di, DomainId dj, const std::vector<StepSample>& batch,
                           int epoch, Stage stage);

  net::ModelBundle& bundle() { return bundle_; }
  Rng& rng() { return rng_; }
  losses::LossWeights& weights() { return weights_; }
  Adam& generator_opt() { return gen_opt_; }
  Adam& discriminator_opt() { return disc_opt_; }

 private:
  net::ModelBundle bundle_;
  losses::LossWeights weights_;
  TrainSchedule sched_;
  TrainOptions opts_;
  Adam gen_opt_;
  Adam disc_opt_;
  Rng rng_;
};

struct RunResult {
  net::ModelBundle bundle;
  std::string metrics_path;
  std::string last_checkpoint;
};

// Full training loop: domain-pair sampling, flip/negative construction,
// schedules, optimization, periodic checkpoints (write-rename), metrics
// log. Deterministic for a fixed seed; resume reproduces the un-resumed
// loss curve because the RNG state is checkpointed.
RunResult run_training(const Manifest& manifest, const std::string& manifest_dir,
                       const net::NetworkConfig& cfg, const losses::LossWeights& weights,
                       const TrainSchedule& sched, Stage stage, const std::string& out_dir,
                       const TrainOptions& opts = {}, const std::string& resume_checkpoint = "",
                       const std::string& warm_start_checkpoint = "");

}  // namespace trainer
}  // namespace disam
