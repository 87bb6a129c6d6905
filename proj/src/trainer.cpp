#include "disam/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "disam/samcore.hpp"

namespace disam {
namespace trainer {

namespace {

using losses::DirectionTerms;
using losses::LossReport;
using losses::LossWeights;
using net::Ctx;
using net::ModelBundle;
using net::NamedParam;
using net::Net;

void zero_grads(const std::vector<NamedParam<float>>& params) {
  for (const auto& np : params) np.param->zero_grad();
}

void check_finite_params(const std::vector<NamedParam<float>>& params, int epoch) {
  for (const auto& np : params)
    if (!np.param->value.all_finite())
      throw NanLoss("parameter '" + np.name + "' became non-finite at epoch " +
                    std::to_string(epoch));
}

void check_term(double v, const char* name, int epoch) {
  if (!std::isfinite(v))
    throw NanLoss(std::string("loss term '") + name + "' is non-finite at epoch " +
                  std::to_string(epoch));
}

void add_scaled(TensorF& dst, const TensorF& src, double s) {
  for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += static_cast<float>(s * src[i]);
}

void add_scaled_d(TensorF& dst, const TensorD& src, double s) {
  for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += static_cast<float>(s * src[i]);
}

bool use_hard_negatives(int epoch, const TrainSchedule& s, NegativeMode mode) {
  switch (mode) {
    case NegativeMode::random_only: return false;
    case NegativeMode::hard_only: return true;
    case NegativeMode::automatic: return epoch >= s.hard_negative_start_epoch;
  }
  return false;
}

struct FlipPolicy {
  bool flip_i = false;      // anchor from domain i
  bool flip_pool_j = false; // candidates paired with the i->j translated anchor
  bool flip_pool_i = false;
};

// Exactly one of the sampled pair is flipped; every negative pair then has
// exactly one flipped member.
FlipPolicy draw_flip_policy(Rng& rng) {
  FlipPolicy p;
  p.flip_i = rng.coin();
  p.flip_pool_j = !p.flip_i;        // anchor x_i flipped -> candidates not, and vice versa
  p.flip_pool_i = p.flip_i;         // anchor x_j has the complementary flip state
  return p;
}

TensorF flip_pixels(const TensorF& pixels) {
  TensorF out(pixels.shape());
  const int c = pixels.dim(0), h = pixels.dim(1), w = pixels.dim(2);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(ch, y, x) = pixels.at(ch, y, w - 1 - x);
  return out;
}

}  // namespace

void TrainSchedule::validate() const {
  if (total_epochs < 1) throw InvalidConfig("total_epochs must be >= 1");
  if (!(lr_initial > 0)) throw InvalidConfig("lr_initial must be positive");
  if (ramp_epochs < 0 || ramp_epochs > total_epochs)
    throw InvalidConfig("ramp_epochs must lie in [0, total_epochs]");
  if (hard_negative_start_epoch < 0 || hard_negative_start_epoch > total_epochs)
    throw InvalidConfig("hard_negative_start_epoch must lie in [0, total_epochs]");
  if (pool_size < 1) throw InvalidConfig("pool_size must be >= 1");
  if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1))
    throw InvalidConfig("adam betas must lie in [0,1)");
  if (checkpoint_every < 1) throw InvalidConfig("checkpoint_every must be >= 1");
  if (steps_per_epoch < 0) throw InvalidConfig("steps_per_epoch must be nonnegative");
}

double current_lr(const TrainSchedule& s, int epoch) {
  return s.lr_initial * (1.0 - static_cast<double>(epoch) / s.total_epochs);
}

double current_ramp(const TrainSchedule& s, int epoch) {
  if (s.ramp_epochs == 0) return 1.0;
  return std::min(1.0, static_cast<double>(epoch) / s.ramp_epochs);
}

std::pair<DomainId, DomainId> sample_domain_pair(int n_domains, Rng& rng) {
  if (n_domains < 2) throw TooFewDomains("need at least 2 domains to sample a pair");
  const int i = rng.uniform_int(n_domains);
  int j = rng.uniform_int(n_domains - 1);
  if (j >= i) ++j;
  return {DomainId{i}, DomainId{j}};
}

size_t make_negative(const std::vector<FeatureMap>& encoded_pool,
                     const FeatureMap& translated_anchor, int epoch, const TrainSchedule& sched,
                     Rng& rng, NegativeMode mode) {
  if (encoded_pool.empty()) throw EmptyPool("negative candidate pool is empty");
  if (!use_hard_negatives(epoch, sched, mode))
    return static_cast<size_t>(rng.uniform_int(static_cast<int>(encoded_pool.size())));
  return losses::hard_negative_select(translated_anchor, encoded_pool);
}

void Adam::step(const std::vector<NamedParam<float>>& params, double lr) {
  constexpr double kEps = 1e-8;
  for (const auto& np : params) {
    Moments& st = state_[np.name];
    TensorF& value = np.param->value;
    TensorF& grad = np.param->grad;
    if (st.m.numel() != value.numel()) {
      st.m = TensorF(value.shape());
      st.v = TensorF(value.shape());
      st.t = 0;
    }
    ++st.t;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(st.t));
    for (int64_t k = 0; k < value.numel(); ++k) {
      const double g = grad[k];
      const double m = beta1_ * st.m[k] + (1 - beta1_) * g;
      const double v = beta2_ * st.v[k] + (1 - beta2_) * g * g;
      st.m[k] = static_cast<float>(m);
      st.v[k] = static_cast<float>(v);
      value[k] -= static_cast<float>(lr * (m / bc1) / (std::sqrt(v / bc2) + kEps));
    }
  }
}

void Adam::save(const std::string& prefix, net::CheckpointExtra& extra) const {
  for (const auto& [name, st] : state_) {
    extra.tensors.emplace_back(prefix + ".m." + name, st.m);
    extra.tensors.emplace_back(prefix + ".v." + name, st.v);
    extra.meta[prefix + ".t." + name] = std::to_string(st.t);
  }
}

void Adam::load(const std::string& prefix, const net::CheckpointExtra& extra) {
  state_.clear();
  for (const auto& [name, t] : extra.tensors) {
    if (name.rfind(prefix + ".m.", 0) == 0)
      state_[name.substr(prefix.size() + 3)].m = t;
    else if (name.rfind(prefix + ".v.", 0) == 0)
      state_[name.substr(prefix.size() + 3)].v = t;
  }
  for (const auto& [key, val] : extra.meta)
    if (key.rfind(prefix + ".t.", 0) == 0) state_[key.substr(prefix.size() + 3)].t = std::stoll(val);
}

Trainer::Trainer(ModelBundle bundle, LossWeights weights, TrainSchedule sched, TrainOptions opts)
    : bundle_(std::move(bundle)),
      weights_(weights),
      sched_(sched),
      opts_(opts),
      gen_opt_(sched.adam_beta1, sched.adam_beta2),
      disc_opt_(sched.adam_beta1, sched.adam_beta2),
      rng_(sched.seed) {
  sched_.validate();
  weights_.validate();
}

StepResult Trainer::training_step(DomainId di, DomainId dj, const std::vector<StepSample>& batch,
                                  int epoch, Stage stage) {
  if (batch.empty()) throw InvalidConfig("training_step needs a nonempty batch");
  const size_t b_count = batch.size();
  const double inv_b = 1.0 / static_cast<double>(b_count);

  LossWeights w = weights_;
  w.ramp_fraction = current_ramp(sched_, epoch);
  const double lr = current_lr(sched_, epoch);
  const double r = w.ramp_fraction;
  const double w_cyc = w.lambda_cyc * r;
  const double w_fcl = w.lambda_fcl * r;
  const double w_sam = w.lambda_sam * r;
  const double w_tf = w.lambda_trip_fcl * r;
  const double w_ts = w.lambda_trip_sam * r;
  const double w_adv = opts_.adversarial_weight;
  const bool fine = stage == Stage::fine;
  const double alpha_f = opts_.margin == MarginMode::constant ? 0.0 : w.alpha_f;
  const double alpha_s = opts_.margin == MarginMode::constant ? 0.0 : w.alpha_s;
  const bool hard = use_hard_negatives(epoch, sched_, opts_.negatives);

  auto& enc_i = bundle_.encoders[static_cast<size_t>(di.index)];
  auto& enc_j = bundle_.encoders[static_cast<size_t>(dj.index)];
  auto& dec_i = bundle_.decoders[static_cast<size_t>(di.index)];
  auto& dec_j = bundle_.decoders[static_cast<size_t>(dj.index)];
  auto& disc_i = bundle_.discriminators[static_cast<size_t>(di.index)];
  auto& disc_j = bundle_.discriminators[static_cast<size_t>(dj.index)];

  auto domain_params = [&](auto getter) {
    std::vector<NamedParam<float>> out;
    getter(di.index, out);
    getter(dj.index, out);
    return out;
  };
  auto gen_params = domain_params([&](int d, std::vector<NamedParam<float>>& out) {
    bundle_.encoders[static_cast<size_t>(d)].collect_params("enc" + std::to_string(d), out);
    bundle_.decoders[static_cast<size_t>(d)].collect_params("dec" + std::to_string(d), out);
  });
  auto disc_params = domain_params([&](int d, std::vector<NamedParam<float>>& out) {
    bundle_.discriminators[static_cast<size_t>(d)].collect_params("disc" + std::to_string(d), out);
  });

  // ---- discriminator update: real vs current-generator fakes ----
  zero_grads(disc_params);
  double disc_loss = 0;
  for (const StepSample& s : batch) {
    const TensorF x_ij = dec_j.forward(enc_i.forward(s.x_i, nullptr), nullptr);
    const TensorF x_ji = dec_i.forward(enc_j.forward(s.x_j, nullptr), nullptr);
    struct DPass {
      Net<float>* disc;
      const TensorF *real, *fake;
    };
    for (const DPass& p : {DPass{&disc_j, &s.x_j, &x_ij}, DPass{&disc_i, &s.x_i, &x_ji}}) {
      Ctx<float> cr, cf;
      const TensorF sr = p.disc->forward(*p.real, &cr);
      const TensorF sf = p.disc->forward(*p.fake, &cf);
      disc_loss += losses::gan_loss_discriminator(sr, sf) * inv_b;
      const double n_r = static_cast<double>(sr.numel());
      const double n_f = static_cast<double>(sf.numel());
      TensorF gr(sr.shape()), gf(sf.shape());
      for (int64_t k = 0; k < sr.numel(); ++k)
        gr[k] = static_cast<float>(2.0 * (sr[k] - 1.0) / n_r * inv_b);
      for (int64_t k = 0; k < sf.numel(); ++k)
        gf[k] = static_cast<float>(2.0 * sf[k] / n_f * inv_b);
      p.disc->backward(gr, cr);
      p.disc->backward(gf, cf);
    }
  }
  check_term(disc_loss, "disc", epoch);
  disc_opt_.step(disc_params, lr);

  // ---- generator update over both directions ----
  zero_grads(gen_params);
  zero_grads(disc_params);  // adversarial backward passes through them

  DirectionTerms acc_ij, acc_ji;

  auto process_direction = [&](const TensorF& x_src, const std::vector<TensorF>& pool,
                               Net<float>& enc_src, Net<float>& enc_dst, Net<float>& dec_src,
                               Net<float>& dec_dst, Net<float>& disc_dst,
                               DirectionTerms& acc) {
    // Forward chain (Eqs. 4-7): z -> translated image -> re-encoded z ->
    // reconstruction.
    Ctx<float> c_enc_src, c_dec_dst, c_enc_dst, c_dec_src;
    const TensorF z = enc_src.forward(x_src, &c_enc_src);
    const TensorF x_t = dec_dst.forward(z, &c_dec_dst);
    const TensorF z_t = enc_dst.forward(x_t, &c_enc_dst);
    const TensorF x_rec = dec_src.forward(z_t, &c_dec_src);

    Ctx<float> c_disc;
    const TensorF scores = disc_dst.forward(x_t, &c_disc);

    const double gan = losses::gan_loss_generator(scores);
    const double cyc = losses::cycle_loss(x_src, x_rec);
    const double fcl = losses::fcl_loss(z, z_t, stage);
    check_term(gan, "gan", epoch);
    check_term(cyc, "cycle", epoch);
    check_term(fcl, "fcl", epoch);
    acc.gan_gen += gan * inv_b;
    acc.cycle += cyc * inv_b;
    acc.fcl += fcl * inv_b;

    const bool need_negative = (w_tf > 0) || (fine && w_ts > 0);
    const bool need_sam = fine && (w_sam > 0 || w_ts > 0);

    // Negative selection (Eqs. 20-21). Random phase draws one shared
    // candidate; hard phase searches feature and map space independently.
    std::vector<FeatureMap> pool_features;
    size_t idx_fcl = 0, idx_sam = 0;
    if (need_negative) {
      if (pool.empty()) throw EmptyPool("no negative candidates for this direction");
      if (hard) {
        pool_features.reserve(pool.size());
        for (const TensorF& img : pool) pool_features.push_back(enc_dst.forward(img, nullptr));
        idx_fcl = losses::hard_negative_select(z_t, pool_features);
      } else {
        idx_fcl = static_cast<size_t>(rng_.uniform_int(static_cast<int>(pool.size())));
      }
      idx_sam = idx_fcl;
    }

    const TensorD z_d = z.cast<double>();
    const TensorD z_t_d = z_t.cast<double>();

    // Maps for the positive pair (self: L_{i,m}; cross: L_{i->j,m}).
    ActivationMap map_self, map_cross;
    double sam = 0;
    if (need_sam) {
      map_self = samcore::activation_map(z_d, z_t_d);
      map_cross = samcore::activation_map(z_t_d, z_d);
      sam = losses::sam_loss(map_self, map_cross);
      check_term(sam, "sam", epoch);
      acc.sam += sam * inv_b;
    }

    // Triplet FCL (Eq. 22).
    Ctx<float> c_star_f;
    TensorF z_star;
    double trip_f = 0, dpos_f = 0, dneg_f = 0;
    if (w_tf > 0) {
      z_star = enc_dst.forward(pool[idx_fcl], &c_star_f);
      dpos_f = losses::l2_distance(z, z_t);
      dneg_f = losses::l2_distance(z_t, z_star);
      trip_f = losses::adaptive_triplet(dpos_f, dneg_f, w.m_f, alpha_f);
      check_term(trip_f, "triplet_fcl", epoch);
      acc.triplet_fcl += trip_f * inv_b;
    }

    // Triplet SAM (Eq. 23); candidate maps use the translated anchor as
    // reference.
    Ctx<float> c_star_s;
    TensorF z_star_s;
    TensorD z_star_s_d;
    ActivationMap map_star;
    double trip_s = 0, dpos_s = 0, dneg_s = 0;
    if (fine && w_ts > 0) {
      if (hard) {
        std::vector<ActivationMap> cand_maps;
        cand_maps.reserve(pool_features.size());
        for (const FeatureMap& zc : pool_features)
          cand_maps.push_back(samcore::activation_map(zc.cast<double>(), z_t_d));
        idx_sam = losses::hard_negative_select(map_cross, cand_maps);
        map_star = std::move(cand_maps[idx_sam]);
        z_star_s = enc_dst.forward(pool[idx_sam], &c_star_s);
        z_star_s_d = z_star_s.cast<double>();
      } else {
        z_star_s = enc_dst.forward(pool[idx_sam], &c_star_s);
        z_star_s_d = z_star_s.cast<double>();
        map_star = samcore::activation_map(z_star_s_d, z_t_d);
      }
      dpos_s = losses::l2_distance(map_self, map_cross);
      dneg_s = losses::l2_distance(map_cross, map_star);
      trip_s = losses::adaptive_triplet(dpos_s, dneg_s, w.m_s, alpha_s);
      check_term(trip_s, "triplet_sam", epoch);
      acc.triplet_sam += trip_s * inv_b;
    }

    // ---- backward ----
    TensorF gz(z.shape());
    TensorF gz_t(z_t.shape());
    TensorF gx_t(x_t.shape());

    // adversarial: mean((scores-1)^2), weight fixed (not ramped)
    if (w_adv > 0) {
      TensorF gs(scores.shape());
      const double n = static_cast<double>(scores.numel());
      for (int64_t k = 0; k < scores.numel(); ++k)
        gs[k] = static_cast<float>(w_adv * 2.0 * (scores[k] - 1.0) / n * inv_b);
      add_scaled(gx_t, disc_dst.backward(gs, c_disc), 1.0);
    }

    // cycle: mean |x_rec - x_src|
    if (w_cyc > 0) {
      TensorF grec(x_rec.shape());
      const double n = static_cast<double>(x_rec.numel());
      for (int64_t k = 0; k < x_rec.numel(); ++k) {
        const double d = static_cast<double>(x_rec[k]) - static_cast<double>(x_src[k]);
        grec[k] = static_cast<float>(w_cyc * inv_b * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / n);
      }
      add_scaled(gz_t, dec_src.backward(grec, c_dec_src), 1.0);
    }

    // feature consistency: rms term (+ cosine term in the fine stage)
    if (w_fcl > 0) {
      const double n = static_cast<double>(z.numel());
      double rms = 0;
      for (int64_t k = 0; k < z.numel(); ++k) {
        const double d = static_cast<double>(z[k]) - static_cast<double>(z_t[k]);
        rms += d * d;
      }
      rms = std::sqrt(rms / n);
      if (rms > 0) {
        const double c = w_fcl * inv_b / (n * rms);
        for (int64_t k = 0; k < z.numel(); ++k) {
          const double d = static_cast<double>(z[k]) - static_cast<double>(z_t[k]);
          gz[k] += static_cast<float>(c * d);
          gz_t[k] -= static_cast<float>(c * d);
        }
      }
      if (fine) {
        add_scaled_d(gz, samcore::cosine_gradient(z_d, z_t_d), -w_fcl * inv_b);
        add_scaled_d(gz_t, samcore::cosine_gradient(z_t_d, z_d), -w_fcl * inv_b);
      }
    }

    // triplet FCL
    TensorF g_star_f;
    if (w_tf > 0 && trip_f > 0) {
      const double denom = dpos_f + w.m_f * std::exp(-alpha_f * dpos_f);
      const double dT_dneg = -1.0 / denom;
      const double denom_prime = 1.0 - alpha_f * w.m_f * std::exp(-alpha_f * dpos_f);
      const double dT_dpos = dneg_f * denom_prime / (denom * denom);
      if (dpos_f > 0) {
        const double c = w_tf * inv_b * dT_dpos / dpos_f;
        for (int64_t k = 0; k < z.numel(); ++k) {
          const double d = static_cast<double>(z[k]) - static_cast<double>(z_t[k]);
          gz[k] += static_cast<float>(c * d);
          gz_t[k] -= static_cast<float>(c * d);
        }
      }
      if (dneg_f > 0) {
        const double c = w_tf * inv_b * dT_dneg / dneg_f;
        g_star_f = TensorF(z_star.shape());
        for (int64_t k = 0; k < z_t.numel(); ++k) {
          const double d = static_cast<double>(z_t[k]) - static_cast<double>(z_star[k]);
          gz_t[k] += static_cast<float>(c * d);
          g_star_f[k] -= static_cast<float>(c * d);
        }
      }
    }

    // SAM-family upstream gradients on the three maps, then one VJP each.
    if (need_sam) {
      const int64_t hw = map_self.numel();
      TensorD g_self(map_self.shape());
      TensorD g_cross(map_cross.shape());
      TensorD g_star(map_star.numel() ? map_star.shape() : map_cross.shape());
      bool any = false, any_star = false;

      if (w_sam > 0 && sam > 0) {
        const double c = w_sam * inv_b / (static_cast<double>(hw) * sam);
        for (int64_t k = 0; k < hw; ++k) {
          const double d = map_self[k] - map_cross[k];
          g_self[k] += c * d;
          g_cross[k] -= c * d;
        }
        any = true;
      }
      if (w_ts > 0 && trip_s > 0) {
        const double denom = dpos_s + w.m_s * std::exp(-alpha_s * dpos_s);
        const double dT_dneg = -1.0 / denom;
        const double denom_prime = 1.0 - alpha_s * w.m_s * std::exp(-alpha_s * dpos_s);
        const double dT_dpos = dneg_s * denom_prime / (denom * denom);
        if (dpos_s > 0) {
          const double c = w_ts * inv_b * dT_dpos / dpos_s;
          for (int64_t k = 0; k < hw; ++k) {
            const double d = map_self[k] - map_cross[k];
            g_self[k] += c * d;
            g_cross[k] -= c * d;
          }
          any = true;
        }
        if (dneg_s > 0) {
          const double c = w_ts * inv_b * dT_dneg / dneg_s;
          for (int64_t k = 0; k < hw; ++k) {
            const double d = map_cross[k] - map_star[k];
            g_cross[k] += c * d;
            g_star[k] -= c * d;
          }
          any = true;
          any_star = true;
        }
      }

      if (any) {
        const auto vjp_self = samcore::activation_map_vjp(z_d, z_t_d, g_self);
        add_scaled_d(gz, vjp_self.g_first, 1.0);
        add_scaled_d(gz_t, vjp_self.g_second, 1.0);
        const auto vjp_cross = samcore::activation_map_vjp(z_t_d, z_d, g_cross);
        add_scaled_d(gz_t, vjp_cross.g_first, 1.0);
        add_scaled_d(gz, vjp_cross.g_second, 1.0);
        if (any_star) {
          const auto vjp_star = samcore::activation_map_vjp(z_star_s_d, z_t_d, g_star);
          add_scaled_d(gz_t, vjp_star.g_second, 1.0);
          TensorF g_star_pix(z_star_s.shape());
          add_scaled_d(g_star_pix, vjp_star.g_first, 1.0);
          enc_dst.backward(g_star_pix, c_star_s);
        }
      }
    }

    if (g_star_f.numel() > 0) enc_dst.backward(g_star_f, c_star_f);

    // chain: z_t -> translated image -> z -> source image
    add_scaled(gx_t, enc_dst.backward(gz_t, c_enc_dst), 1.0);
    add_scaled(gz, dec_dst.backward(gx_t, c_dec_dst), 1.0);
    enc_src.backward(gz, c_enc_src);
  };

  for (const StepSample& s : batch) {
    process_direction(s.x_i, s.pool_j, enc_i, enc_j, dec_i, dec_j, disc_j, acc_ij);
    process_direction(s.x_j, s.pool_i, enc_j, enc_i, dec_j, dec_i, disc_i, acc_ji);
  }

  gen_opt_.step(gen_params, lr);
  check_finite_params(gen_params, epoch);
  check_finite_params(disc_params, epoch);


  StepResult out;
  out.report = fine ? losses::fine_total(acc_ij, acc_ji, w) : losses::coarse_total(acc_ij, acc_ji, w);
  out.disc_loss = disc_loss;
  return out;
}

namespace {

std::string format_report(int epoch, int step, const StepResult& r) {
  std::ostringstream os;
  char buf[64];
  os << "epoch=" << epoch << " step=" << step;
  for (const auto& t : r.report.terms) {
    std::snprintf(buf, sizeof(buf), " %s=%.9g", t.name.c_str(), t.value);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), " disc=%.9g total=%.9g", r.disc_loss, r.report.total);
  os << buf;
  return os.str();
}

struct DomainPool {
  std::vector<TensorF> images;  // unflipped pixels, train split
};

}  // namespace

RunResult run_training(const Manifest& manifest, const std::string& manifest_dir,
                       const net::NetworkConfig& cfg, const losses::LossWeights& weights,
                       const TrainSchedule& sched, Stage stage, const std::string& out_dir,
                       const TrainOptions& opts, const std::string& resume_checkpoint,
                       const std::string& warm_start_checkpoint) {
  namespace fs = std::filesystem;
  sched.validate();
  if (!resume_checkpoint.empty() && !warm_start_checkpoint.empty())
    throw FlagConflict("resume and warm-start are mutually exclusive");
  fs::create_directories(fs::path(out_dir) / "checkpoints");

  // Gather the train split per domain; the whole desk-scale set is held in
  // memory.
  std::vector<DomainPool> pools(static_cast<size_t>(cfg.n_domains));
  int n_train = 0;
  for (const auto& rec : manifest.records) {
    if (rec.split != Split::train) continue;
    if (rec.domain.index >= cfg.n_domains)
      throw InvalidConfig("train record '" + rec.id + "' has domain " +
                          std::to_string(rec.domain.index) + " outside the configured model");
    const ImageSample img = load_image_sample(manifest, rec, manifest_dir);
    pools[static_cast<size_t>(rec.domain.index)].images.push_back(img.pixels);
    ++n_train;
  }
  std::vector<int> eligible;
  for (int d = 0; d < cfg.n_domains; ++d)
    if (!pools[static_cast<size_t>(d)].images.empty()) eligible.push_back(d);
  if (eligible.size() < 2)
    throw TooFewDomains("training needs train images in at least 2 domains");

  // Assemble the trainer state: fresh, resumed, or warm-started.
  net::ModelBundle bundle;
  int start_epoch = 0;
  bool restore_opt = false;
  net::CheckpointExtra restored;
  if (!resume_checkpoint.empty()) {
    bundle = net::load_checkpoint(resume_checkpoint, &restored);
    net::require_compatible(bundle.config, cfg);
    if (bundle.stage != stage)
      throw VersionMismatch("checkpoint stage is " + std::string(to_string(bundle.stage)) +
                            ", cannot resume a " + to_string(stage) + " run");
    start_epoch = bundle.epoch;
    restore_opt = true;
  } else if (!warm_start_checkpoint.empty()) {
    bundle = net::load_checkpoint(warm_start_checkpoint);
    net::require_compatible(bundle.config, cfg);
    bundle.epoch = 0;  // schedule restarts for the new stage
    bundle.stage = stage;
  } else {
    bundle = net::init_bundle(cfg);
    bundle.stage = stage;
  }

  Trainer trainer(std::move(bundle), weights, sched, opts);
  if (restore_opt) {
    trainer.generator_opt().load("adam_g", restored);
    trainer.discriminator_opt().load("adam_d", restored);
    const auto it = restored.meta.find("rng");
    if (it != restored.meta.end()) trainer.rng().deserialize(it->second);
  }

  const std::string metrics_path = (fs::path(out_dir) / "metrics.log").string();
  std::ofstream log(metrics_path, start_epoch > 0 ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot open metrics log: " + metrics_path);

  const int steps_per_epoch =
      sched.steps_per_epoch > 0
          ? sched.steps_per_epoch
          : std::max(1, (n_train + 2 * sched.batch_size - 1) / (2 * sched.batch_size));

  std::string last_ckpt;
  auto save_state = [&](int completed_epochs) {
    trainer.bundle().epoch = completed_epochs;
    net::CheckpointExtra extra;
    trainer.generator_opt().save("adam_g", extra);
    trainer.discriminator_opt().save("adam_d", extra);
    extra.meta["rng"] = trainer.rng().serialize();
    char name[64];
    std::snprintf(name, sizeof(name), "checkpoints/epoch_%04d.ckpt", completed_epochs);
    const std::string path = (fs::path(out_dir) / name).string();
    net::save_checkpoint(trainer.bundle(), path, &extra);
    last_ckpt = path;
  };

  Rng& rng = trainer.rng();
  for (int epoch = start_epoch; epoch < sched.total_epochs; ++epoch) {
    // Deterministic per-epoch data order.
    std::vector<std::vector<size_t>> order(pools.size());
    std::vector<size_t> cursor(pools.size(), 0);
    for (int d : eligible) {
      auto& idx = order[static_cast<size_t>(d)];
      idx.resize(pools[static_cast<size_t>(d)].images.size());
      std::iota(idx.begin(), idx.end(), size_t{0});
      rng.shuffle(idx.begin(), idx.end());
    }
    auto next_image = [&](int d) -> const TensorF& {
      auto& idx = order[static_cast<size_t>(d)];
      const TensorF& img =
          pools[static_cast<size_t>(d)].images[idx[cursor[static_cast<size_t>(d)] % idx.size()]];
      ++cursor[static_cast<size_t>(d)];
      return img;
    };
    auto sample_pool = [&](int d, bool flip) {
      const auto& imgs = pools[static_cast<size_t>(d)].images;
      const size_t k = std::min(static_cast<size_t>(sched.pool_size), imgs.size());
      std::vector<size_t> idx(imgs.size());
      std::iota(idx.begin(), idx.end(), size_t{0});
      for (size_t i = 0; i < k; ++i) {
        const size_t j = i + static_cast<size_t>(rng.uniform_int(static_cast<int>(idx.size() - i)));
        std::swap(idx[i], idx[j]);
      }
      std::vector<TensorF> out;
      out.reserve(k);
      for (size_t i = 0; i < k; ++i)
        out.push_back(flip ? flip_pixels(imgs[idx[i]]) : imgs[idx[i]]);
      return out;
    };

    double sum_total = 0, sum_disc = 0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      const auto [a, b] = sample_domain_pair(static_cast<int>(eligible.size()), rng);
      const DomainId di{eligible[static_cast<size_t>(a.index)]};
      const DomainId dj{eligible[static_cast<size_t>(b.index)]};

      std::vector<StepSample> batch;
      for (int k = 0; k < sched.batch_size; ++k) {
        const FlipPolicy flips = draw_flip_policy(rng);
        StepSample s;
        const TensorF& raw_i = next_image(di.index);
        const TensorF& raw_j = next_image(dj.index);
        s.x_i = flips.flip_i ? flip_pixels(raw_i) : raw_i;
        s.x_j = flips.flip_i ? raw_j : flip_pixels(raw_j);
        s.pool_j = sample_pool(dj.index, flips.flip_pool_j);
        s.pool_i = sample_pool(di.index, flips.flip_pool_i);
        batch.push_back(std::move(s));
      }

      const StepResult res = trainer.training_step(di, dj, batch, epoch, stage);
      log << format_report(epoch, step, res) << '\n';
      sum_total += res.report.total;
      sum_disc += res.disc_loss;
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf), "# epoch=%d lr=%.9g ramp=%.9g mean_total=%.9g mean_disc=%.9g",
                  epoch, current_lr(sched, epoch), current_ramp(sched, epoch),
                  sum_total / steps_per_epoch, sum_disc / steps_per_epoch);
    log << buf << '\n';
    log.flush();
    std::cout << buf << std::endl;

    const int completed = epoch + 1;
    if (completed % sched.checkpoint_every == 0 || completed == sched.total_epochs)
      save_state(completed);
  }
  if (last_ckpt.empty()) save_state(sched.total_epochs);

  RunResult out;
  out.bundle = std::move(trainer.bundle());
  out.metrics_path = metrics_path;
  out.last_checkpoint = last_ckpt;
  return out;
}

}  // namespace trainer
}  // namespace disam
