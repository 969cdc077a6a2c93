#pragma once

// Desk-scale conservative offline RL victims. Each is a single-critic,
// small-MLP simplification of the named algorithm:
//
//   CQL-like  TD loss plus alpha * (logsumexp_j Q(s, a_j) - Q(s, a_data)) over
//             uniform and current-policy actions; deterministic actor trained
//             to maximise Q (no entropy term, no twin critics).
//   IQL-like  expectile value regression toward a target critic, TD critic
//             against V(s'), advantage-weighted behavior regression actor; the
//             critic is only ever queried at dataset actions.
//   BCQ-like  unimodal behavior regressor instead of a VAE, no perturbation
//             network; acts by scoring fixed offsets within radius phi around
//             the behavior output.
//
// Victims read only a Dataset; they have no access to poisoning metadata.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "csgba/dataset.hpp"
#include "csgba/env.hpp"
#include "csgba/error.hpp"
#include "csgba/io.hpp"
#include "csgba/numeric.hpp"
#include "csgba/param_file.hpp"
#include "csgba/policy.hpp"
#include "csgba/proxy.hpp"

namespace csgba {

enum class VictimKind { kCql, kIql, kBcq };

NLOHMANN_JSON_SERIALIZE_ENUM(VictimKind, {{VictimKind::kCql, "cql"}, {VictimKind::kIql, "iql"}, {VictimKind::kBcq, "bcq"}})

inline const char* victim_name(VictimKind k) {
  switch (k) {
    case VictimKind::kCql: return "cql";
    case VictimKind::kIql: return "iql";
    case VictimKind::kBcq: return "bcq";
  }
  return "?";
}

struct VictimConfig {
  VictimKind kind = VictimKind::kCql;
  double gamma = 0.95;
  std::size_t epochs = 40;
  std::size_t batch_size = 256;
  float critic_lr = 1e-3f;
  float actor_lr = 1e-3f;
  float value_lr = 1e-3f;
  float target_tau = 0.01f;
  double cql_alpha = 2.0;
  std::size_t cql_samples = 4;  // uniform actions per state in the logsumexp
  double iql_tau = 0.7;
  double iql_beta = 3.0;  // advantage temperature
  double bcq_phi = -1.0;  // < 0 selects 0.05 * action range
  std::size_t bcq_candidates = 10;
  std::vector<std::size_t> hidden = {64, 64};
  std::uint64_t seed = 0;

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("victim.gamma must be in (0, 1)");
    if (!(cql_alpha >= 0.0)) throw ConfigError("victim.cql_alpha must be >= 0");
    if (!(iql_tau > 0.0 && iql_tau < 1.0)) throw ConfigError("victim.iql_tau must be in (0, 1)");
    if (bcq_candidates < 1) throw ConfigError("victim.bcq_candidates must be >= 1");
    if (batch_size < 1) throw ConfigError("victim.batch_size must be >= 1");
    if (kind == VictimKind::kCql && cql_samples < 1 && cql_alpha > 0.0) {
      throw ConfigError("victim.cql_samples must be >= 1 when cql_alpha > 0");
    }
  }

  double phi_for(const ActionBounds& b) const {
    if (bcq_phi >= 0.0) return bcq_phi;
    return 0.05 * static_cast<double>((b.high - b.low).maxCoeff());
  }

  json to_json() const {
    return {{"kind", kind},
            {"gamma", gamma},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"critic_lr", critic_lr},
            {"actor_lr", actor_lr},
            {"value_lr", value_lr},
            {"target_tau", target_tau},
            {"cql_alpha", cql_alpha},
            {"cql_samples", cql_samples},
            {"iql_tau", iql_tau},
            {"iql_beta", iql_beta},
            {"bcq_phi", bcq_phi},
            {"bcq_candidates", bcq_candidates},
            {"hidden", hidden},
            {"seed", seed}};
  }

  static VictimConfig from_json(const json& j) {
    VictimConfig c;
    c.kind = detail_victim_kind(j);
    c.gamma = j.value("gamma", c.gamma);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.critic_lr = j.value("critic_lr", c.critic_lr);
    c.actor_lr = j.value("actor_lr", c.actor_lr);
    c.value_lr = j.value("value_lr", c.value_lr);
    c.target_tau = j.value("target_tau", c.target_tau);
    c.cql_alpha = j.value("cql_alpha", c.cql_alpha);
    c.cql_samples = j.value("cql_samples", c.cql_samples);
    c.iql_tau = j.value("iql_tau", c.iql_tau);
    c.iql_beta = j.value("iql_beta", c.iql_beta);
    c.bcq_phi = j.value("bcq_phi", c.bcq_phi);
    c.bcq_candidates = j.value("bcq_candidates", c.bcq_candidates);
    c.hidden = j.value("hidden", c.hidden);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }

 private:
  static VictimKind detail_victim_kind(const json& j) {
    if (!j.contains("kind")) return VictimKind::kCql;
    const auto s = j.at("kind").get<std::string>();
    if (s == "cql") return VictimKind::kCql;
    if (s == "iql") return VictimKind::kIql;
    if (s == "bcq") return VictimKind::kBcq;
    throw ConfigError("unknown victim kind '" + s + "'");
  }
};

struct TrainingCurve {
  std::vector<double> critic_loss;
  std::vector<double> actor_loss;
  std::vector<double> value_loss;

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(9);
    os << "epoch,critic_loss,actor_loss,value_loss\n";
    for (std::size_t e = 0; e < critic_loss.size(); ++e) {
      os << e << ',' << critic_loss[e] << ',' << (e < actor_loss.size() ? actor_loss[e] : 0.0) << ','
         << (e < value_loss.size() ? value_loss[e] : 0.0) << '\n';
    }
    return os.str();
  }
};

/// Squashes tanh outputs in [-1, 1] into the action box.
inline Mat scale_to_bounds(const Mat& squashed, const ActionBounds& b) {
  const Vec mid = 0.5f * (b.high + b.low), half = 0.5f * (b.high - b.low);
  Mat out = squashed;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    out.row(i) = (mid + half.cwiseProduct(squashed.row(i).transpose())).transpose();
  }
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = b.clip(out.row(i).transpose()).transpose();
  return out;
}

class TrainedVictim final : public Policy {
 public:
  VictimKind kind = VictimKind::kCql;
  ActionBounds bounds;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  MlpParams actor;  // behavior model for BCQ
  MlpParams critic;
  MlpParams value;       // IQL only
  Mat bcq_offsets;       // candidate offsets in [-1, 1]^d, row 0 is zero
  float bcq_phi = 0.0f;
  std::string config_fingerprint;
  std::uint64_t dataset_hash = 0;
  TrainingCurve curve;
  /// Critic evaluations at actions that were not the batch's dataset actions.
  std::uint64_t ood_critic_queries = 0;

  Mat actor_actions(const Mat& states) const { return scale_to_bounds(mlp_forward_batch(actor, states), bounds); }

  Mat act_batch(const Mat& states) const {
    const Mat base = actor_actions(states);
    if (kind != VictimKind::kBcq) return base;
    return bcq_select(critic, states, base, bcq_offsets, bcq_phi, bounds);
  }

  Vec act(std::span<const float> obs) const override {
    if (obs.size() != state_dim) throw DimensionError("TrainedVictim::act: observation width mismatch");
    Mat s(1, static_cast<Eigen::Index>(state_dim));
    std::copy(obs.begin(), obs.end(), s.data());
    return act_batch(s).row(0).transpose();
  }

  /// Behavior-model output (BCQ) or actor output, before candidate scoring.
  Vec behavior_action(std::span<const float> obs) const {
    Mat s(1, static_cast<Eigen::Index>(state_dim));
    std::copy(obs.begin(), obs.end(), s.data());
    return actor_actions(s).row(0).transpose();
  }

  float q_value(std::span<const float> s, std::span<const float> a) const {
    Vec x(static_cast<Eigen::Index>(state_dim + action_dim));
    std::copy(s.begin(), s.end(), x.data());
    std::copy(a.begin(), a.end(), x.data() + state_dim);
    return mlp_forward(critic, as_span(x))[0];
  }

  /// For each row, the candidate clip(base + phi * offset_c) with the highest Q (first on ties).
  static Mat bcq_select(const MlpParams& critic, const Mat& states, const Mat& base, const Mat& offsets, float phi,
                        const ActionBounds& bounds) {
    const Eigen::Index n = states.rows(), c = offsets.rows();
    const Eigen::Index sd = states.cols(), ad = base.cols();
    Mat x(n * c, sd + ad);
    Mat cands(n * c, ad);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < c; ++j) {
        const Vec a = bounds.clip(base.row(i).transpose() + phi * offsets.row(j).transpose());
        cands.row(i * c + j) = a.transpose();
        x.row(i * c + j).head(sd) = states.row(i);
        x.row(i * c + j).tail(ad) = a.transpose();
      }
    }
    const Mat q = mlp_forward_batch(critic, x);
    Mat out(n, ad);
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      for (Eigen::Index j = 1; j < c; ++j) {
        if (q(i * c + j, 0) > q(i * c + best, 0)) best = j;
      }
      out.row(i) = cands.row(i * c + best);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Loss helpers

/// |tau - 1(u < 0)| * u^2
inline double expectile_loss(double u, double tau) { return std::abs(tau - (u < 0.0 ? 1.0 : 0.0)) * u * u; }

inline double expectile_grad(double u, double tau) { return 2.0 * std::abs(tau - (u < 0.0 ? 1.0 : 0.0)) * u; }

namespace detail {

struct Batch {
  Mat s, a, s_next;
  Vec r, notdone;
};

class BatchSampler {
 public:
  BatchSampler(const Dataset& d, std::size_t batch, Rng& rng)
      : d_(d), batch_(std::min(batch, d.size())), rng_(rng), order_(d.size()) {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  }

  std::size_t batches_per_epoch() const { return d_.size() / batch_; }

  void shuffle() {
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
  }

  Batch get(std::size_t k) const {
    const auto b = static_cast<Eigen::Index>(batch_);
    Batch out{Mat(b, static_cast<Eigen::Index>(d_.state_dim())), Mat(b, static_cast<Eigen::Index>(d_.action_dim())),
              Mat(b, static_cast<Eigen::Index>(d_.state_dim())), Vec(b), Vec(b)};
    for (Eigen::Index i = 0; i < b; ++i) {
      const std::size_t row = order_[k * batch_ + static_cast<std::size_t>(i)];
      const auto r = static_cast<Eigen::Index>(row);
      out.s.row(i) = d_.states().row(r);
      out.a.row(i) = d_.actions().row(r);
      out.s_next.row(i) = d_.next_states().row(r);
      out.r[i] = d_.rewards()[row];
      out.notdone[i] = 1.0f - d_.dones()[row];
    }
    return out;
  }

 private:
  const Dataset& d_;
  std::size_t batch_;
  Rng& rng_;
  std::vector<std::size_t> order_;
};

inline std::vector<std::size_t> widths(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

struct Learner {
  MlpParams params;
  OptimState opt;
  MlpGradients grads;
  ForwardCache cache;

  Learner(MlpParams p, float lr) : params(std::move(p)) {
    opt = OptimState::for_params(params, OptimizerKind::kAdam, lr);
    opt.max_grad_norm = 10.0f;
    grads = MlpGradients::zeros_like(params);
  }

  Mat forward(const Mat& x) { return mlp_forward_batch(params, x, &cache); }

  /// Backward from `upstream` on the cached pass, then one optimizer step.
  void step(const Mat& upstream) {
    grads.set_zero();
    mlp_backward_batch(params, cache, upstream, &grads);
    optimizer_step(params, grads, opt);
  }
};

inline void check_finite(double loss, const MlpParams& p, const char* what, std::size_t epoch) {
  if (!std::isfinite(loss) || !p.finite()) {
    throw DivergenceError(std::string(what) + ": non-finite loss at epoch " + std::to_string(epoch) +
                          " (reduce the learning rate)");
  }
}

inline TrainedVictim make_victim_shell(const Dataset& d, const VictimConfig& cfg, const ActionBounds& bounds) {
  cfg.validate();
  if (bounds.dim() != d.action_dim()) throw DimensionError("victim: action bounds do not match dataset");
  TrainedVictim v;
  v.kind = cfg.kind;
  v.bounds = bounds;
  v.state_dim = d.state_dim();
  v.action_dim = d.action_dim();
  v.config_fingerprint = fingerprint(cfg.to_json());
  v.dataset_hash = d.content_hash();
  return v;
}

/// Gradient of a loss w.r.t. actor pre-squash outputs given dL/d(action).
inline Mat action_to_squashed_grad(const Mat& d_action, const ActionBounds& b) {
  const Vec half = 0.5f * (b.high - b.low);
  Mat g = d_action;
  for (Eigen::Index i = 0; i < g.rows(); ++i) g.row(i) = g.row(i).cwiseProduct(half.transpose());
  return g;
}

/// Shared actor-critic loop; alpha = 0 is plain fitted Q with a Q-maximising actor.
inline TrainedVictim train_conservative_actor_critic(const Dataset& d, const VictimConfig& cfg,
                                                     const ActionBounds& bounds) {
  TrainedVictim v = make_victim_shell(d, cfg, bounds);
  Rng rng(derive_seed(cfg.seed, 0xc01));
  const std::size_t sd = d.state_dim(), ad = d.action_dim();
  Learner critic(make_mlp(widths(sd + ad, cfg.hidden, 1), Activation::kRelu, Activation::kLinear, rng), cfg.critic_lr);
  Learner actor(make_mlp(widths(sd, cfg.hidden, ad), Activation::kRelu, Activation::kTanh, rng), cfg.actor_lr);
  MlpParams target = critic.params;
  ForwardCache q_cache;
  BatchSampler sampler(d, cfg.batch_size, rng);
  const auto gamma = static_cast<float>(cfg.gamma);
  const auto alpha = static_cast<float>(cfg.cql_alpha);
  const bool conservative = cfg.cql_alpha > 0.0;
  const auto m = static_cast<Eigen::Index>(conservative ? cfg.cql_samples : 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    sampler.shuffle();
    double closs = 0.0, aloss = 0.0;
    const std::size_t nb = sampler.batches_per_epoch();
    for (std::size_t k = 0; k < nb; ++k) {
      const Batch bt = sampler.get(k);
      const Eigen::Index b = bt.s.rows();
      const float inv_b = 1.0f / static_cast<float>(b);

      // Critic.
      const Mat a_next = scale_to_bounds(mlp_forward_batch(actor.params, bt.s_next), bounds);
      const Vec y = bt.r + gamma * bt.notdone.cwiseProduct(mlp_forward_batch(target, concat_columns(bt.s_next, a_next)).col(0));
      v.ood_critic_queries += static_cast<std::uint64_t>(b);
      const Eigen::Index groups = conservative ? m + 2 : 1;
      Mat x(b * groups, static_cast<Eigen::Index>(sd + ad));
      x.topRows(b) = concat_columns(bt.s, bt.a);
      if (conservative) {
        for (Eigen::Index j = 0; j < m; ++j) {
          Mat u(b, static_cast<Eigen::Index>(ad));
          for (Eigen::Index i = 0; i < b; ++i) u.row(i) = bounds.sample_uniform(rng).transpose();
          x.middleRows((1 + j) * b, b) = concat_columns(bt.s, u);
        }
        const Mat a_pi = scale_to_bounds(mlp_forward_batch(actor.params, bt.s), bounds);
        x.bottomRows(b) = concat_columns(bt.s, a_pi);
        v.ood_critic_queries += static_cast<std::uint64_t>((m + 1) * b);
      }
      const Mat q = critic.forward(x);
      const Vec err = q.col(0).head(b) - y;
      double loss = err.cast<double>().squaredNorm() * inv_b;
      Mat up = Mat::Zero(b * groups, 1);
      up.col(0).head(b) = 2.0f * inv_b * err;
      if (conservative) {
        for (Eigen::Index i = 0; i < b; ++i) {
          float mx = -std::numeric_limits<float>::infinity();
          for (Eigen::Index j = 1; j < groups; ++j) mx = std::max(mx, q(j * b + i, 0));
          double z = 0.0;
          for (Eigen::Index j = 1; j < groups; ++j) z += std::exp(static_cast<double>(q(j * b + i, 0) - mx));
          const double lse = mx + std::log(z);
          loss += cfg.cql_alpha * (lse - q(i, 0)) * inv_b;
          up(i, 0) -= alpha * inv_b;
          for (Eigen::Index j = 1; j < groups; ++j) {
            up(j * b + i, 0) += alpha * inv_b * static_cast<float>(std::exp(q(j * b + i, 0) - lse));
          }
        }
      }
      critic.step(up);
      closs += loss;

      // Actor: maximise Q(s, pi(s)).
      const Mat squashed = actor.forward(bt.s);
      const Mat a_pi = scale_to_bounds(squashed, bounds);
      const Mat qpi = mlp_forward_batch(critic.params, concat_columns(bt.s, a_pi), &q_cache);
      v.ood_critic_queries += static_cast<std::uint64_t>(b);
      aloss += -qpi.col(0).cast<double>().mean();
      const Mat dq = Mat::Constant(b, 1, -inv_b);
      const Mat dx = mlp_backward_batch(critic.params, q_cache, dq, nullptr);
      actor.step(action_to_squashed_grad(dx.rightCols(static_cast<Eigen::Index>(ad)), bounds));

      soft_update(target, critic.params, cfg.target_tau);
    }
    closs /= static_cast<double>(std::max<std::size_t>(nb, 1));
    aloss /= static_cast<double>(std::max<std::size_t>(nb, 1));
    check_finite(closs, critic.params, "train_cql", epoch);
    check_finite(aloss, actor.params, "train_cql", epoch);
    v.curve.critic_loss.push_back(closs);
    v.curve.actor_loss.push_back(aloss);
  }
  v.actor = std::move(actor.params);
  v.critic = std::move(critic.params);
  return v;
}

}  // namespace detail

inline TrainedVictim train_cql(const Dataset& d, VictimConfig cfg, const ActionBounds& bounds) {
  cfg.kind = VictimKind::kCql;
  return detail::train_conservative_actor_critic(d, cfg, bounds);
}

/// Unregularised fitted-Q actor-critic: the CQL trainer with alpha = 0.
inline TrainedVictim train_fitted_q_actor(const Dataset& d, VictimConfig cfg, const ActionBounds& bounds) {
  cfg.kind = VictimKind::kCql;
  cfg.cql_alpha = 0.0;
  return detail::train_conservative_actor_critic(d, cfg, bounds);
}

inline TrainedVictim train_iql(const Dataset& d, VictimConfig cfg, const ActionBounds& bounds) {
  cfg.kind = VictimKind::kIql;
  using namespace detail;
  TrainedVictim v = make_victim_shell(d, cfg, bounds);
  Rng rng(derive_seed(cfg.seed, 0x1a1));
  const std::size_t sd = d.state_dim(), ad = d.action_dim();
  Learner critic(make_mlp(widths(sd + ad, cfg.hidden, 1), Activation::kRelu, Activation::kLinear, rng), cfg.critic_lr);
  Learner value(make_mlp(widths(sd, cfg.hidden, 1), Activation::kRelu, Activation::kLinear, rng), cfg.value_lr);
  Learner actor(make_mlp(widths(sd, cfg.hidden, ad), Activation::kRelu, Activation::kTanh, rng), cfg.actor_lr);
  MlpParams target = critic.params;
  BatchSampler sampler(d, cfg.batch_size, rng);
  const auto gamma = static_cast<float>(cfg.gamma);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    sampler.shuffle();
    double closs = 0.0, vloss = 0.0, aloss = 0.0;
    const std::size_t nb = sampler.batches_per_epoch();
    for (std::size_t k = 0; k < nb; ++k) {
      const Batch bt = sampler.get(k);
      const Eigen::Index b = bt.s.rows();
      const float inv_b = 1.0f / static_cast<float>(b);
      const Mat sa = concat_columns(bt.s, bt.a);
      const Vec q_t = mlp_forward_batch(target, sa).col(0);  // dataset actions only

      // Value: expectile regression of Q toward V.
      const Vec vs = value.forward(bt.s).col(0);
      Mat dv(b, 1);
      double l = 0.0;
      for (Eigen::Index i = 0; i < b; ++i) {
        const double u = static_cast<double>(q_t[i]) - vs[i];
        l += expectile_loss(u, cfg.iql_tau);
        dv(i, 0) = static_cast<float>(-expectile_grad(u, cfg.iql_tau)) * inv_b;
      }
      value.step(dv);
      vloss += l * inv_b;

      // Critic: TD against V(s').
      const Vec y = bt.r + gamma * bt.notdone.cwiseProduct(mlp_forward_batch(value.params, bt.s_next).col(0));
      const Vec err = critic.forward(sa).col(0) - y;
      closs += err.cast<double>().squaredNorm() * inv_b;
      critic.step(Mat(2.0f * inv_b * err));

      // Actor: advantage-weighted regression onto dataset actions.
      const Vec adv = q_t - mlp_forward_batch(value.params, bt.s).col(0);
      const Mat a_pi = scale_to_bounds(actor.forward(bt.s), bounds);
      Mat da(b, static_cast<Eigen::Index>(ad));
      double al = 0.0;
      for (Eigen::Index i = 0; i < b; ++i) {
        const float w = static_cast<float>(std::min(std::exp(cfg.iql_beta * adv[i]), 100.0));
        const auto diff = a_pi.row(i) - bt.a.row(i);
        al += w * diff.cast<double>().squaredNorm();
        da.row(i) = 2.0f * w * inv_b * diff;
      }
      aloss += al * inv_b;
      actor.step(action_to_squashed_grad(da, bounds));

      soft_update(target, critic.params, cfg.target_tau);
    }
    const double denom = static_cast<double>(std::max<std::size_t>(nb, 1));
    closs /= denom;
    vloss /= denom;
    aloss /= denom;
    check_finite(closs, critic.params, "train_iql", epoch);
    check_finite(vloss, value.params, "train_iql", epoch);
    check_finite(aloss, actor.params, "train_iql", epoch);
    v.curve.critic_loss.push_back(closs);
    v.curve.value_loss.push_back(vloss);
    v.curve.actor_loss.push_back(aloss);
  }
  v.actor = std::move(actor.params);
  v.critic = std::move(critic.params);
  v.value = std::move(value.params);
  return v;
}

inline TrainedVictim train_bcq(const Dataset& d, VictimConfig cfg, const ActionBounds& bounds) {
  cfg.kind = VictimKind::kBcq;
  using namespace detail;
  TrainedVictim v = make_victim_shell(d, cfg, bounds);
  Rng rng(derive_seed(cfg.seed, 0xbc9));
  const std::size_t sd = d.state_dim(), ad = d.action_dim();
  Learner critic(make_mlp(widths(sd + ad, cfg.hidden, 1), Activation::kRelu, Activation::kLinear, rng), cfg.critic_lr);
  Learner behavior(make_mlp(widths(sd, cfg.hidden, ad), Activation::kRelu, Activation::kTanh, rng), cfg.actor_lr);
  MlpParams target = critic.params;
  v.bcq_phi = static_cast<float>(cfg.phi_for(bounds));
  v.bcq_offsets = Mat::Zero(static_cast<Eigen::Index>(cfg.bcq_candidates), static_cast<Eigen::Index>(ad));
  for (Eigen::Index j = 1; j < v.bcq_offsets.rows(); ++j) {
    for (Eigen::Index i = 0; i < v.bcq_offsets.cols(); ++i) v.bcq_offsets(j, i) = static_cast<float>(rng.uniform(-1.0, 1.0));
  }
  BatchSampler sampler(d, cfg.batch_size, rng);
  const auto gamma = static_cast<float>(cfg.gamma);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    sampler.shuffle();
    double closs = 0.0, bloss = 0.0;
    const std::size_t nb = sampler.batches_per_epoch();
    for (std::size_t k = 0; k < nb; ++k) {
      const Batch bt = sampler.get(k);
      const Eigen::Index b = bt.s.rows();
      const float inv_b = 1.0f / static_cast<float>(b);

      // Behavior model: mean-squared regression of a on s.
      const Mat a_bc = scale_to_bounds(behavior.forward(bt.s), bounds);
      const Mat diff = a_bc - bt.a;
      bloss += diff.cast<double>().squaredNorm() * inv_b;
      behavior.step(action_to_squashed_grad(Mat(2.0f * inv_b * diff), bounds));

      // Critic: TD with the candidate rule at s'.
      const Mat base_next = scale_to_bounds(mlp_forward_batch(behavior.params, bt.s_next), bounds);
      const Mat a_next = TrainedVictim::bcq_select(target, bt.s_next, base_next, v.bcq_offsets, v.bcq_phi, bounds);
      v.ood_critic_queries += static_cast<std::uint64_t>(b * v.bcq_offsets.rows());
      const Vec y = bt.r + gamma * bt.notdone.cwiseProduct(mlp_forward_batch(target, concat_columns(bt.s_next, a_next)).col(0));
      const Vec err = critic.forward(concat_columns(bt.s, bt.a)).col(0) - y;
      closs += err.cast<double>().squaredNorm() * inv_b;
      critic.step(Mat(2.0f * inv_b * err));

      soft_update(target, critic.params, cfg.target_tau);
    }
    const double denom = static_cast<double>(std::max<std::size_t>(nb, 1));
    closs /= denom;
    bloss /= denom;
    check_finite(closs, critic.params, "train_bcq", epoch);
    check_finite(bloss, behavior.params, "train_bcq", epoch);
    v.curve.critic_loss.push_back(closs);
    v.curve.actor_loss.push_back(bloss);
  }
  v.actor = std::move(behavior.params);
  v.critic = std::move(critic.params);
  return v;
}

inline TrainedVictim train_victim(const Dataset& d, const VictimConfig& cfg, const ActionBounds& bounds) {
  switch (cfg.kind) {
    case VictimKind::kCql: return train_cql(d, cfg, bounds);
    case VictimKind::kIql: return train_iql(d, cfg, bounds);
    case VictimKind::kBcq: return train_bcq(d, cfg, bounds);
  }
  throw ConfigError("unknown victim kind");
}

inline TrainedVictim train_victim(const Dataset& d, const VictimConfig& cfg) {
  return train_victim(d, cfg, make_env(d.env_name())->spec().bounds);
}

// ---------------------------------------------------------------------------
// Serialization

inline void save_victim(const TrainedVictim& v, const std::string& path) {
  NetworkBundle b;
  std::vector<float> offsets(v.bcq_offsets.data(), v.bcq_offsets.data() + v.bcq_offsets.size());
  b.meta = {{"kind", "victim"},
            {"algorithm", v.kind},
            {"state_dim", v.state_dim},
            {"action_dim", v.action_dim},
            {"low", std::vector<float>(v.bounds.low.data(), v.bounds.low.data() + v.bounds.low.size())},
            {"high", std::vector<float>(v.bounds.high.data(), v.bounds.high.data() + v.bounds.high.size())},
            {"bcq_phi", v.bcq_phi},
            {"bcq_offsets", offsets},
            {"bcq_candidates", v.bcq_offsets.rows()},
            {"config_fingerprint", v.config_fingerprint},
            {"dataset_hash", hex64(v.dataset_hash)},
            {"ood_critic_queries", v.ood_critic_queries}};
  b.networks.emplace("actor", v.actor);
  b.networks.emplace("critic", v.critic);
  if (!v.value.layers.empty()) b.networks.emplace("value", v.value);
  save_bundle(b, path);
}

inline TrainedVictim load_victim(const std::string& path) {
  NetworkBundle b = load_bundle(path);
  if (b.meta.value("kind", std::string()) != "victim") throw FormatError(path + ": not a victim parameter file");
  TrainedVictim v;
  v.kind = b.meta.at("algorithm").get<VictimKind>();
  v.state_dim = b.meta.at("state_dim").get<std::size_t>();
  v.action_dim = b.meta.at("action_dim").get<std::size_t>();
  v.bounds.low = to_vec(b.meta.at("low").get<std::vector<float>>());
  v.bounds.high = to_vec(b.meta.at("high").get<std::vector<float>>());
  v.bcq_phi = b.meta.at("bcq_phi").get<float>();
  const auto offsets = b.meta.at("bcq_offsets").get<std::vector<float>>();
  const auto rows = b.meta.at("bcq_candidates").get<Eigen::Index>();
  v.bcq_offsets.resize(rows, rows ? static_cast<Eigen::Index>(offsets.size()) / rows : 0);
  std::copy(offsets.begin(), offsets.end(), v.bcq_offsets.data());
  v.config_fingerprint = b.meta.at("config_fingerprint").get<std::string>();
  v.dataset_hash = parse_hex64(b.meta.at("dataset_hash").get<std::string>());
  v.ood_critic_queries = b.meta.at("ood_critic_queries").get<std::uint64_t>();
  v.actor = b.networks.at("actor");
  v.critic = b.networks.at("critic");
  if (auto it = b.networks.find("value"); it != b.networks.end()) v.value = it->second;
  return v;
}

}  // namespace csgba
