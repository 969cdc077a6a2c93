#pragma once

// The attacker's proxy critic: fitted Q-iteration on the clean dataset, and
// per-transition absolute TD errors against it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "csgba/dataset.hpp"
#include "csgba/error.hpp"
#include "csgba/io.hpp"
#include "csgba/numeric.hpp"
#include "csgba/param_file.hpp"

namespace csgba {

struct ProxyConfig {
  double gamma = 0.95;
  std::size_t epochs = 60;
  std::size_t batch_size = 256;
  float learning_rate = 1e-3f;
  std::size_t target_sync_interval = 50;  // gradient steps between target copies
  std::size_t candidates = 16;             // K in the max over next actions
  std::vector<std::size_t> hidden = {64, 64};
  std::uint64_t seed = 0;

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("proxy.gamma must be in (0, 1)");
    if (candidates < 1) throw ConfigError("proxy.candidates must be >= 1");
    if (batch_size < 1) throw ConfigError("proxy.batch_size must be >= 1");
    if (target_sync_interval < 1) throw ConfigError("proxy.target_sync_interval must be >= 1");
    if (!(learning_rate > 0.0f)) throw ConfigError("proxy.learning_rate must be > 0");
  }

  json to_json() const {
    return {{"gamma", gamma},         {"epochs", epochs},
            {"batch_size", batch_size}, {"learning_rate", learning_rate},
            {"target_sync_interval", target_sync_interval},
            {"candidates", candidates}, {"hidden", hidden},
            {"seed", seed}};
  }

  static ProxyConfig from_json(const json& j) {
    ProxyConfig c;
    c.gamma = j.value("gamma", c.gamma);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.target_sync_interval = j.value("target_sync_interval", c.target_sync_interval);
    c.candidates = j.value("candidates", c.candidates);
    c.hidden = j.value("hidden", c.hidden);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }
};

/// Row-wise concatenation [s | a].
inline Mat concat_columns(const Mat& s, const Mat& a) {
  if (s.rows() != a.rows()) throw DimensionError("concat_columns: row counts differ");
  Mat x(s.rows(), s.cols() + a.cols());
  x.leftCols(s.cols()) = s;
  x.rightCols(a.cols()) = a;
  return x;
}

/// Critic mapping concat(s, a) to a scalar.
struct QNetwork {
  MlpParams net;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  std::uint64_t source_hash = 0;  // dataset the critic was trained on
  ProxyConfig config;

  static QNetwork from_params(MlpParams p, std::size_t state_dim, std::size_t action_dim) {
    if (p.input_dim() != state_dim + action_dim || p.output_dim() != 1) {
      throw DimensionError("QNetwork: network must map state_dim + action_dim inputs to 1 output");
    }
    QNetwork q;
    q.net = std::move(p);
    q.state_dim = state_dim;
    q.action_dim = action_dim;
    return q;
  }

  float value(std::span<const float> s, std::span<const float> a) const {
    if (s.size() != state_dim || a.size() != action_dim) throw DimensionError("QNetwork::value: bad dims");
    Vec x(static_cast<Eigen::Index>(state_dim + action_dim));
    std::copy(s.begin(), s.end(), x.data());
    std::copy(a.begin(), a.end(), x.data() + state_dim);
    return mlp_forward(net, as_span(x))[0];
  }

  Vec values(const Mat& s, const Mat& a) const { return mlp_forward_batch(net, concat_columns(s, a)).col(0); }

  /// dQ/da at (s, a).
  Vec action_gradient(std::span<const float> s, std::span<const float> a) const {
    Vec x(static_cast<Eigen::Index>(state_dim + action_dim));
    std::copy(s.begin(), s.end(), x.data());
    std::copy(a.begin(), a.end(), x.data() + state_dim);
    const float one = 1.0f;
    auto g = mlp_gradients(net, as_span(x), std::span<const float>(&one, 1));
    return g.input.tail(static_cast<Eigen::Index>(action_dim));
  }
};

inline void save_qnetwork(const QNetwork& q, const std::string& path) {
  NetworkBundle b;
  b.meta = {{"kind", "proxy-critic"},
            {"state_dim", q.state_dim},
            {"action_dim", q.action_dim},
            {"source_hash", hex64(q.source_hash)},
            {"config", q.config.to_json()}};
  b.networks.emplace("critic", q.net);
  save_bundle(b, path);
}

inline QNetwork load_qnetwork(const std::string& path) {
  NetworkBundle b = load_bundle(path);
  if (b.meta.value("kind", std::string()) != "proxy-critic") throw FormatError(path + ": not a proxy critic");
  QNetwork q = QNetwork::from_params(b.networks.at("critic"), b.meta.at("state_dim").get<std::size_t>(),
                                     b.meta.at("action_dim").get<std::size_t>());
  q.source_hash = parse_hex64(b.meta.at("source_hash").get<std::string>());
  q.config = ProxyConfig::from_json(b.meta.at("config"));
  return q;
}

// ---------------------------------------------------------------------------
// Max over next actions

/// Candidate set for the continuous max: the zero action followed by K-1
/// actions drawn uniformly (with replacement) from the dataset.
inline Mat proxy_candidates(const Dataset& d, std::size_t k, Rng& rng) {
  if (k < 1) throw InvalidArgument("proxy_candidates: K must be >= 1");
  Mat c = Mat::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d.action_dim()));
  for (std::size_t j = 1; j < k; ++j) {
    c.row(static_cast<Eigen::Index>(j)) = d.actions().row(static_cast<Eigen::Index>(rng.below(d.size())));
  }
  return c;
}

inline Mat proxy_candidates(const Dataset& d, const ProxyConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, 0xca4d));
  return proxy_candidates(d, cfg.candidates, rng);
}

/// max_j Q(s_next_i, c_j) for every row of s_next.
inline Vec q_max_batch(const MlpParams& q, const Mat& s_next, const Mat& candidates) {
  const Eigen::Index n = s_next.rows(), k = candidates.rows();
  const Eigen::Index sd = s_next.cols(), ad = candidates.cols();
  Vec best = Vec::Constant(n, -std::numeric_limits<float>::infinity());
  constexpr Eigen::Index kChunk = 4096;
  const Eigen::Index rows_per_chunk = std::max<Eigen::Index>(1, kChunk / k);
  for (Eigen::Index start = 0; start < n; start += rows_per_chunk) {
    const Eigen::Index m = std::min(rows_per_chunk, n - start);
    Mat x(m * k, sd + ad);
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < k; ++j) {
        x.row(i * k + j).head(sd) = s_next.row(start + i);
        x.row(i * k + j).tail(ad) = candidates.row(j);
      }
    }
    const Mat y = mlp_forward_batch(q, x);
    for (Eigen::Index i = 0; i < m; ++i) {
      best[start + i] = y.col(0).segment(i * k, k).maxCoeff();
    }
  }
  return best;
}

inline float q_max(const QNetwork& q, std::span<const float> s_next, const Mat& candidates) {
  Mat s(1, static_cast<Eigen::Index>(s_next.size()));
  std::copy(s_next.begin(), s_next.end(), s.data());
  return q_max_batch(q.net, s, candidates)[0];
}

inline float q_max(const QNetwork& q, std::span<const float> s_next, const Dataset& d, const ProxyConfig& cfg) {
  return q_max(q, s_next, proxy_candidates(d, cfg));
}

// ---------------------------------------------------------------------------
// Training

struct ProxyTrainingLog {
  std::vector<double> epoch_loss;
  /// epoch_loss / mean(y^2): squared TD residual relative to the target scale.
  std::vector<double> relative_loss;
};

/// Fitted Q-iteration against a target copy synced every
/// `target_sync_interval` steps, for a fixed epoch budget.
inline QNetwork train_proxy(const Dataset& d, const ProxyConfig& cfg, ProxyTrainingLog* log = nullptr) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0x9a0c));
  std::vector<std::size_t> widths{d.state_dim() + d.action_dim()};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(1);
  QNetwork q = QNetwork::from_params(make_mlp(widths, Activation::kRelu, Activation::kLinear, rng),
                                     d.state_dim(), d.action_dim());
  q.source_hash = d.content_hash();
  q.config = cfg;
  MlpParams target = q.net;
  OptimState opt = OptimState::for_params(q.net, OptimizerKind::kAdam, cfg.learning_rate);
  opt.max_grad_norm = 10.0f;
  MlpGradients grads = MlpGradients::zeros_like(q.net);
  ForwardCache cache;

  const std::size_t n = d.size();
  const std::size_t batch = std::min(cfg.batch_size, n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  const auto sd = static_cast<Eigen::Index>(d.state_dim());
  const auto ad = static_cast<Eigen::Index>(d.action_dim());
  const auto gamma = static_cast<float>(cfg.gamma);
  std::size_t steps = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double loss_sum = 0.0, target_sq = 0.0;
    std::size_t loss_batches = 0;
    for (std::size_t start = 0; start + batch <= n; start += batch) {
      const auto b = static_cast<Eigen::Index>(batch);
      Mat x(b, sd + ad), sn(b, sd);
      Vec r(b), notdone(b);
      for (Eigen::Index i = 0; i < b; ++i) {
        const auto row = static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(i)]);
        x.row(i).head(sd) = d.states().row(row);
        x.row(i).tail(ad) = d.actions().row(row);
        sn.row(i) = d.next_states().row(row);
        r[i] = d.rewards()[static_cast<std::size_t>(row)];
        notdone[i] = 1.0f - d.dones()[static_cast<std::size_t>(row)];
      }
      const Mat cand = proxy_candidates(d, cfg.candidates, rng);
      const Vec y = r + gamma * notdone.cwiseProduct(q_max_batch(target, sn, cand));
      const Mat out = mlp_forward_batch(q.net, x, &cache);
      const Vec err = out.col(0) - y;
      loss_sum += err.cast<double>().squaredNorm() / static_cast<double>(b);
      target_sq += y.cast<double>().squaredNorm() / static_cast<double>(b);
      ++loss_batches;
      Mat up = (2.0f / static_cast<float>(b)) * err;
      grads.set_zero();
      mlp_backward_batch(q.net, cache, up, &grads);
      optimizer_step(q.net, grads, opt);
      if (++steps % cfg.target_sync_interval == 0) target = q.net;
    }
    const double epoch_loss = loss_batches ? loss_sum / static_cast<double>(loss_batches) : 0.0;
    if (!std::isfinite(epoch_loss) || !q.net.finite()) {
      throw DivergenceError("train_proxy: non-finite loss at epoch " + std::to_string(epoch) +
                            " (learning rate " + std::to_string(cfg.learning_rate) + " too high?)");
    }
    if (log) {
      log->epoch_loss.push_back(epoch_loss);
      log->relative_loss.push_back(target_sq > 0.0 ? loss_sum / target_sq : 0.0);
    }
  }
  return q;
}

// ---------------------------------------------------------------------------
// TD errors

struct TdScores {
  std::vector<float> values;
  std::uint64_t source_hash = 0;
  std::string config_fingerprint;
};

/// |r + gamma * max_a' Q(s', a') - Q(s, a)|, with the bootstrap term masked on done rows.
inline TdScores td_errors(const Dataset& d, const QNetwork& q, const ProxyConfig& cfg) {
  cfg.validate();
  if (d.state_dim() != q.state_dim || d.action_dim() != q.action_dim) {
    throw DimensionError("td_errors: critic dims do not match dataset");
  }
  const Mat cand = proxy_candidates(d, cfg);
  const Vec qsa = q.values(d.states(), d.actions());
  const Vec qmax = q_max_batch(q.net, d.next_states(), cand);
  TdScores out;
  out.values.resize(d.size());
  const auto gamma = static_cast<float>(cfg.gamma);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const float boot = d.done(i) ? 0.0f : gamma * qmax[ii];
    const float delta = std::abs(d.rewards()[i] + boot - qsa[ii]);
    if (!std::isfinite(delta)) throw NonFiniteError("td_errors: non-finite TD error at row " + std::to_string(i));
    out.values[i] = delta;
  }
  out.source_hash = d.content_hash();
  out.config_fingerprint = fingerprint(cfg.to_json());
  return out;
}

inline TdScores td_errors(const Dataset& d, const QNetwork& q) { return td_errors(d, q, q.config); }

}  // namespace csgba
