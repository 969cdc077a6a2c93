#pragma once

// Small deterministic numerical kernel: dense float matrices (Eigen-backed),
// multilayer perceptrons with exact reverse-mode gradients, SGD/Adam, and the
// two statistics the attack depends on (Pearson correlation, nearest-rank
// percentile). Storage is float; reductions accumulate in double.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "csgba/error.hpp"

namespace csgba {

using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXf;
using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::span<const float> as_span(const Vec& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

inline Vec to_vec(std::span<const float> s) {
  Vec v(static_cast<Eigen::Index>(s.size()));
  std::copy(s.begin(), s.end(), v.data());
  return v;
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (!std::isfinite(static_cast<double>(m.reshaped()(i)))) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Seeding and random numbers

/// splitmix64 finalizer; used to derive independent seed streams.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return mix_seed(mix_seed(base) ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

/// mt19937_64 with hand-written distributions. The standard library's
/// distributions are implementation-defined, which would break
/// cross-toolchain reproducibility of datasets and trained weights.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix_seed(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (second variate cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Uniform integer in [0, n), unbiased.
  std::size_t below(std::size_t n) {
    if (n == 0) throw InvalidArgument("Rng::below: empty range");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return static_cast<std::size_t>(x % bound);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// k distinct indices from [0, n), in draw order (partial Fisher-Yates).
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k,
                                                           Rng& rng) {
  if (k > n) throw InvalidArgument("sample_without_replacement: k > n");
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.below(n - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

// ---------------------------------------------------------------------------
// Multilayer perceptron

enum class Activation { kLinear, kRelu, kTanh };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kLinear: return "linear";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "linear") return Activation::kLinear;
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  throw FormatError("unknown activation '" + s + "'");
}

struct DenseLayer {
  Mat weight;  // out x in
  Vec bias;    // out
  Activation activation = Activation::kLinear;

  Eigen::Index in() const { return weight.cols(); }
  Eigen::Index out() const { return weight.rows(); }
};

struct MlpParams {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const {
    return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().in());
  }
  std::size_t output_dim() const {
    return layers.empty() ? 0 : static_cast<std::size_t>(layers.back().out());
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }
  bool finite() const {
    for (const auto& l : layers) {
      if (!all_finite(l.weight) || !all_finite(l.bias)) return false;
    }
    return true;
  }

  /// Exact equality of shapes, activations and every weight.
  friend bool operator==(const MlpParams& a, const MlpParams& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      const auto &x = a.layers[i], &y = b.layers[i];
      if (x.activation != y.activation || x.weight.rows() != y.weight.rows() || x.weight.cols() != y.weight.cols() ||
          x.bias.size() != y.bias.size() || x.weight != y.weight || x.bias != y.bias) {
        return false;
      }
    }
    return true;
  }
};

/// Layer widths {in, h1, ..., out}; hidden layers share one activation.
/// Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline MlpParams make_mlp(std::span<const std::size_t> widths, Activation hidden,
                          Activation output, Rng& rng) {
  if (widths.size() < 2) throw InvalidArgument("make_mlp: need at least input and output width");
  MlpParams p;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(widths[l]);
    const auto out = static_cast<Eigen::Index>(widths[l + 1]);
    if (in <= 0 || out <= 0) throw InvalidArgument("make_mlp: zero-width layer");
    DenseLayer layer;
    layer.weight.resize(out, in);
    layer.bias.resize(out);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
      layer.weight.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
    }
    for (Eigen::Index i = 0; i < out; ++i) layer.bias[i] = static_cast<float>(rng.uniform(-bound, bound));
    layer.activation = (l + 2 == widths.size()) ? output : hidden;
    p.layers.push_back(std::move(layer));
  }
  return p;
}

inline MlpParams make_mlp(std::initializer_list<std::size_t> widths, Activation hidden,
                          Activation output, Rng& rng) {
  const std::vector<std::size_t> w(widths);
  return make_mlp(std::span<const std::size_t>(w), hidden, output, rng);
}

namespace detail {

inline void activate(Mat& z, Activation a) {
  switch (a) {
    case Activation::kLinear: break;
    case Activation::kRelu: z = z.cwiseMax(0.0f); break;
    case Activation::kTanh: z = z.array().tanh().matrix(); break;
  }
}

// Multiplies g in place by the activation derivative evaluated at pre-activation z.
inline void activation_backward(Mat& g, const Mat& z, Activation a) {
  switch (a) {
    case Activation::kLinear: break;
    case Activation::kRelu: g.array() *= (z.array() > 0.0f).cast<float>(); break;
    case Activation::kTanh: {
      const auto t = z.array().tanh();
      g.array() *= (1.0f - t * t);
      break;
    }
  }
}

}  // namespace detail

/// Per-layer inputs and pre-activations recorded by a batched forward pass.
struct ForwardCache {
  std::vector<Mat> inputs;
  std::vector<Mat> pre;
};

/// Batched forward pass; rows of x are samples.
inline Mat mlp_forward_batch(const MlpParams& p, const Mat& x, ForwardCache* cache = nullptr) {
  if (p.layers.empty()) throw DimensionError("mlp_forward: network has no layers");
  if (cache) {
    cache->inputs.resize(p.layers.size());
    cache->pre.resize(p.layers.size());
  }
  Mat h = x;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& layer = p.layers[l];
    if (h.cols() != layer.in()) {
      throw DimensionError("mlp_forward: layer " + std::to_string(l) + " expects input width " +
                           std::to_string(layer.in()) + ", got " + std::to_string(h.cols()));
    }
    Mat z = h * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    if (cache) {
      cache->inputs[l] = std::move(h);
      cache->pre[l] = z;
    }
    detail::activate(z, layer.activation);
    h = std::move(z);
  }
  return h;
}

inline Vec mlp_forward(const MlpParams& p, std::span<const float> input) {
  if (input.size() != p.input_dim()) {
    throw DimensionError("mlp_forward: layer 0 expects input width " + std::to_string(p.input_dim()) +
                         ", got " + std::to_string(input.size()));
  }
  Mat x(1, static_cast<Eigen::Index>(input.size()));
  std::copy(input.begin(), input.end(), x.data());
  Mat y = mlp_forward_batch(p, x);
  return y.row(0).transpose();
}

struct MlpGradients {
  std::vector<Mat> weight;
  std::vector<Vec> bias;

  static MlpGradients zeros_like(const MlpParams& p) {
    MlpGradients g;
    for (const auto& l : p.layers) {
      g.weight.push_back(Mat::Zero(l.weight.rows(), l.weight.cols()));
      g.bias.push_back(Vec::Zero(l.bias.size()));
    }
    return g;
  }

  void set_zero() {
    for (auto& w : weight) w.setZero();
    for (auto& b : bias) b.setZero();
  }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& w : weight) s += w.cast<double>().squaredNorm();
    for (const auto& b : bias) s += b.cast<double>().squaredNorm();
    return s;
  }

  void scale(float c) {
    for (auto& w : weight) w *= c;
    for (auto& b : bias) b *= c;
  }
};

/// Reverse pass for d(sum of upstream .* output). Parameter gradients are
/// accumulated into `grads` when given; returns the gradient w.r.t. the input batch.
inline Mat mlp_backward_batch(const MlpParams& p, const ForwardCache& cache, const Mat& upstream,
                              MlpGradients* grads) {
  if (cache.pre.size() != p.layers.size()) {
    throw DimensionError("mlp_backward: cache does not belong to this network");
  }
  if (upstream.cols() != p.layers.back().out() || upstream.rows() != cache.pre.back().rows()) {
    throw DimensionError("mlp_backward: upstream shape does not match output layer " +
                         std::to_string(p.layers.size() - 1));
  }
  Mat g = upstream;
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const auto& layer = p.layers[l];
    detail::activation_backward(g, cache.pre[l], layer.activation);
    if (grads) {
      grads->weight[l].noalias() += g.transpose() * cache.inputs[l];
      grads->bias[l] += g.colwise().sum().transpose();
    }
    Mat next = g * layer.weight;
    g = std::move(next);
  }
  return g;
}

struct MlpGradResult {
  MlpGradients params;
  Vec input;
};

/// Exact gradients of upstream^T * f(input) w.r.t. parameters and input.
inline MlpGradResult mlp_gradients(const MlpParams& p, std::span<const float> input,
                                   std::span<const float> upstream) {
  if (input.size() != p.input_dim()) {
    throw DimensionError("mlp_gradients: layer 0 expects input width " + std::to_string(p.input_dim()) +
                         ", got " + std::to_string(input.size()));
  }
  if (upstream.size() != p.output_dim()) {
    throw DimensionError("mlp_gradients: upstream length " + std::to_string(upstream.size()) +
                         " does not match output layer " + std::to_string(p.layers.size() - 1) +
                         " width " + std::to_string(p.output_dim()));
  }
  Mat x(1, static_cast<Eigen::Index>(input.size()));
  std::copy(input.begin(), input.end(), x.data());
  ForwardCache cache;
  mlp_forward_batch(p, x, &cache);
  Mat up(1, static_cast<Eigen::Index>(upstream.size()));
  std::copy(upstream.begin(), upstream.end(), up.data());
  MlpGradResult r{MlpGradients::zeros_like(p), Vec()};
  Mat gx = mlp_backward_batch(p, cache, up, &r.params);
  r.input = gx.row(0).transpose();
  return r;
}

/// target <- (1 - tau) * target + tau * source
inline void soft_update(MlpParams& target, const MlpParams& source, float tau) {
  for (std::size_t l = 0; l < target.layers.size(); ++l) {
    target.layers[l].weight = (1.0f - tau) * target.layers[l].weight + tau * source.layers[l].weight;
    target.layers[l].bias = (1.0f - tau) * target.layers[l].bias + tau * source.layers[l].bias;
  }
}

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { kSgd, kAdam };

struct OptimState {
  OptimizerKind kind = OptimizerKind::kAdam;
  float learning_rate = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  float max_grad_norm = 0.0f;  // 0 disables clipping
  MlpGradients first;
  MlpGradients second;
  std::uint64_t step = 0;

  static OptimState for_params(const MlpParams& p, OptimizerKind kind, float lr) {
    OptimState s;
    s.kind = kind;
    s.learning_rate = lr;
    if (kind == OptimizerKind::kAdam) {
      s.first = MlpGradients::zeros_like(p);
      s.second = MlpGradients::zeros_like(p);
    }
    return s;
  }
};

/// One descent step; `grads` is consumed (it may be rescaled by clipping).
inline void optimizer_step(MlpParams& p, MlpGradients& grads, OptimState& s) {
  if (grads.weight.size() != p.layers.size()) {
    throw DimensionError("optimizer_step: gradient layer count mismatch");
  }
  if (s.max_grad_norm > 0.0f) {
    const double norm = std::sqrt(grads.squared_norm());
    if (norm > s.max_grad_norm) grads.scale(static_cast<float>(s.max_grad_norm / norm));
  }
  ++s.step;
  if (s.kind == OptimizerKind::kSgd) {
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      p.layers[l].weight -= s.learning_rate * grads.weight[l];
      p.layers[l].bias -= s.learning_rate * grads.bias[l];
    }
    return;
  }
  if (s.first.weight.size() != p.layers.size()) {
    throw DimensionError("optimizer_step: moment accumulators do not mirror parameters");
  }
  const double t = static_cast<double>(s.step);
  const float c1 = static_cast<float>(1.0 / (1.0 - std::pow(s.beta1, t)));
  const float c2 = static_cast<float>(1.0 / (1.0 - std::pow(s.beta2, t)));
  const float b1 = s.beta1, b2 = s.beta2, lr = s.learning_rate, eps = s.epsilon;
  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    m = b1 * m + (1.0f - b1) * g;
    v = b2 * v + (1.0f - b2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() * c1) / ((v.array() * c2).sqrt() + eps);
  };
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    update(p.layers[l].weight, grads.weight[l], s.first.weight[l], s.second.weight[l]);
    update(p.layers[l].bias, grads.bias[l], s.first.bias[l], s.second.bias[l]);
  }
}

// ---------------------------------------------------------------------------
// Statistics

/// Pearson correlation between the columns of an N x D sample matrix.
/// Zero-variance columns correlate 0 with every other column and 1 with themselves.
inline Mat pearson_matrix(const Mat& samples) {
  const Eigen::Index n = samples.rows();
  const Eigen::Index d = samples.cols();
  if (n < 2) throw InvalidArgument("pearson_matrix: need at least 2 samples, got " + std::to_string(n));
  if (!all_finite(samples)) throw NonFiniteError("pearson_matrix: non-finite input");
  MatD x = samples.cast<double>();
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const MatD cov = x.transpose() * x;
  Mat r(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      if (i == j) {
        r(i, j) = 1.0f;
        continue;
      }
      const double denom = std::sqrt(cov(i, i) * cov(j, j));
      double c = denom > 0.0 ? cov(i, j) / denom : 0.0;
      c = std::clamp(c, -1.0, 1.0);
      r(i, j) = static_cast<float>(c);
    }
  }
  return r;
}

/// Zero-based position of the nearest-rank p-th percentile in a sorted
/// sample of size n: rank ceil(p/100 * n), 1-indexed.
inline std::size_t nearest_rank_index(std::size_t n, double p) {
  if (n == 0) throw InvalidArgument("nearest_rank_index: empty sample");
  if (!(p > 0.0 && p <= 100.0)) {
    throw InvalidArgument("percentile p must be in (0, 100], got " + std::to_string(p));
  }
  // p*n/100 rather than (p/100)*n keeps integer products exact.
  const double exact = p * static_cast<double>(n) / 100.0;
  auto rank = static_cast<std::size_t>(std::ceil(exact - 1e-9));
  return std::clamp<std::size_t>(rank, 1, n) - 1;
}

/// Element at 1-indexed rank ceil(p/100 * n) of the ascending sort; p in (0, 100].
inline float percentile_nearest_rank(std::span<const float> values, double p) {
  if (values.empty()) throw InvalidArgument("percentile_nearest_rank: empty input");
  const std::size_t rank = nearest_rank_index(values.size(), p) + 1;
  for (float v : values) {
    if (!std::isfinite(v)) throw NonFiniteError("percentile_nearest_rank: non-finite input");
  }
  std::vector<float> copy(values.begin(), values.end());
  std::nth_element(copy.begin(), copy.begin() + static_cast<std::ptrdiff_t>(rank - 1), copy.end());
  return copy[rank - 1];
}

}  // namespace csgba
