#pragma once

// Columnar transition store, its on-disk format, summary statistics, and the
// patch mechanics used to write poisoned rows.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "csgba/error.hpp"
#include "csgba/io.hpp"
#include "csgba/numeric.hpp"

namespace csgba {

struct Transition {
  Vec s;
  Vec a;
  float r = 0.0f;
  Vec s_next;
  bool done = false;
};

/// Immutable columnar dataset. done is stored as a 0/1 float column.
class Dataset {
 public:
  static constexpr const char* kFormat = "csgba-dataset";
  static constexpr int kVersion = 1;

  Dataset(std::string env_name, std::string provenance, Mat states, Mat actions,
          std::vector<float> rewards, Mat next_states, std::vector<float> dones)
      : env_name_(std::move(env_name)),
        provenance_(std::move(provenance)),
        states_(std::move(states)),
        actions_(std::move(actions)),
        rewards_(std::move(rewards)),
        next_states_(std::move(next_states)),
        dones_(std::move(dones)) {
    const auto n = static_cast<std::size_t>(states_.rows());
    if (n == 0) throw InvalidArgument("Dataset: needs at least one transition");
    if (static_cast<std::size_t>(actions_.rows()) != n || rewards_.size() != n ||
        static_cast<std::size_t>(next_states_.rows()) != n || dones_.size() != n) {
      throw DimensionError("Dataset: column lengths disagree");
    }
    if (next_states_.cols() != states_.cols()) throw DimensionError("Dataset: s and s_next widths differ");
    if (states_.cols() == 0 || actions_.cols() == 0) throw DimensionError("Dataset: zero-width column");
    if (!all_finite(states_) || !all_finite(actions_) || !all_finite(next_states_)) {
      throw NonFiniteError("Dataset: non-finite entry");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(rewards_[i])) throw NonFiniteError("Dataset: non-finite reward");
      if (dones_[i] != 0.0f && dones_[i] != 1.0f) throw InvalidArgument("Dataset: done must be 0 or 1");
    }
    hash_ = compute_hash();
  }

  std::size_t size() const { return static_cast<std::size_t>(states_.rows()); }
  std::size_t state_dim() const { return static_cast<std::size_t>(states_.cols()); }
  std::size_t action_dim() const { return static_cast<std::size_t>(actions_.cols()); }
  const std::string& env_name() const { return env_name_; }
  const std::string& provenance() const { return provenance_; }
  std::uint64_t content_hash() const { return hash_; }

  const Mat& states() const { return states_; }
  const Mat& actions() const { return actions_; }
  const std::vector<float>& rewards() const { return rewards_; }
  const Mat& next_states() const { return next_states_; }
  const std::vector<float>& dones() const { return dones_; }
  bool done(std::size_t i) const { return dones_.at(i) != 0.0f; }

  Transition row(std::size_t i) const {
    if (i >= size()) throw InvalidArgument("Dataset::row: index out of range");
    const auto r = static_cast<Eigen::Index>(i);
    return {states_.row(r).transpose(), actions_.row(r).transpose(), rewards_[i],
            next_states_.row(r).transpose(), dones_[i] != 0.0f};
  }

  /// Bitwise row equality against row j of another dataset of the same shape.
  bool row_identical(std::size_t i, const Dataset& other, std::size_t j) const {
    const auto ri = static_cast<Eigen::Index>(i), rj = static_cast<Eigen::Index>(j);
    auto same = [](const auto& x, const auto& y) {
      return std::memcmp(x.data(), y.data(), static_cast<std::size_t>(x.size()) * sizeof(float)) == 0;
    };
    return same(Vec(states_.row(ri).transpose()), Vec(other.states_.row(rj).transpose())) &&
           same(Vec(actions_.row(ri).transpose()), Vec(other.actions_.row(rj).transpose())) &&
           same(Vec(next_states_.row(ri).transpose()), Vec(other.next_states_.row(rj).transpose())) &&
           std::memcmp(&rewards_[i], &other.rewards_[j], sizeof(float)) == 0 &&
           std::memcmp(&dones_[i], &other.dones_[j], sizeof(float)) == 0;
  }

  Vec state_min() const { return states_.colwise().minCoeff().transpose(); }
  Vec state_max() const { return states_.colwise().maxCoeff().transpose(); }

  /// Payload in field order s, a, r, s_next, done.
  std::vector<float> payload() const {
    std::vector<float> out;
    out.reserve(static_cast<std::size_t>(states_.size() * 2 + actions_.size()) + 2 * size());
    out.insert(out.end(), states_.data(), states_.data() + states_.size());
    out.insert(out.end(), actions_.data(), actions_.data() + actions_.size());
    out.insert(out.end(), rewards_.begin(), rewards_.end());
    out.insert(out.end(), next_states_.data(), next_states_.data() + next_states_.size());
    out.insert(out.end(), dones_.begin(), dones_.end());
    return out;
  }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.env_name_ == b.env_name_ && a.provenance_ == b.provenance_ &&
           a.state_dim() == b.state_dim() && a.action_dim() == b.action_dim() &&
           a.size() == b.size() && a.payload() == b.payload();
  }

 private:
  std::uint64_t compute_hash() const {
    Fnv1a h;
    h.update({states_.data(), static_cast<std::size_t>(states_.size())});
    h.update({actions_.data(), static_cast<std::size_t>(actions_.size())});
    h.update(rewards_);
    h.update({next_states_.data(), static_cast<std::size_t>(next_states_.size())});
    h.update(dones_);
    return h.digest();
  }

  std::string env_name_;
  std::string provenance_;
  Mat states_;
  Mat actions_;
  std::vector<float> rewards_;
  Mat next_states_;
  std::vector<float> dones_;
  std::uint64_t hash_ = 0;
};

/// Row-at-a-time construction.
class DatasetBuilder {
 public:
  DatasetBuilder(std::string env_name, std::size_t state_dim, std::size_t action_dim)
      : env_name_(std::move(env_name)), state_dim_(state_dim), action_dim_(action_dim) {}

  void reserve(std::size_t n) {
    s_.reserve(n * state_dim_);
    a_.reserve(n * action_dim_);
    r_.reserve(n);
    sn_.reserve(n * state_dim_);
    d_.reserve(n);
  }

  void push(const Transition& t) {
    if (static_cast<std::size_t>(t.s.size()) != state_dim_ ||
        static_cast<std::size_t>(t.s_next.size()) != state_dim_ ||
        static_cast<std::size_t>(t.a.size()) != action_dim_) {
      throw DimensionError("DatasetBuilder: transition dims do not match");
    }
    s_.insert(s_.end(), t.s.data(), t.s.data() + t.s.size());
    a_.insert(a_.end(), t.a.data(), t.a.data() + t.a.size());
    r_.push_back(t.r);
    sn_.insert(sn_.end(), t.s_next.data(), t.s_next.data() + t.s_next.size());
    d_.push_back(t.done ? 1.0f : 0.0f);
  }

  std::size_t size() const { return r_.size(); }

  Dataset build(std::string provenance) const {
    const auto n = static_cast<Eigen::Index>(r_.size());
    auto to_mat = [n](const std::vector<float>& v, std::size_t cols) {
      Mat m(n, static_cast<Eigen::Index>(cols));
      std::copy(v.begin(), v.end(), m.data());
      return m;
    };
    return Dataset(env_name_, std::move(provenance), to_mat(s_, state_dim_), to_mat(a_, action_dim_), r_,
                   to_mat(sn_, state_dim_), d_);
  }

 private:
  std::string env_name_;
  std::size_t state_dim_;
  std::size_t action_dim_;
  std::vector<float> s_, a_, r_, sn_, d_;
};

// ---------------------------------------------------------------------------
// File format

inline void save_dataset(const Dataset& d, const std::string& path) {
  json h;
  h["format"] = Dataset::kFormat;
  h["version"] = Dataset::kVersion;
  h["env"] = d.env_name();
  h["provenance"] = d.provenance();
  h["state_dim"] = d.state_dim();
  h["action_dim"] = d.action_dim();
  h["n"] = d.size();
  const Vec lo = d.state_min(), hi = d.state_max();
  h["state_min"] = std::vector<float>(lo.data(), lo.data() + lo.size());
  h["state_max"] = std::vector<float>(hi.data(), hi.data() + hi.size());
  const auto payload = d.payload();
  write_artifact(path, std::move(h), payload);
}

inline Dataset load_dataset(const std::string& path) {
  ArtifactFile f = read_artifact(path, Dataset::kFormat, Dataset::kVersion);
  const auto sd = f.header.at("state_dim").get<std::size_t>();
  const auto ad = f.header.at("action_dim").get<std::size_t>();
  const auto n = f.header.at("n").get<std::size_t>();
  if (f.payload.size() != n * (2 * sd + ad + 2)) {
    throw TruncatedFile(path + ": payload size disagrees with header dims");
  }
  const float* p = f.payload.data();
  auto take_mat = [&](std::size_t cols) {
    Mat m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols));
    std::copy(p, p + n * cols, m.data());
    p += n * cols;
    return m;
  };
  auto take_vec = [&]() {
    std::vector<float> v(p, p + n);
    p += n;
    return v;
  };
  Mat s = take_mat(sd);
  Mat a = take_mat(ad);
  auto r = take_vec();
  Mat sn = take_mat(sd);
  auto d = take_vec();
  return Dataset(f.header.at("env").get<std::string>(), f.header.at("provenance").get<std::string>(),
                 std::move(s), std::move(a), std::move(r), std::move(sn), std::move(d));
}

// ---------------------------------------------------------------------------
// Patching

struct PatchSet {
  std::vector<std::pair<std::size_t, Transition>> rows;
};

/// Returns a copy of `d` with the patched rows replaced.
inline Dataset apply_patch(const Dataset& d, const PatchSet& patch, std::string provenance = {}) {
  std::set<std::size_t> seen;
  for (const auto& [idx, t] : patch.rows) {
    if (idx >= d.size()) {
      throw InvalidArgument("apply_patch: index " + std::to_string(idx) + " out of range [0, " +
                            std::to_string(d.size()) + ")");
    }
    if (!seen.insert(idx).second) {
      throw InvalidArgument("apply_patch: duplicate index " + std::to_string(idx));
    }
    if (static_cast<std::size_t>(t.s.size()) != d.state_dim() ||
        static_cast<std::size_t>(t.s_next.size()) != d.state_dim() ||
        static_cast<std::size_t>(t.a.size()) != d.action_dim()) {
      throw DimensionError("apply_patch: replacement row dims do not match dataset");
    }
  }
  Mat s = d.states(), a = d.actions(), sn = d.next_states();
  std::vector<float> r = d.rewards(), done = d.dones();
  for (const auto& [idx, t] : patch.rows) {
    const auto i = static_cast<Eigen::Index>(idx);
    s.row(i) = t.s.transpose();
    a.row(i) = t.a.transpose();
    r[idx] = t.r;
    sn.row(i) = t.s_next.transpose();
    done[idx] = t.done ? 1.0f : 0.0f;
  }
  return Dataset(d.env_name(), provenance.empty() ? d.provenance() : std::move(provenance), std::move(s),
                 std::move(a), std::move(r), std::move(sn), std::move(done));
}

/// Number of rows that are not bitwise identical between two equally sized datasets.
inline std::size_t count_differing_rows(const Dataset& a, const Dataset& b) {
  if (a.size() != b.size() || a.state_dim() != b.state_dim() || a.action_dim() != b.action_dim()) {
    throw DimensionError("count_differing_rows: shapes differ");
  }
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a.row_identical(i, b, i) ? 0 : 1;
  return n;
}

// ---------------------------------------------------------------------------
// Statistics

struct DatasetStats {
  std::uint64_t source_hash = 0;
  std::size_t count = 0;
  std::vector<double> state_min, state_max, state_mean, state_std;
  Mat correlation;  // Pearson over state columns
  std::vector<double> percentile_levels;
  std::vector<std::vector<float>> state_percentiles;  // [level][dim]
  std::vector<float> reward_percentiles;              // [level]
  float reward_min = 0.0f;
  float reward_max = 0.0f;
  std::vector<std::vector<float>> sorted_states;  // per dim, ascending
  std::vector<float> sorted_rewards;

  std::size_t state_dim() const { return sorted_states.size(); }

  float state_percentile(std::size_t dim, double p) const {
    if (dim >= sorted_states.size()) throw InvalidArgument("state_percentile: dimension out of range");
    return sorted_states[dim][nearest_rank_index(count, p)];
  }

  float reward_percentile(double p) const { return sorted_rewards[nearest_rank_index(count, p)]; }

  json to_json() const {
    json j;
    j["source_hash"] = hex64(source_hash);
    j["count"] = count;
    j["state_min"] = state_min;
    j["state_max"] = state_max;
    j["state_mean"] = state_mean;
    j["state_std"] = state_std;
    std::vector<std::vector<float>> r(static_cast<std::size_t>(correlation.rows()));
    for (Eigen::Index i = 0; i < correlation.rows(); ++i) {
      r[static_cast<std::size_t>(i)].assign(correlation.row(i).data(),
                                            correlation.row(i).data() + correlation.cols());
    }
    j["correlation"] = r;
    j["percentile_levels"] = percentile_levels;
    j["state_percentiles"] = state_percentiles;
    j["reward_percentiles"] = reward_percentiles;
    j["reward_min"] = reward_min;
    j["reward_max"] = reward_max;
    return j;
  }
};

inline DatasetStats compute_stats(const Dataset& d,
                                  const std::vector<double>& levels = {5.0, 25.0, 50.0, 75.0, 95.0}) {
  const std::size_t n = d.size();
  if (n < 2) throw InvalidArgument("compute_stats: need at least 2 transitions, got " + std::to_string(n));
  DatasetStats st;
  st.source_hash = d.content_hash();
  st.count = n;
  st.percentile_levels = levels;
  const std::size_t sd = d.state_dim();
  st.sorted_states.resize(sd);
  for (std::size_t k = 0; k < sd; ++k) {
    auto& col = st.sorted_states[k];
    col.resize(n);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      col[i] = d.states()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
      sum += col[i];
    }
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (float v : col) ss += (v - mean) * (v - mean);
    std::sort(col.begin(), col.end());
    st.state_min.push_back(col.front());
    st.state_max.push_back(col.back());
    st.state_mean.push_back(mean);
    st.state_std.push_back(std::sqrt(ss / static_cast<double>(n)));
  }
  st.sorted_rewards = d.rewards();
  std::sort(st.sorted_rewards.begin(), st.sorted_rewards.end());
  st.reward_min = st.sorted_rewards.front();
  st.reward_max = st.sorted_rewards.back();
  st.correlation = pearson_matrix(d.states());
  for (double p : levels) {
    std::vector<float> row(sd);
    for (std::size_t k = 0; k < sd; ++k) row[k] = st.state_percentile(k, p);
    st.state_percentiles.push_back(std::move(row));
    st.reward_percentiles.push_back(st.reward_percentile(p));
  }
  return st;
}

}  // namespace csgba
