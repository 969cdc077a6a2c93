#pragma once

#include <functional>
#include <span>
#include <utility>

#include "csgba/env.hpp"
#include "csgba/numeric.hpp"

namespace csgba {

/// Deterministic observation -> action map.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual Vec act(std::span<const float> observation) const = 0;
};

class FunctionPolicy final : public Policy {
 public:
  explicit FunctionPolicy(std::function<Vec(std::span<const float>)> fn) : fn_(std::move(fn)) {}
  Vec act(std::span<const float> observation) const override { return fn_(observation); }

 private:
  std::function<Vec(std::span<const float>)> fn_;
};

class ExpertPolicy final : public Policy {
 public:
  explicit ExpertPolicy(const Environment& env) : env_(env) {}
  Vec act(std::span<const float> observation) const override { return env_.expert_action(observation); }

 private:
  const Environment& env_;
};

}  // namespace csgba
