#pragma once

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "peg/error.hpp"

namespace peg {

enum class OptimizerKind { kAdamW, kSgd };

inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::kAdamW ? "adamw" : "sgd"; }

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adamw") return OptimizerKind::kAdamW;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw ValidationError("unknown optimizer '" + std::string(s) + "' (expected adamw|sgd)");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdamW;
  double lr = 1e-2;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One parameter block and its gradient; shapes must match.
struct ParamBlock {
  std::span<double> value;
  std::span<const double> grad;
};

/// AdamW with decoupled weight decay, or plain gradient descent. Moment buffers
/// are bound to the order of blocks passed to step(), which must not change
/// across calls.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {}) : config_(config) {}

  const OptimizerConfig& config() const noexcept { return config_; }
  long steps() const noexcept { return steps_; }

  void step(std::span<const ParamBlock> blocks) {
    if (first_.empty()) {
      for (const auto& b : blocks) {
        first_.emplace_back(b.value.size(), 0.0);
        second_.emplace_back(b.value.size(), 0.0);
      }
    }
    require(first_.size() == blocks.size(), "optimizer_step: parameter block count changed");
    ++steps_;
    const double lr = config_.lr;
    const double wd = config_.weight_decay;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      auto value = blocks[b].value;
      auto grad = blocks[b].grad;
      require(value.size() == grad.size() && value.size() == first_[b].size(),
              "optimizer_step: shape mismatch in block " + std::to_string(b));
      if (config_.kind == OptimizerKind::kSgd) {
        for (std::size_t i = 0; i < value.size(); ++i) value[i] -= lr * (grad[i] + wd * value[i]);
        continue;
      }
      auto& m = first_[b];
      auto& v = second_[b];
      for (std::size_t i = 0; i < value.size(); ++i) {
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * grad[i];
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        value[i] -= lr * (m_hat / (std::sqrt(v_hat) + config_.eps) + wd * value[i]);
      }
    }
  }

 private:
  OptimizerConfig config_;
  long steps_ = 0;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
};

}  // namespace peg
