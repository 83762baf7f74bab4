#pragma once

#include <span>
#include <string>
#include <vector>

#include "scnn/tensor.hpp"

SCNN_NAMESPACE_BEGIN

enum class OptimizerKind { sgd, sgd_momentum, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  Real learning_rate = Real(1e-3);
  Real momentum = Real(0.9);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real epsilon = Real(1e-8);
};

/// Owns per-parameter moment buffers. The parameter list passed to step()
/// must be the same (same order, same shapes) on every call.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  /// Applies one update from the populated gradients, then zeroes them.
  void step(std::span<Tensor* const> params);

  const OptimizerConfig& config() const { return config_; }
  long steps_taken() const { return steps_; }

 private:
  OptimizerConfig config_;
  long steps_ = 0;
  std::vector<std::vector<Real>> first_moment_;
  std::vector<std::vector<Real>> second_moment_;
};

SCNN_NAMESPACE_END
