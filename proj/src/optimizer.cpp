#include "scnn/optimizer.hpp"

#include <cmath>
#include <stdexcept>

SCNN_NAMESPACE_BEGIN

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::sgd_momentum: return "sgd_momentum";
    case OptimizerKind::adam: return "adam";
  }
  return "unknown";
}

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "sgd_momentum") return OptimizerKind::sgd_momentum;
  if (name == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer '" + name + "'");
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) {
  if (!(config_.learning_rate > 0)) throw std::invalid_argument("learning rate must be positive");
}

void Optimizer::step(std::span<Tensor* const> params) {
  if (first_moment_.empty()) {
    first_moment_.resize(params.size());
    second_moment_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      first_moment_[i].assign(params[i]->size(), Real(0));
      if (config_.kind == OptimizerKind::adam) second_moment_[i].assign(params[i]->size(), Real(0));
    }
  }
  if (params.size() != first_moment_.size()) {
    throw std::invalid_argument("optimizer was built for " + std::to_string(first_moment_.size()) +
                                " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->size() != first_moment_[i].size()) {
      throw ShapeError("optimizer moment buffer does not match parameter " + std::to_string(i) + " of shape " +
                       to_string(params[i]->shape()));
    }
    if (params[i]->size() && !params[i]->has_grad()) {
      throw std::logic_error("optimizer step on parameter " + std::to_string(i) + " without a gradient");
    }
  }

  ++steps_;
  const Real lr = config_.learning_rate;
  const Real bias1 = Real(1) - std::pow(config_.beta1, static_cast<Real>(steps_));
  const Real bias2 = Real(1) - std::pow(config_.beta2, static_cast<Real>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto value = params[i]->data();
    auto grad = params[i]->grad();
    auto& m = first_moment_[i];
    switch (config_.kind) {
      case OptimizerKind::sgd:
        for (std::size_t j = 0; j < value.size(); ++j) value[j] -= lr * grad[j];
        break;
      case OptimizerKind::sgd_momentum:
        for (std::size_t j = 0; j < value.size(); ++j) {
          m[j] = config_.momentum * m[j] + grad[j];
          value[j] -= lr * m[j];
        }
        break;
      case OptimizerKind::adam: {
        auto& v = second_moment_[i];
        for (std::size_t j = 0; j < value.size(); ++j) {
          m[j] = config_.beta1 * m[j] + (1 - config_.beta1) * grad[j];
          v[j] = config_.beta2 * v[j] + (1 - config_.beta2) * grad[j] * grad[j];
          const Real m_hat = m[j] / bias1, v_hat = v[j] / bias2;
          value[j] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
        }
        break;
      }
    }
    params[i]->zero_grad();
  }
}

SCNN_NAMESPACE_END
