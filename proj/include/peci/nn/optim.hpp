#pragma once

#include <cmath>
#include <vector>

#include "peci/nn/tensor.hpp"

namespace peci::nn {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Moments for each parameter plus the shared step counter.
template <class T>
struct AdamWState {
  AdamWConfig config{};
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  long long step = 0;

  static AdamWState for_params(const std::vector<Tensor<T>>& params, AdamWConfig cfg = {}) {
    AdamWState s;
    s.config = cfg;
    for (const auto& p : params) {
      s.m.emplace_back(p.numel(), T(0));
      s.v.emplace_back(p.numel(), T(0));
    }
    return s;
  }
};

/// One decoupled-weight-decay Adam update using each parameter's .grad().
/// Parameters without a gradient buffer are treated as having zero gradient.
template <class T>
void adamw_step(std::vector<Tensor<T>>& params, AdamWState<T>& state, double lr) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    fail(ErrorCode::ShapeMismatch, "optimizer state has " + std::to_string(state.m.size()) + " slots for " +
                                       std::to_string(params.size()) + " parameters");
  }
  const auto& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const double decay = 1.0 - lr * c.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.numel() || v.size() != p.numel()) {
      fail(ErrorCode::ShapeMismatch, "optimizer moment size mismatch for parameter " + std::to_string(i));
    }
    const bool has_grad = p.has_grad();
    auto values = p.values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = has_grad ? static_cast<double>(p.grad()[j]) : 0.0;
      double mj = c.beta1 * m[j] + (1.0 - c.beta1) * g;
      double vj = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = (mj / bc1) / (std::sqrt(vj / bc2) + c.eps);
      values[j] = static_cast<T>(static_cast<double>(values[j]) * decay - lr * update);
    }
  }
}

struct LrSchedule {
  double initial_lr = 1e-3;
  int total_epochs = 250;

  /// initial_lr * (1 - epoch / total_epochs).
  double at(int epoch) const {
    if (epoch < 0 || epoch > total_epochs) {
      fail(ErrorCode::EpochOutOfRange,
           "epoch " + std::to_string(epoch) + " outside [0," + std::to_string(total_epochs) + "]");
    }
    return initial_lr * (1.0 - static_cast<double>(epoch) / total_epochs);
  }
};

inline double lr_linear(const LrSchedule& schedule, int epoch) { return schedule.at(epoch); }

}  // namespace peci::nn
