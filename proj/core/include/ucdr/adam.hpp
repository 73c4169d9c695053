#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ucdr/errors.hpp"
#include "ucdr/tensor.hpp"
#include "ucdr/util.hpp"

namespace ucdr {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adaptive-moment optimizer over a fixed list of parameter tensors. Moments
// are part of the training state and serialize into checkpoints.
template <typename T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(const std::vector<Tensor<T>>& params, const AdamConfig& cfg = {}) : cfg_(cfg), params_(params) {
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0) || !(cfg.epsilon > 0.0)) {
      throw ConfigError("adam: betas must lie in [0, 1) and epsilon must be positive");
    }
    for (const auto& p : params_) {
      m_.push_back(Tensor<T>::zeros(p.shape()));
      v_.push_back(Tensor<T>::zeros(p.shape()));
    }
  }

  // One bias-corrected update from the parameters' accumulated gradients;
  // missing gradients count as zero. Gradients are consumed (zeroed).
  void step(T lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto p = params_[i].data();
      auto m = m_[i].data();
      auto v = v_[i].data();
      const bool has = params_[i].has_grad();
      std::span<const T> g;
      if (has) {
        g = params_[i].grad();
        if (!all_finite(g)) {
          throw DivergenceError("adam: non-finite gradient for parameter " + std::to_string(i) + " at step " +
                                std::to_string(t_));
        }
      }
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = has ? static_cast<double>(g[j]) : 0.0;
        const double mj = cfg_.beta1 * static_cast<double>(m[j]) + (1.0 - cfg_.beta1) * gj;
        const double vj = cfg_.beta2 * static_cast<double>(v[j]) + (1.0 - cfg_.beta2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        p[j] -= static_cast<T>(static_cast<double>(lr) * (mj / c1) / (std::sqrt(vj / c2) + cfg_.epsilon));
      }
      if (has) params_[i].zero_grad();
    }
  }

  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) {
    if (t < 0) throw ContractError("adam: step counter must be nonnegative");
    t_ = t;
  }

  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const std::vector<Tensor<T>>& parameters() const { return params_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<Tensor<T>> params_;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace ucdr
