#pragma once

#include <cstdint>
#include <vector>

#include "patchgen/nn/layers.hpp"

namespace patchgen {

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are kept per parameter in the order the
/// parameters were given.
template <typename T>
class Adam {
 public:
  Adam(std::vector<nn::Parameter<T>*> params, AdamOptions options);

  /// theta -= lr * m_hat / (sqrt(v_hat) + eps), using the accumulated grads.
  void step();

  const AdamOptions& options() const { return options_; }
  void set_lr(double lr) { options_.lr = lr; }
  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t steps) { steps_ = steps; }

  const std::vector<nn::Parameter<T>*>& parameters() const { return params_; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }

 private:
  std::vector<nn::Parameter<T>*> params_;
  AdamOptions options_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  std::uint64_t steps_ = 0;
};

}  // namespace patchgen
