#pragma once

#include <array>
#include <span>
#include <vector>

#include "patchgen/tensor.hpp"

namespace patchgen {

// Lower clamp for log arguments.
inline constexpr double kLogClamp = 1e-8;

/// M * a + (1 - M) * b with the single-channel mask broadcast over channels.
template <typename T>
Tensor<T> compose(const Tensor<T>& mask, const Tensor<T>& a, const Tensor<T>& b);

/// Mean absolute difference (per-image means averaged over the batch).
template <typename T>
T spatial_loss(const Tensor<T>& pred, const Tensor<T>& truth);
template <typename T>
Tensor<T> spatial_loss_grad(const Tensor<T>& pred, const Tensor<T>& truth);

/// Mean | gen * pred_mask - real * real_mask |.
template <typename T>
T appearance_loss(const Tensor<T>& gen, const Tensor<T>& pred_mask, const Tensor<T>& real,
                  const Tensor<T>& real_mask);

template <typename T>
struct AppearanceGrads {
  Tensor<T> gen;
  Tensor<T> pred_mask;
};
template <typename T>
AppearanceGrads<T> appearance_loss_grad(const Tensor<T>& gen, const Tensor<T>& pred_mask,
                                        const Tensor<T>& real, const Tensor<T>& real_mask);

/// The five fake families, in order: generated; M*gen + (1-M)*y;
/// (1-M)*gen + M*y; M*y' + (1-M)*y; (1-M)*y' + M*y. M is the true mask.
template <typename T>
struct CompositeBatch {
  static constexpr int kFamilies = 5;
  static constexpr int kGeneratorFamilies = 3;
  std::array<Tensor<T>, kFamilies> families;
};

template <typename T>
CompositeBatch<T> build_composites(const Tensor<T>& gen, const Tensor<T>& y, const Tensor<T>& y_prime,
                                   const Tensor<T>& mask);

/// Chain rule from the three generator-dependent families back to `gen`.
template <typename T>
Tensor<T> composite_grad_to_gen(std::span<const Tensor<T>> family_grads, const Tensor<T>& mask);

template <typename T>
struct AdversarialLoss {
  T value = 0;
  std::vector<T> terms;   // signed contribution of each term to `value`
  Tensor<T> grad_real;    // empty when there is no real term
  std::vector<Tensor<T>> grad_fakes;
};

/// -[mean log D(y) + sum_f mean log(1 - D(fake_f))]. With one fake family
/// this is the two-term baseline objective. An empty `d_real` drops the real
/// term, which lets callers evaluate one term at a time.
template <typename T>
AdversarialLoss<T> discriminator_loss(const Tensor<T>& d_real, std::span<const Tensor<T>> d_fakes);

/// Non-saturating: -sum_f mean log D(fake_f). The saturating form is
/// sum_f mean log(1 - D(fake_f)).
template <typename T>
AdversarialLoss<T> generator_adversarial_loss(std::span<const Tensor<T>> d_fakes, bool saturating = false);

template <typename T>
AdversarialLoss<T> baseline_adversarial_loss(const Tensor<T>& d_real, const Tensor<T>& d_gen);
template <typename T>
AdversarialLoss<T> baseline_generator_loss(const Tensor<T>& d_gen, bool saturating = false);

struct LossWeights {
  double lambda1 = 1e-2;  // spatial
  double lambda2 = 1e-2;  // appearance
  int epoch = 0;
  int total_epochs = 1;
};

/// lambda = 10^(-2 - 2 * epoch / total) for both weights.
LossWeights lambda_schedule(int epoch, int total);

template <typename T>
T total_generator_objective(T adversarial, T spatial, T appearance, const LossWeights& weights) {
  return adversarial + static_cast<T>(weights.lambda1) * spatial + static_cast<T>(weights.lambda2) * appearance;
}

}  // namespace patchgen
