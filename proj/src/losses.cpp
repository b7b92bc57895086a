#include "patchgen/losses.hpp"

#include <cmath>

namespace patchgen {

namespace {

template <typename T>
void require_mask_for(const Tensor<T>& mask, const Tensor<T>& image, const char* what) {
  const Shape& m = mask.shape();
  const Shape& s = image.shape();
  if (m.c != 1 || m.n != s.n || m.h != s.h || m.w != s.w)
    fail(ErrorCategory::kShape, std::string(what) + ": mask " + to_string(m) + " vs image " + to_string(s));
}

template <typename T>
T sign(T v) {
  return static_cast<T>((v > T(0)) - (v < T(0)));
}

template <typename T>
T clamped_log(T p) {
  return std::log(std::max(p, static_cast<T>(kLogClamp)));
}

// d/dp log(max(p, clamp)).
template <typename T>
T clamped_log_grad(T p) {
  return p < static_cast<T>(kLogClamp) ? T(0) : T(1) / p;
}

// Appends `weight * mean log(p)` (or log(1 - p)) to the loss and its gradient.
template <typename T>
Tensor<T> add_log_term(AdversarialLoss<T>& loss, const Tensor<T>& probs, bool complement, T weight) {
  const T count = static_cast<T>(probs.size());
  Tensor<T> grad(probs.shape());
  T sum = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const T p = complement ? T(1) - probs[i] : probs[i];
    sum += clamped_log(p);
    const T d = clamped_log_grad(p) * weight / count;
    grad[i] = complement ? -d : d;
  }
  const T term = weight * sum / count;
  loss.value += term;
  loss.terms.push_back(term);
  return grad;
}

}  // namespace

template <typename T>
Tensor<T> compose(const Tensor<T>& mask, const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(b.shape(), a.shape(), "compose");
  require_mask_for(mask, a, "compose");
  const Shape& s = a.shape();
  const std::size_t plane = s.plane();
  Tensor<T> out(s);
  for (int n = 0; n < s.n; ++n) {
    const T* m = mask.item(n).data();
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[base + i] = m[i] * a[base + i] + (T(1) - m[i]) * b[base + i];
    }
  }
  return out;
}

template <typename T>
T spatial_loss(const Tensor<T>& pred, const Tensor<T>& truth) {
  require_shape(truth.shape(), pred.shape(), "spatial_loss");
  if (pred.empty()) return T(0);
  T sum = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += std::abs(pred[i] - truth[i]);
  return sum / static_cast<T>(pred.size());
}

template <typename T>
Tensor<T> spatial_loss_grad(const Tensor<T>& pred, const Tensor<T>& truth) {
  require_shape(truth.shape(), pred.shape(), "spatial_loss_grad");
  Tensor<T> grad(pred.shape());
  const T scale = T(1) / static_cast<T>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) grad[i] = sign(pred[i] - truth[i]) * scale;
  return grad;
}

template <typename T>
T appearance_loss(const Tensor<T>& gen, const Tensor<T>& pred_mask, const Tensor<T>& real,
                  const Tensor<T>& real_mask) {
  require_shape(real.shape(), gen.shape(), "appearance_loss");
  require_mask_for(pred_mask, gen, "appearance_loss");
  require_mask_for(real_mask, gen, "appearance_loss");
  const Shape& s = gen.shape();
  const std::size_t plane = s.plane();
  T sum = 0;
  for (int n = 0; n < s.n; ++n) {
    const T* mp = pred_mask.item(n).data();
    const T* mt = real_mask.item(n).data();
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) sum += std::abs(gen[base + i] * mp[i] - real[base + i] * mt[i]);
    }
  }
  return gen.empty() ? T(0) : sum / static_cast<T>(gen.size());
}

template <typename T>
AppearanceGrads<T> appearance_loss_grad(const Tensor<T>& gen, const Tensor<T>& pred_mask,
                                        const Tensor<T>& real, const Tensor<T>& real_mask) {
  require_shape(real.shape(), gen.shape(), "appearance_loss_grad");
  require_mask_for(pred_mask, gen, "appearance_loss_grad");
  require_mask_for(real_mask, gen, "appearance_loss_grad");
  const Shape& s = gen.shape();
  const std::size_t plane = s.plane();
  const T scale = T(1) / static_cast<T>(gen.size());
  AppearanceGrads<T> grads{Tensor<T>(s), Tensor<T>(pred_mask.shape())};
  for (int n = 0; n < s.n; ++n) {
    const T* mp = pred_mask.item(n).data();
    const T* mt = real_mask.item(n).data();
    T* dmp = grads.pred_mask.item(n).data();
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T r = sign(gen[base + i] * mp[i] - real[base + i] * mt[i]) * scale;
        grads.gen[base + i] = r * mp[i];
        dmp[i] += r * gen[base + i];
      }
    }
  }
  return grads;
}

template <typename T>
CompositeBatch<T> build_composites(const Tensor<T>& gen, const Tensor<T>& y, const Tensor<T>& y_prime,
                                   const Tensor<T>& mask) {
  require_shape(y.shape(), gen.shape(), "build_composites");
  require_shape(y_prime.shape(), gen.shape(), "build_composites");
  require_mask_for(mask, gen, "build_composites");
  Tensor<T> inverse(mask.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) inverse[i] = T(1) - mask[i];
  CompositeBatch<T> batch;
  batch.families[0] = gen;
  batch.families[1] = compose(mask, gen, y);
  batch.families[2] = compose(inverse, gen, y);
  batch.families[3] = compose(mask, y_prime, y);
  batch.families[4] = compose(inverse, y_prime, y);
  return batch;
}

template <typename T>
Tensor<T> composite_grad_to_gen(std::span<const Tensor<T>> family_grads, const Tensor<T>& mask) {
  if (family_grads.size() != CompositeBatch<T>::kGeneratorFamilies)
    fail(ErrorCategory::kShape, "composite_grad_to_gen expects three family gradients");
  const Shape& s = family_grads[0].shape();
  require_mask_for(mask, family_grads[0], "composite_grad_to_gen");
  const std::size_t plane = s.plane();
  Tensor<T> grad = family_grads[0];
  for (int n = 0; n < s.n; ++n) {
    const T* m = mask.item(n).data();
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i)
        grad[base + i] += m[i] * family_grads[1][base + i] + (T(1) - m[i]) * family_grads[2][base + i];
    }
  }
  return grad;
}

template <typename T>
AdversarialLoss<T> discriminator_loss(const Tensor<T>& d_real, std::span<const Tensor<T>> d_fakes) {
  AdversarialLoss<T> loss;
  if (!d_real.empty()) loss.grad_real = add_log_term(loss, d_real, false, T(-1));
  for (const Tensor<T>& fake : d_fakes) loss.grad_fakes.push_back(add_log_term(loss, fake, true, T(-1)));
  return loss;
}

template <typename T>
AdversarialLoss<T> generator_adversarial_loss(std::span<const Tensor<T>> d_fakes, bool saturating) {
  AdversarialLoss<T> loss;
  for (const Tensor<T>& fake : d_fakes)
    loss.grad_fakes.push_back(saturating ? add_log_term(loss, fake, true, T(1))
                                         : add_log_term(loss, fake, false, T(-1)));
  return loss;
}

template <typename T>
AdversarialLoss<T> baseline_adversarial_loss(const Tensor<T>& d_real, const Tensor<T>& d_gen) {
  return discriminator_loss<T>(d_real, std::span<const Tensor<T>>(&d_gen, 1));
}

template <typename T>
AdversarialLoss<T> baseline_generator_loss(const Tensor<T>& d_gen, bool saturating) {
  return generator_adversarial_loss<T>(std::span<const Tensor<T>>(&d_gen, 1), saturating);
}

LossWeights lambda_schedule(int epoch, int total) {
  if (total < 1 || epoch < 0 || epoch > total)
    fail(ErrorCategory::kConfig, "lambda_schedule needs 0 <= epoch <= total and total >= 1");
  const double lambda = std::pow(10.0, -2.0 - 2.0 * static_cast<double>(epoch) / total);
  return {lambda, lambda, epoch, total};
}

#define PATCHGEN_INSTANTIATE_LOSSES(T)                                                              \
  template Tensor<T> compose<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template T spatial_loss<T>(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> spatial_loss_grad<T>(const Tensor<T>&, const Tensor<T>&);                      \
  template T appearance_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,               \
                                const Tensor<T>&);                                                  \
  template AppearanceGrads<T> appearance_loss_grad<T>(const Tensor<T>&, const Tensor<T>&,           \
                                                      const Tensor<T>&, const Tensor<T>&);          \
  template CompositeBatch<T> build_composites<T>(const Tensor<T>&, const Tensor<T>&,                \
                                                 const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> composite_grad_to_gen<T>(std::span<const Tensor<T>>, const Tensor<T>&);        \
  template AdversarialLoss<T> discriminator_loss<T>(const Tensor<T>&, std::span<const Tensor<T>>);  \
  template AdversarialLoss<T> generator_adversarial_loss<T>(std::span<const Tensor<T>>, bool);      \
  template AdversarialLoss<T> baseline_adversarial_loss<T>(const Tensor<T>&, const Tensor<T>&);     \
  template AdversarialLoss<T> baseline_generator_loss<T>(const Tensor<T>&, bool);
PATCHGEN_INSTANTIATE_LOSSES(float)
PATCHGEN_INSTANTIATE_LOSSES(double)
#undef PATCHGEN_INSTANTIATE_LOSSES

}  // namespace patchgen
