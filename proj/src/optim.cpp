#include "patchgen/optim.hpp"

#include <cmath>

namespace patchgen {

template <typename T>
Adam<T>::Adam(std::vector<nn::Parameter<T>*> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  if (!(options_.lr >= 0) || !(options_.beta1 >= 0 && options_.beta1 < 1) ||
      !(options_.beta2 >= 0 && options_.beta2 < 1) || !(options_.eps > 0))
    fail(ErrorCategory::kConfig, "invalid Adam hyper-parameters");
  for (const nn::Parameter<T>* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

template <typename T>
void Adam<T>::step() {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const T b1 = static_cast<T>(options_.beta1);
  const T b2 = static_cast<T>(options_.beta2);
  const T correction1 = static_cast<T>(1.0 - std::pow(options_.beta1, t));
  const T correction2 = static_cast<T>(1.0 - std::pow(options_.beta2, t));
  const T lr = static_cast<T>(options_.lr);
  const T eps = static_cast<T>(options_.eps);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor<T>& value = params_[k]->value;
    const Tensor<T>& grad = params_[k]->grad;
    Tensor<T>& m = m_[k];
    Tensor<T>& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const T g = grad[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      const T m_hat = m[i] / correction1;
      const T v_hat = v[i] / correction2;
      value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace patchgen
