#include "patchgen/nn/layers.hpp"

#include <cmath>
#include <cstring>

#include <Eigen/Core>

namespace patchgen::nn {

namespace {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Matrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Matrix<T>>;

// NCHW <-> channel-major (C x N*P) matrices used around the GEMMs.
template <typename T>
void to_channel_major(const Tensor<T>& x, T* out) {
  const Shape& s = x.shape();
  const std::size_t plane = s.plane();
  const std::size_t row = static_cast<std::size_t>(s.n) * plane;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      std::memcpy(out + c * row + n * plane, x.data() + (static_cast<std::size_t>(n) * s.c + c) * plane,
                  plane * sizeof(T));
}

template <typename T>
void from_channel_major(const T* in, Tensor<T>& x) {
  const Shape& s = x.shape();
  const std::size_t plane = s.plane();
  const std::size_t row = static_cast<std::size_t>(s.n) * plane;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      std::memcpy(x.data() + (static_cast<std::size_t>(n) * s.c + c) * plane, in + c * row + n * plane,
                  plane * sizeof(T));
}

template <typename T>
void add_channel_bias(Tensor<T>& x, const Tensor<T>& bias) {
  const Shape& s = x.shape();
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      T* p = x.data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
      const T b = bias[c];
      for (std::size_t i = 0; i < plane; ++i) p[i] += b;
    }
}

template <typename T>
void accumulate_channel_sums(const Tensor<T>& grad, Tensor<T>& bias_grad) {
  const Shape& s = grad.shape();
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* p = grad.data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
      T sum = 0;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      bias_grad[c] += sum;
    }
}

template <typename T>
Parameter<T> make_param(std::string name, Shape shape, T fill, bool is_weight) {
  return Parameter<T>{std::move(name), Tensor<T>(shape, fill), Tensor<T>(shape), is_weight};
}

}  // namespace

template <typename T>
void im2col(const T* image, int batch, const ConvGeometry& g, T* cols) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  const std::size_t row_len = batch * plane;
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        T* row = cols + ((static_cast<std::size_t>(c) * g.kernel + ky) * g.kernel + kx) * row_len;
        for (int n = 0; n < batch; ++n) {
          const T* src = image + (static_cast<std::size_t>(n) * g.channels + c) * g.height * g.width;
          T* dst = row + n * plane;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            T* out = dst + oy * ow;
            if (iy < 0 || iy >= g.height) {
              std::fill(out, out + ow, T(0));
              continue;
            }
            const T* line = src + iy * g.width;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              out[ox] = (ix >= 0 && ix < g.width) ? line[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, int batch, const ConvGeometry& g, T* image) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  const std::size_t row_len = batch * plane;
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const T* row = cols + ((static_cast<std::size_t>(c) * g.kernel + ky) * g.kernel + kx) * row_len;
        for (int n = 0; n < batch; ++n) {
          T* dst = image + (static_cast<std::size_t>(n) * g.channels + c) * g.height * g.width;
          const T* src = row + n * plane;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.height) continue;
            T* line = dst + iy * g.width;
            const T* in = src + oy * ow;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              if (ix >= 0 && ix < g.width) line[ix] += in[ox];
            }
          }
        }
      }
    }
  }
}

// --- Conv2d ----------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride,
                  int pad, bool bias)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), pad_(pad),
      has_bias_(bias),
      weight_(make_param<T>(name + ".weight", {out_channels, in_channels, kernel, kernel}, T(0), true)),
      bias_(make_param<T>(name + ".bias", {1, out_channels, 1, 1}, T(0), false)) {}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Mode) {
  const Shape& s = x.shape();
  if (s.c != in_) fail(ErrorCategory::kShape, weight_.name + ": input has " + std::to_string(s.c) + " channels");
  input_shape_ = s;
  const ConvGeometry g{in_, s.h, s.w, kernel_, stride_, pad_};
  const int oh = g.out_height();
  const int ow = g.out_width();
  const Eigen::Index cols_n = static_cast<Eigen::Index>(s.n) * oh * ow;
  cols_.resize(static_cast<std::size_t>(g.rows()) * cols_n);
  im2col(x.data(), s.n, g, cols_.data());

  Matrix<T> y(out_, cols_n);
  y.noalias() = ConstMatMap<T>(weight_.value.data(), out_, g.rows()) *
                ConstMatMap<T>(cols_.data(), g.rows(), cols_n);
  Tensor<T> out(s.n, out_, oh, ow);
  from_channel_major(y.data(), out);
  if (has_bias_) add_channel_bias(out, bias_.value);
  return out;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out, bool need_input_grad) {
  const Shape& s = input_shape_;
  const ConvGeometry g{in_, s.h, s.w, kernel_, stride_, pad_};
  const Eigen::Index cols_n = static_cast<Eigen::Index>(s.n) * g.out_height() * g.out_width();
  require_shape(grad_out.shape(), {s.n, out_, g.out_height(), g.out_width()}, "Conv2d::backward");

  Matrix<T> dy(out_, cols_n);
  to_channel_major(grad_out, dy.data());
  const ConstMatMap<T> cols(cols_.data(), g.rows(), cols_n);
  MatMap<T>(weight_.grad.data(), out_, g.rows()).noalias() += dy * cols.transpose();
  if (has_bias_) accumulate_channel_sums(grad_out, bias_.grad);
  if (!need_input_grad) return {};

  Matrix<T> dcols(g.rows(), cols_n);
  dcols.noalias() = ConstMatMap<T>(weight_.value.data(), out_, g.rows()).transpose() * dy;
  Tensor<T> dx(s);
  col2im(dcols.data(), s.n, g, dx.data());
  return dx;
}

template <typename T>
void Conv2d<T>::collect_parameters(std::vector<Parameter<T>*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

// --- ConvTranspose2d -------------------------------------------------------

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(std::string name, int in_channels, int out_channels, int kernel,
                                    int stride, bool bias)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), has_bias_(bias),
      weight_(make_param<T>(name + ".weight", {in_channels, out_channels, kernel, kernel}, T(0), true)),
      bias_(make_param<T>(name + ".bias", {1, out_channels, 1, 1}, T(0), false)) {}

template <typename T>
ConvGeometry ConvTranspose2d<T>::output_geometry(int height, int width) const {
  return {out_, height * stride_, width * stride_, kernel_, stride_, (kernel_ - 1) / 2};
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::forward(const Tensor<T>& x, Mode) {
  const Shape& s = x.shape();
  if (s.c != in_) fail(ErrorCategory::kShape, weight_.name + ": input has " + std::to_string(s.c) + " channels");
  input_shape_ = s;
  const ConvGeometry g = output_geometry(s.h, s.w);
  const Eigen::Index cols_n = static_cast<Eigen::Index>(s.n) * s.h * s.w;
  input_mat_.resize(static_cast<std::size_t>(in_) * cols_n);
  to_channel_major(x, input_mat_.data());

  Matrix<T> cols(g.rows(), cols_n);
  cols.noalias() = ConstMatMap<T>(weight_.value.data(), in_, g.rows()).transpose() *
                   ConstMatMap<T>(input_mat_.data(), in_, cols_n);
  Tensor<T> out(s.n, out_, g.height, g.width);
  col2im(cols.data(), s.n, g, out.data());
  if (has_bias_) add_channel_bias(out, bias_.value);
  return out;
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::backward(const Tensor<T>& grad_out, bool need_input_grad) {
  const Shape& s = input_shape_;
  const ConvGeometry g = output_geometry(s.h, s.w);
  require_shape(grad_out.shape(), {s.n, out_, g.height, g.width}, "ConvTranspose2d::backward");
  const Eigen::Index cols_n = static_cast<Eigen::Index>(s.n) * s.h * s.w;

  Matrix<T> dcols(g.rows(), cols_n);
  im2col(grad_out.data(), s.n, g, dcols.data());
  const ConstMatMap<T> x(input_mat_.data(), in_, cols_n);
  MatMap<T>(weight_.grad.data(), in_, g.rows()).noalias() += x * dcols.transpose();
  if (has_bias_) accumulate_channel_sums(grad_out, bias_.grad);
  if (!need_input_grad) return {};

  Matrix<T> dx_mat(in_, cols_n);
  dx_mat.noalias() = ConstMatMap<T>(weight_.value.data(), in_, g.rows()) * dcols;
  Tensor<T> dx(s);
  from_channel_major(dx_mat.data(), dx);
  return dx;
}

template <typename T>
void ConvTranspose2d<T>::collect_parameters(std::vector<Parameter<T>*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

// --- Dense -----------------------------------------------------------------

template <typename T>
Dense<T>::Dense(std::string name, int in_features, Shape out_item, bool bias)
    : in_(in_features), out_item_(out_item), has_bias_(bias),
      weight_(make_param<T>(name + ".weight", {static_cast<int>(out_item.per_item()), in_features, 1, 1},
                            T(0), true)),
      bias_(make_param<T>(name + ".bias", {1, static_cast<int>(out_item.per_item()), 1, 1}, T(0), false)) {}

template <typename T>
Tensor<T> Dense<T>::forward(const Tensor<T>& x, Mode) {
  if (static_cast<int>(x.shape().per_item()) != in_)
    fail(ErrorCategory::kShape, weight_.name + ": expected " + std::to_string(in_) + " input features, got " +
                                    to_string(x.shape()));
  input_ = x;
  const int n = x.n();
  const int out = static_cast<int>(out_item_.per_item());
  Tensor<T> y(n, out_item_.c, out_item_.h, out_item_.w);
  MatMap<T> ym(y.data(), n, out);
  ym.noalias() = ConstMatMap<T>(x.data(), n, in_) * ConstMatMap<T>(weight_.value.data(), out, in_).transpose();
  if (has_bias_) ym.rowwise() += ConstMatMap<T>(bias_.value.data(), 1, out).row(0);
  return y;
}

template <typename T>
Tensor<T> Dense<T>::backward(const Tensor<T>& grad_out, bool need_input_grad) {
  const int n = input_.n();
  const int out = static_cast<int>(out_item_.per_item());
  require_shape(grad_out.shape(), {n, out_item_.c, out_item_.h, out_item_.w}, "Dense::backward");
  const ConstMatMap<T> dy(grad_out.data(), n, out);
  MatMap<T>(weight_.grad.data(), out, in_).noalias() += dy.transpose() * ConstMatMap<T>(input_.data(), n, in_);
  if (has_bias_) MatMap<T>(bias_.grad.data(), 1, out) += dy.colwise().sum();
  if (!need_input_grad) return {};
  Tensor<T> dx(input_.shape());
  MatMap<T>(dx.data(), n, in_).noalias() = dy * ConstMatMap<T>(weight_.value.data(), out, in_);
  return dx;
}

template <typename T>
void Dense<T>::collect_parameters(std::vector<Parameter<T>*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

// --- BatchNorm -------------------------------------------------------------

template <typename T>
BatchNorm<T>::BatchNorm(std::string name, int channels, T momentum, T eps)
    : channels_(channels), momentum_(momentum), eps_(eps),
      gamma_(make_param<T>(name + ".gamma", {1, channels, 1, 1}, T(1), false)),
      beta_(make_param<T>(name + ".beta", {1, channels, 1, 1}, T(0), false)),
      running_mean_(1, channels, 1, 1, T(0)),
      running_var_(1, channels, 1, 1, T(1)),
      name_(std::move(name)) {}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x, Mode mode) {
  const Shape& s = x.shape();
  if (s.c != channels_) fail(ErrorCategory::kShape, name_ + ": channel mismatch");
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * plane;
  batch_stats_ = mode != Mode::kInference;
  normalized_ = Tensor<T>(s);
  inv_std_.assign(channels_, T(0));
  Tensor<T> y(s);
  for (int c = 0; c < channels_; ++c) {
    T mean, var;
    if (batch_stats_) {
      double sum = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const T* p = x.data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      const double m = sum / count;
      double sq = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const T* p = x.data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - m) * (p[i] - m);
      }
      mean = static_cast<T>(m);
      var = static_cast<T>(sq / count);
      if (mode == Mode::kTrain) {
        const T unbiased = count > 1 ? static_cast<T>(sq / (count - 1)) : var;
        running_mean_[c] = momentum_ * running_mean_[c] + (T(1) - momentum_) * mean;
        running_var_[c] = momentum_ * running_var_[c] + (T(1) - momentum_) * unbiased;
      }
    } else {
      mean = running_mean_[c];
      var = running_var_[c];
    }
    const T inv = T(1) / std::sqrt(var + eps_);
    inv_std_[c] = inv;
    const T g = gamma_.value[c];
    const T b = beta_.value[c];
    for (int n = 0; n < s.n; ++n) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T xh = (x[base + i] - mean) * inv;
        normalized_[base + i] = xh;
        y[base + i] = g * xh + b;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm<T>::backward(const Tensor<T>& grad_out, bool need_input_grad) {
  const Shape& s = normalized_.shape();
  require_shape(grad_out.shape(), s, "BatchNorm::backward");
  const std::size_t plane = s.plane();
  const T count = static_cast<T>(static_cast<double>(s.n) * plane);
  Tensor<T> dx;
  if (need_input_grad) dx = Tensor<T>(s);
  for (int c = 0; c < channels_; ++c) {
    T sum_dy = 0, sum_dy_xh = 0;
    for (int n = 0; n < s.n; ++n) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += grad_out[base + i];
        sum_dy_xh += grad_out[base + i] * normalized_[base + i];
      }
    }
    gamma_.grad[c] += sum_dy_xh;
    beta_.grad[c] += sum_dy;
    if (!need_input_grad) continue;
    const T scale = gamma_.value[c] * inv_std_[c];
    for (int n = 0; n < s.n; ++n) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T dy = grad_out[base + i];
        dx[base + i] = batch_stats_
                           ? scale * (dy - sum_dy / count - normalized_[base + i] * sum_dy_xh / count)
                           : scale * dy;
      }
    }
  }
  return dx;
}

template <typename T>
void BatchNorm<T>::collect_parameters(std::vector<Parameter<T>*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

template <typename T>
void BatchNorm<T>::collect_buffers(std::vector<Buffer<T>>& out) {
  out.push_back({name_ + ".running_mean", &running_mean_});
  out.push_back({name_ + ".running_var", &running_var_});
}

// --- Activate --------------------------------------------------------------

template <typename T>
Tensor<T> Activate<T>::forward(const Tensor<T>& x, Mode) {
  Tensor<T> y(x.shape());
  const std::size_t size = x.size();
  switch (kind_) {
    case Activation::kIdentity:
      y = x;
      break;
    case Activation::kRelu:
      for (std::size_t i = 0; i < size; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
      break;
    case Activation::kLeakyRelu:
      for (std::size_t i = 0; i < size; ++i) y[i] = x[i] > T(0) ? x[i] : slope_ * x[i];
      break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < size; ++i) y[i] = T(1) / (T(1) + std::exp(-x[i]));
      break;
    case Activation::kTanh:
      for (std::size_t i = 0; i < size; ++i) y[i] = std::tanh(x[i]);
      break;
  }
  output_ = y;
  return y;
}

template <typename T>
Tensor<T> Activate<T>::backward(const Tensor<T>& grad_out, bool need_input_grad) {
  if (!need_input_grad) return {};
  require_shape(grad_out.shape(), output_.shape(), "Activate::backward");
  Tensor<T> dx(grad_out.shape());
  const std::size_t size = dx.size();
  switch (kind_) {
    case Activation::kIdentity:
      dx = grad_out;
      break;
    case Activation::kRelu:
      for (std::size_t i = 0; i < size; ++i) dx[i] = output_[i] > T(0) ? grad_out[i] : T(0);
      break;
    case Activation::kLeakyRelu:
      for (std::size_t i = 0; i < size; ++i) dx[i] = output_[i] > T(0) ? grad_out[i] : slope_ * grad_out[i];
      break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < size; ++i) dx[i] = grad_out[i] * output_[i] * (T(1) - output_[i]);
      break;
    case Activation::kTanh:
      for (std::size_t i = 0; i < size; ++i) dx[i] = grad_out[i] * (T(1) - output_[i] * output_[i]);
      break;
  }
  return dx;
}

// --- Sequential ------------------------------------------------------------

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> h = x;
  for (auto& layer : layers_) h = layer->forward(h, mode);
  return h;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& grad_out, bool need_input_grad) {
  Tensor<T> g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g, i > 0 || need_input_grad);
  return g;
}

template <typename T>
void Sequential<T>::collect_parameters(std::vector<Parameter<T>*>& out) {
  for (auto& layer : layers_) layer->collect_parameters(out);
}

template <typename T>
void Sequential<T>::collect_buffers(std::vector<Buffer<T>>& out) {
  for (auto& layer : layers_) layer->collect_buffers(out);
}

template <typename T>
void init_normal(std::vector<Parameter<T>*> params, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> normal(0.0, stddev);
  for (Parameter<T>* p : params) {
    if (!p->is_weight) continue;
    for (T& v : p->value.values()) v = static_cast<T>(normal(rng));
  }
}

#define PATCHGEN_INSTANTIATE_LAYERS(T)                                         \
  template void im2col<T>(const T*, int, const ConvGeometry&, T*);             \
  template void col2im<T>(const T*, int, const ConvGeometry&, T*);             \
  template class Conv2d<T>;                                                     \
  template class ConvTranspose2d<T>;                                            \
  template class Dense<T>;                                                      \
  template class BatchNorm<T>;                                                  \
  template class Activate<T>;                                                   \
  template class Sequential<T>;                                                 \
  template void init_normal<T>(std::vector<Parameter<T>*>, std::mt19937_64&, double);
PATCHGEN_INSTANTIATE_LAYERS(float)
PATCHGEN_INSTANTIATE_LAYERS(double)
#undef PATCHGEN_INSTANTIATE_LAYERS

}  // namespace patchgen::nn
