#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "patchgen/tensor.hpp"

namespace patchgen::nn {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool is_weight = true;  // weights get N(0, std) init, the rest keep their fill
};

template <typename T>
struct Buffer {
  std::string name;
  Tensor<T>* value;
};

// kTrain: batch statistics, running averages updated.
// kTrainFrozen: batch statistics, running averages left alone.
// kInference: running averages.
enum class Mode { kTrain, kTrainFrozen, kInference };

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  // Accumulates parameter gradients; returns dL/dx (empty when !need_input_grad).
  virtual Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad) = 0;
  virtual void collect_parameters(std::vector<Parameter<T>*>&) {}
  virtual void collect_buffers(std::vector<Buffer<T>>&) {}
};

struct ConvGeometry {
  int channels, height, width;  // input
  int kernel, stride, pad;
  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  int rows() const { return channels * kernel * kernel; }
};

// cols: rows() x (batch * out_h * out_w), row-major.
template <typename T>
void im2col(const T* image, int batch, const ConvGeometry& g, T* cols);
template <typename T>
void col2im(const T* cols, int batch, const ConvGeometry& g, T* image);

/// Convolution; weight is out x (in*k*k).
template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int pad,
         bool bias);
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad) override;
  void collect_parameters(std::vector<Parameter<T>*>& out) override;

 private:
  int in_, out_, kernel_, stride_, pad_;
  bool has_bias_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Shape input_shape_;
  std::vector<T> cols_;
};

/// Fractionally strided convolution with output = stride * input, i.e. the
/// adjoint of Conv2d(kernel, stride, pad = (kernel-1)/2) on the doubled grid.
/// Weight is in x (out*k*k).
template <typename T>
class ConvTranspose2d final : public Layer<T> {
 public:
  ConvTranspose2d(std::string name, int in_channels, int out_channels, int kernel, int stride,
                  bool bias);
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad) override;
  void collect_parameters(std::vector<Parameter<T>*>& out) override;

 private:
  ConvGeometry output_geometry(int height, int width) const;

  int in_, out_, kernel_, stride_;
  bool has_bias_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Shape input_shape_;
  std::vector<T> input_mat_;  // in x (batch * h * w)
};

/// Fully connected map between flattened items; output is reshaped to
/// (n, out_c, out_h, out_w).
template <typename T>
class Dense final : public Layer<T> {
 public:
  Dense(std::string name, int in_features, Shape out_item, bool bias);
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad) override;
  void collect_parameters(std::vector<Parameter<T>*>& out) override;

 private:
  int in_;
  Shape out_item_;
  bool has_bias_;
  Parameter<T> weight_;  // out x in
  Parameter<T> bias_;
  Tensor<T> input_;
};

template <typename T>
class BatchNorm final : public Layer<T> {
 public:
  BatchNorm(std::string name, int channels, T momentum = T(0.9), T eps = T(1e-5));
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad) override;
  void collect_parameters(std::vector<Parameter<T>*>& out) override;
  void collect_buffers(std::vector<Buffer<T>>& out) override;

 private:
  int channels_;
  T momentum_, eps_;
  Parameter<T> gamma_;
  Parameter<T> beta_;
  Tensor<T> running_mean_;
  Tensor<T> running_var_;
  std::string name_;
  bool batch_stats_ = true;
  Tensor<T> normalized_;
  std::vector<T> inv_std_;
};

enum class Activation { kIdentity, kRelu, kLeakyRelu, kSigmoid, kTanh };

template <typename T>
class Activate final : public Layer<T> {
 public:
  explicit Activate(Activation kind, T slope = T(0.2)) : kind_(kind), slope_(slope) {}
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad) override;

 private:
  Activation kind_;
  T slope_;
  Tensor<T> output_;
};

/// Layers applied in order.
template <typename T>
class Sequential {
 public:
  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad);
  void collect_parameters(std::vector<Parameter<T>*>& out);
  void collect_buffers(std::vector<Buffer<T>>& out);
  bool empty() const { return layers_.empty(); }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

/// Fills every weight parameter with N(0, stddev); biases and batch-norm
/// parameters keep their constructor values.
template <typename T>
void init_normal(std::vector<Parameter<T>*> params, std::mt19937_64& rng, double stddev);

}  // namespace patchgen::nn
