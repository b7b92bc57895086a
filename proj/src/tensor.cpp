#include "patchgen/tensor.hpp"

#include <cmath>
#include <cstring>

namespace patchgen {

std::string to_string(const Shape& shape) {
  return "[" + std::to_string(shape.n) + "," + std::to_string(shape.c) + "," +
         std::to_string(shape.h) + "," + std::to_string(shape.w) + "]";
}

void require_shape(const Shape& actual, const Shape& expected, const char* what) {
  if (!(actual == expected)) {
    fail(ErrorCategory::kShape, std::string(what) + ": expected " + to_string(expected) +
                                    ", got " + to_string(actual));
  }
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> parts) {
  if (parts.empty()) fail(ErrorCategory::kShape, "concat_channels: no inputs");
  const Shape& first = parts.front()->shape();
  int channels = 0;
  for (const Tensor<T>* p : parts) {
    const Shape& s = p->shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      fail(ErrorCategory::kShape,
           "concat_channels: " + to_string(s) + " incompatible with " + to_string(first));
    }
    channels += s.c;
  }
  Tensor<T> out(first.n, channels, first.h, first.w);
  const std::size_t plane = first.plane();
  for (int n = 0; n < first.n; ++n) {
    T* dst = out.item(n).data();
    for (const Tensor<T>* p : parts) {
      const std::size_t count = p->shape().c * plane;
      std::memcpy(dst, p->item(n).data(), count * sizeof(T));
      dst += count;
    }
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& whole, std::span<const int> channels) {
  const Shape& s = whole.shape();
  int total = 0;
  for (int c : channels) total += c;
  if (total != s.c) fail(ErrorCategory::kShape, "split_channels: channel counts do not sum");
  std::vector<Tensor<T>> out;
  out.reserve(channels.size());
  for (int c : channels) out.emplace_back(s.n, c, s.h, s.w);
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    const T* src = whole.item(n).data();
    for (Tensor<T>& piece : out) {
      const std::size_t count = piece.c() * plane;
      std::memcpy(piece.item(n).data(), src, count * sizeof(T));
      src += count;
    }
  }
  return out;
}

template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& term) {
  require_shape(term.shape(), acc.shape(), "add_into");
  T* a = acc.data();
  const T* b = term.data();
  for (std::size_t i = 0; i < acc.size(); ++i) a[i] += b[i];
}

bool all_finite(std::span<const float> values) {
  for (float v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

bool all_finite(std::span<const double> values) {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

template Tensor<float> concat_channels(std::span<const Tensor<float>* const>);
template Tensor<double> concat_channels(std::span<const Tensor<double>* const>);
template std::vector<Tensor<float>> split_channels(const Tensor<float>&, std::span<const int>);
template std::vector<Tensor<double>> split_channels(const Tensor<double>&, std::span<const int>);
template void add_into(Tensor<float>&, const Tensor<float>&);
template void add_into(Tensor<double>&, const Tensor<double>&);

}  // namespace patchgen
