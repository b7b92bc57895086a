#pragma once

#include <cstddef>
#include <vector>

#include "patchgen/error.hpp"

namespace patchgen {

// Row-major, channel-interleaved raster. The tag keeps images, masks and edge
// maps from being mixed up even when their channel counts agree.
template <int Channels, typename Tag>
class Raster {
 public:
  static constexpr int kChannels = Channels;

  Raster() = default;
  Raster(int height, int width, float fill = 0.0f)
      : height_(height), width_(width),
        pixels_(static_cast<std::size_t>(height) * width * Channels, fill) {}

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return Channels; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  float& at(int y, int x, int c = 0) { return pixels_[index(y, x, c)]; }
  float at(int y, int x, int c = 0) const { return pixels_[index(y, x, c)]; }

  std::vector<float>& pixels() { return pixels_; }
  const std::vector<float>& pixels() const { return pixels_; }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * Channels + c;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> pixels_;
};

struct RgbTag {};
struct MaskTag {};
struct EdgeTag {};

using RgbImage = Raster<3, RgbTag>;
using Mask = Raster<1, MaskTag>;
using EdgeMap = Raster<1, EdgeTag>;

struct ImageSize {
  int height = 0;
  int width = 0;
  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

// Data domain [0,1] <-> network domain [-1,1].
RgbImage to_network_domain(const RgbImage& image);
RgbImage to_data_domain(const RgbImage& image);

}  // namespace patchgen
