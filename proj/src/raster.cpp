#include "patchgen/raster.hpp"

namespace patchgen {

RgbImage to_network_domain(const RgbImage& image) {
  RgbImage out = image;
  for (float& v : out.pixels()) v = 2.0f * v - 1.0f;
  return out;
}

RgbImage to_data_domain(const RgbImage& image) {
  RgbImage out = image;
  for (float& v : out.pixels()) v = 0.5f * (v + 1.0f);
  return out;
}

}  // namespace patchgen
