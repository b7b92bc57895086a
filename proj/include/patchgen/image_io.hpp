#pragma once

#include <filesystem>
#include <string>

#include "patchgen/raster.hpp"

namespace patchgen {

/// Decodes PNG/JPEG into a data-domain [0,1] image.
RgbImage read_image(const std::filesystem::path& path);

/// Lossless 8-bit PNG encoding of a data-domain image (values clamped).
std::string encode_png(const RgbImage& image);
void write_png(const std::filesystem::path& path, const RgbImage& image);

RgbImage decode_png(const std::string& bytes);

}  // namespace patchgen
