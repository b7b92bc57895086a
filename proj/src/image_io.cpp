#include "patchgen/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <opencv2/imgcodecs.hpp>

#include "patchgen/error.hpp"
#include "patchgen/fsutil.hpp"

namespace patchgen {

namespace {

RgbImage from_mat(const cv::Mat& bgr) {
  RgbImage image(bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x)
      for (int c = 0; c < 3; ++c) image.at(y, x, c) = row[x][2 - c] / 255.0f;
  }
  return image;
}

}  // namespace

RgbImage read_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) fail(ErrorCategory::kIo, "cannot decode image " + path.string());
  return from_mat(bgr);
}

RgbImage decode_png(const std::string& bytes) {
  std::vector<uchar> buffer(bytes.begin(), bytes.end());
  cv::Mat bgr = cv::imdecode(buffer, cv::IMREAD_COLOR);
  if (bgr.empty()) fail(ErrorCategory::kIo, "cannot decode PNG buffer");
  return from_mat(bgr);
}

std::string encode_png(const RgbImage& image) {
  cv::Mat bgr(image.height(), image.width(), CV_8UC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(y, x, c), 0.0f, 1.0f);
        row[x][2 - c] = static_cast<uchar>(std::lround(v * 255.0f));
      }
  }
  std::vector<uchar> buffer;
  if (!cv::imencode(".png", bgr, buffer)) fail(ErrorCategory::kIo, "PNG encoding failed");
  return {buffer.begin(), buffer.end()};
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  write_file_atomic(path, encode_png(image));
}

}  // namespace patchgen
