#pragma once

// Independent brute-force reference implementations used by the tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "patchgen/proposals.hpp"
#include "patchgen/raster.hpp"
#include "patchgen/tensor.hpp"

namespace oracle {

using patchgen::BoundingBox;
using patchgen::ScoredBox;

// Sobel magnitude with explicit 3x3 kernels and clamp-to-edge reads.
inline std::vector<double> sobel(const patchgen::RgbImage& image) {
  const int h = image.height();
  const int w = image.width();
  auto luma = [&](int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return 0.299 * image.at(y, x, 0) + 0.587 * image.at(y, x, 1) + 0.114 * image.at(y, x, 2);
  };
  const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  const int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  std::vector<double> out(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double gx = 0, gy = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          gx += kx[dy + 1][dx + 1] * luma(y + dy, x + dx);
          gy += ky[dy + 1][dx + 1] * luma(y + dy, x + dx);
        }
      out[y * w + x] = std::sqrt(gx * gx + gy * gy);
    }
  return out;
}

// IoU by counting covered pixels on a grid that contains both boxes.
inline double iou_by_pixels(const BoundingBox& a, const BoundingBox& b) {
  const int x1 = std::max(a.x + a.w, b.x + b.w);
  const int y1 = std::max(a.y + a.h, b.y + b.h);
  long long inter = 0, uni = 0;
  for (int y = 0; y < y1; ++y)
    for (int x = 0; x < x1; ++x) {
      const bool in_a = x >= a.x && x < a.x + a.w && y >= a.y && y < a.y + a.h;
      const bool in_b = x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline bool better(const ScoredBox& a, const ScoredBox& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.box.y != b.box.y) return a.box.y < b.box.y;
  if (a.box.x != b.box.x) return a.box.x < b.box.x;
  return a.box.w * a.box.h > b.box.w * b.box.h;
}

// Greedy suppression simulated directly: take the best remaining box, drop
// everything overlapping it at or above the threshold, repeat.
inline std::vector<ScoredBox> greedy_nms(std::vector<ScoredBox> remaining, double thresh) {
  std::vector<ScoredBox> kept;
  while (!remaining.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < remaining.size(); ++i)
      if (better(remaining[i], remaining[best])) best = i;
    const ScoredBox chosen = remaining[best];
    kept.push_back(chosen);
    std::vector<ScoredBox> next;
    for (std::size_t i = 0; i < remaining.size(); ++i)
      if (i != best && iou_by_pixels(remaining[i].box, chosen.box) < thresh) next.push_back(remaining[i]);
    remaining = std::move(next);
  }
  return kept;
}

inline double mean_abs(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

// Textbook Adam on one scalar.
struct ScalarAdam {
  double lr, b1, b2, eps;
  double m = 0, v = 0;
  int t = 0;
  double step(double theta, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    return theta - lr * mh / (std::sqrt(vh) + eps);
  }
};

// Relative error with a floor on the denominator so near-zero gradients do
// not blow the ratio up.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), floor});
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("patchgen_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

template <typename T>
patchgen::Tensor<T> random_tensor(patchgen::Shape shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  patchgen::Tensor<T> t(shape);
  for (T& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

}  // namespace oracle
