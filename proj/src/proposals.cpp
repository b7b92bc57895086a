#include "patchgen/proposals.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>

#include "patchgen/fsutil.hpp"

namespace patchgen {

namespace {

constexpr int kBorder = 2;
constexpr int kMinScoredExtent = 5;

float luma(const RgbImage& image, int y, int x) {
  return 0.299f * image.at(y, x, 0) + 0.587f * image.at(y, x, 1) + 0.114f * image.at(y, x, 2);
}

}  // namespace

EdgeMap compute_edge_map(const RgbImage& image) {
  const int height = image.height();
  const int width = image.width();
  if (height < 3 || width < 3) {
    fail(ErrorCategory::kDegenerateInput, "edge map needs at least 3x3 pixels, got " +
                                              std::to_string(height) + "x" + std::to_string(width));
  }
  std::vector<float> gray(static_cast<std::size_t>(height) * width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) gray[y * width + x] = luma(image, y, x);

  auto px = [&](int y, int x) {
    y = std::clamp(y, 0, height - 1);
    x = std::clamp(x, 0, width - 1);
    return gray[y * width + x];
  };

  // Separable Sobel: derivative along one axis, [1 2 1] smoothing along the other.
  std::vector<float> dx(gray.size()), sx(gray.size());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      dx[y * width + x] = px(y, x + 1) - px(y, x - 1);
      sx[y * width + x] = px(y, x - 1) + 2.0f * px(y, x) + px(y, x + 1);
    }
  }
  EdgeMap edges(height, width);
  for (int y = 0; y < height; ++y) {
    const int up = std::max(y - 1, 0) * width;
    const int mid = y * width;
    const int down = std::min(y + 1, height - 1) * width;
    for (int x = 0; x < width; ++x) {
      const float gx = dx[up + x] + 2.0f * dx[mid + x] + dx[down + x];
      const float gy = sx[down + x] - sx[up + x];
      edges.at(y, x) = std::sqrt(gx * gx + gy * gy);
    }
  }
  return edges;
}

std::vector<BoundingBox> generate_candidates(ImageSize size, std::span<const double> scales,
                                             std::span<const double> aspects, double stride_frac) {
  if (scales.empty() || aspects.empty())
    fail(ErrorCategory::kConfig, "candidate generation needs at least one scale and aspect");
  if (!(stride_frac > 0.0 && stride_frac <= 1.0))
    fail(ErrorCategory::kConfig, "stride fraction must lie in (0, 1]");

  const double image_area = static_cast<double>(size.height) * size.width;
  std::vector<BoundingBox> boxes;
  for (double scale : scales) {
    for (double aspect : aspects) {
      const int w = static_cast<int>(std::lround(std::sqrt(scale * image_area * aspect)));
      const int h = static_cast<int>(std::lround(std::sqrt(scale * image_area / aspect)));
      if (w < 1 || h < 1 || w > size.width || h > size.height) continue;
      const int step_x = std::max(1, static_cast<int>(std::lround(stride_frac * w)));
      const int step_y = std::max(1, static_cast<int>(std::lround(stride_frac * h)));
      for (int y = 0; y + h <= size.height; y += step_y)
        for (int x = 0; x + w <= size.width; x += step_x) boxes.push_back({x, y, w, h});
    }
  }
  if (boxes.empty())
    fail(ErrorCategory::kEmptyCandidates, "no candidate box fits inside the image");
  return boxes;
}

EdgeIntegral::EdgeIntegral(const EdgeMap& edges)
    : height_(edges.height()),
      width_(edges.width()),
      table_(static_cast<std::size_t>(height_ + 1) * (width_ + 1), 0.0) {
  const int stride = width_ + 1;
  for (int y = 0; y < height_; ++y) {
    double row = 0.0;
    for (int x = 0; x < width_; ++x) {
      row += edges.at(y, x);
      table_[(y + 1) * stride + x + 1] = table_[y * stride + x + 1] + row;
    }
  }
}

double EdgeIntegral::sum(int x0, int y0, int x1, int y1) const {
  const int stride = width_ + 1;
  return table_[y1 * stride + x1] - table_[y0 * stride + x1] - table_[y1 * stride + x0] +
         table_[y0 * stride + x0];
}

double EdgeIntegral::score(const BoundingBox& box, double kappa) const {
  if (box.w < kMinScoredExtent || box.h < kMinScoredExtent) return 0.0;
  if (!box.fits({height_, width_})) fail(ErrorCategory::kShape, "score_box: box outside the edge map");
  const double total = sum(box.x, box.y, box.x + box.w, box.y + box.h);
  const double inner =
      sum(box.x + kBorder, box.y + kBorder, box.x + box.w - kBorder, box.y + box.h - kBorder);
  const double border = total - inner;
  const double raw = std::max(0.0, inner - border);
  return raw / std::pow(static_cast<double>(box.area()), kappa);
}

double score_box(const EdgeMap& edges, const BoundingBox& box, double kappa) {
  return EdgeIntegral(edges).score(box, kappa);
}

std::vector<ScoredBox> filter_boxes(std::span<const ScoredBox> boxes, ImageSize size,
                                    const FilterOptions& options) {
  if (!(options.min_area_frac > 0.0 && options.min_area_frac < options.max_area_frac &&
        options.max_area_frac <= 1.0)) {
    fail(ErrorCategory::kConfig, "filter requires 0 < min_area_frac < max_area_frac <= 1");
  }
  const double image_area = static_cast<double>(size.height) * size.width;
  std::vector<ScoredBox> kept;
  for (const ScoredBox& scored : boxes) {
    const BoundingBox& b = scored.box;
    const double area_frac = static_cast<double>(b.area()) / image_area;
    const double aspect = static_cast<double>(b.w) / b.h;
    const bool regular = area_frac >= options.min_area_frac && area_frac <= options.max_area_frac &&
                         aspect >= options.min_aspect && aspect <= options.max_aspect;
    // Tall boxes only need the lower area bound and the height cap.
    const bool tall = options.tall_mode && b.h > b.w &&
                      static_cast<double>(b.h) / size.height <= options.max_height_frac &&
                      area_frac >= options.min_area_frac;
    if (regular || tall) kept.push_back(scored);
  }
  return kept;
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const long long ix = std::max(0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const long long iy = std::max(0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const long long inter = ix * iy;
  const long long uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

bool ranks_before(const ScoredBox& a, const ScoredBox& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.box.y != b.box.y) return a.box.y < b.box.y;
  if (a.box.x != b.box.x) return a.box.x < b.box.x;
  return a.box.area() > b.box.area();
}

std::vector<ScoredBox> nms(std::span<const ScoredBox> boxes, double iou_thresh) {
  if (!(iou_thresh > 0.0 && iou_thresh < 1.0))
    fail(ErrorCategory::kConfig, "NMS threshold must lie in (0, 1)");
  std::vector<ScoredBox> order(boxes.begin(), boxes.end());
  std::stable_sort(order.begin(), order.end(), ranks_before);
  std::vector<ScoredBox> kept;
  for (const ScoredBox& candidate : order) {
    const bool clear = std::all_of(kept.begin(), kept.end(), [&](const ScoredBox& k) {
      return iou(k.box, candidate.box) < iou_thresh;
    });
    if (clear) kept.push_back(candidate);
  }
  return kept;
}

std::vector<ScoredBox> select_top_n(std::span<const ScoredBox> boxes, int n) {
  if (n < 1) fail(ErrorCategory::kConfig, "select_top_n needs n >= 1");
  if (static_cast<int>(boxes.size()) < n) {
    fail(ErrorCategory::kInsufficientPatches, "only " + std::to_string(boxes.size()) +
                                                  " boxes survive, need " + std::to_string(n));
  }
  std::vector<ScoredBox> order(boxes.begin(), boxes.end());
  std::stable_sort(order.begin(), order.end(), ranks_before);
  order.resize(n);
  return order;
}

Mask rasterize_mask(std::span<const BoundingBox> boxes, ImageSize size) {
  Mask mask(size.height, size.width);
  for (const BoundingBox& b : boxes) {
    if (!b.fits(size)) fail(ErrorCategory::kShape, "rasterize_mask: box outside the image");
    for (int y = b.y; y < b.y + b.h; ++y)
      for (int x = b.x; x < b.x + b.w; ++x) mask.at(y, x) = 1.0f;
  }
  return mask;
}

std::vector<ScoredBox> propose_key_patches(const RgbImage& image, int n,
                                           const ProposalOptions& options) {
  const ImageSize size{image.height(), image.width()};
  const EdgeIntegral integral(compute_edge_map(image));
  const std::vector<BoundingBox> candidates =
      generate_candidates(size, options.scales, options.aspects, options.stride_frac);
  std::vector<ScoredBox> scored;
  scored.reserve(candidates.size());
  for (const BoundingBox& box : candidates) scored.push_back({box, integral.score(box, options.kappa)});
  const std::vector<ScoredBox> filtered = filter_boxes(scored, size, options.filter);
  const std::vector<ScoredBox> survivors = nms(filtered, options.iou_thresh);
  return select_top_n(survivors, n);
}

std::vector<ScoredBox> read_boxes_file(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<ScoredBox> boxes;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    ScoredBox b;
    if (!(fields >> b.box.x >> b.box.y >> b.box.w >> b.box.h >> b.score)) {
      fail(ErrorCategory::kIo, path.string() + ":" + std::to_string(line_no) + ": malformed box line");
    }
    if (b.box.w <= 0 || b.box.h <= 0 || !std::isfinite(b.score) || b.score < 0.0) {
      fail(ErrorCategory::kIo, path.string() + ":" + std::to_string(line_no) + ": invalid box");
    }
    boxes.push_back(b);
  }
  return boxes;
}

void write_boxes_file(const std::filesystem::path& path, std::span<const ScoredBox> boxes) {
  std::ostringstream out;
  out << std::setprecision(9);
  for (const ScoredBox& b : boxes)
    out << b.box.x << ' ' << b.box.y << ' ' << b.box.w << ' ' << b.box.h << ' ' << b.score << '\n';
  write_file_atomic(path, out.str());
}

}  // namespace patchgen
