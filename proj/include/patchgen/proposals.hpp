#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "patchgen/raster.hpp"

namespace patchgen {

/// Pixel-space rectangle covering [x, x+w) x [y, y+h).
struct BoundingBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  long long area() const { return static_cast<long long>(w) * h; }
  bool fits(ImageSize size) const {
    return w > 0 && h > 0 && x >= 0 && y >= 0 && x + w <= size.width && y + h <= size.height;
  }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct ScoredBox {
  BoundingBox box;
  double score = 0.0;
  friend bool operator==(const ScoredBox&, const ScoredBox&) = default;
};

/// Sobel gradient magnitude of the luma channel, replicate-padded.
/// Throws kDegenerateInput for images smaller than 3x3.
EdgeMap compute_edge_map(const RgbImage& image);

/// Sliding-window candidates. `scales` are area fractions of the image and
/// `aspects` are w/h ratios; the step along each axis is `stride_frac` times
/// the box extent on that axis. Throws kEmptyCandidates when nothing fits.
std::vector<BoundingBox> generate_candidates(ImageSize size, std::span<const double> scales,
                                             std::span<const double> aspects, double stride_frac);

/// Edge-density objectness: energy inside the box eroded by a 2-pixel border
/// minus the energy on that border, clamped at zero and divided by
/// (w*h)^kappa. Boxes thinner than 5 pixels score 0.
double score_box(const EdgeMap& edges, const BoundingBox& box, double kappa = 1.5);

/// Summed-area table that makes score_box O(1) per box.
class EdgeIntegral {
 public:
  explicit EdgeIntegral(const EdgeMap& edges);
  double sum(int x0, int y0, int x1, int y1) const;  // over [x0,x1) x [y0,y1)
  double score(const BoundingBox& box, double kappa = 1.5) const;

 private:
  int height_;
  int width_;
  std::vector<double> table_;
};

struct FilterOptions {
  double min_area_frac = 0.05;
  double max_area_frac = 0.25;
  bool tall_mode = false;
  double max_height_frac = 0.70;
  double min_aspect = 0.25;
  double max_aspect = 4.0;
};

std::vector<ScoredBox> filter_boxes(std::span<const ScoredBox> boxes, ImageSize size,
                                    const FilterOptions& options = {});

double iou(const BoundingBox& a, const BoundingBox& b);

/// Ordering used wherever boxes are ranked: descending score, then smaller y,
/// smaller x, larger area.
bool ranks_before(const ScoredBox& a, const ScoredBox& b);

std::vector<ScoredBox> nms(std::span<const ScoredBox> boxes, double iou_thresh = 0.3);

/// Throws kInsufficientPatches when fewer than n boxes are available.
std::vector<ScoredBox> select_top_n(std::span<const ScoredBox> boxes, int n);

Mask rasterize_mask(std::span<const BoundingBox> boxes, ImageSize size);

struct ProposalOptions {
  std::vector<double> scales = {0.05, 0.08, 0.12, 0.17, 0.25};
  std::vector<double> aspects = {0.5, 0.75, 1.0, 1.333, 2.0};
  double stride_frac = 0.25;
  double kappa = 1.5;
  double iou_thresh = 0.3;
  FilterOptions filter;
};

/// Full extraction: edges -> candidates -> scores -> filter -> NMS -> top n.
std::vector<ScoredBox> propose_key_patches(const RgbImage& image, int n,
                                           const ProposalOptions& options = {});

// `.boxes` files: one `x y w h score` line per box.
std::vector<ScoredBox> read_boxes_file(const std::filesystem::path& path);
void write_boxes_file(const std::filesystem::path& path, std::span<const ScoredBox> boxes);

}  // namespace patchgen
