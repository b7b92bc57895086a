#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "patchgen/error.hpp"
#include "patchgen/proposals.hpp"

using namespace patchgen;

namespace {

RgbImage random_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  RgbImage img(h, w);
  for (float& v : img.pixels()) v = u(rng);
  return img;
}

ErrorCategory category_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.category();
  }
  FAIL("expected an error");
  return ErrorCategory::kInternal;
}

BoundingBox random_box(std::mt19937_64& rng, int extent) {
  std::uniform_int_distribution<int> pos(0, extent - 2);
  const int x = pos(rng);
  const int y = pos(rng);
  std::uniform_int_distribution<int> wd(1, extent - x);
  std::uniform_int_distribution<int> hd(1, extent - y);
  return {x, y, wd(rng), hd(rng)};
}

}  // namespace

TEST_SUITE("proposals") {
  TEST_CASE("edge map of a constant image is zero") {
    RgbImage img(10, 12, 0.4f);
    const EdgeMap e = compute_edge_map(img);
    for (float v : e.pixels()) CHECK(v == 0.0f);
  }

  TEST_CASE("edge map concentrates on a vertical step") {
    RgbImage img(9, 16, 0.0f);
    for (int y = 0; y < 9; ++y)
      for (int x = 8; x < 16; ++x)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = 1.0f;
    const EdgeMap e = compute_edge_map(img);
    for (int y = 0; y < 9; ++y) {
      CHECK(e.at(y, 7) > 0.0f);
      CHECK(e.at(y, 8) > 0.0f);
      CHECK(e.at(y, 7) == e.at(y, 8));
      for (int x : {0, 1, 2, 3, 4, 5, 10, 11, 12, 13, 14, 15}) CHECK(e.at(y, x) == 0.0f);
    }
  }

  TEST_CASE("edge map matches a per-pixel Sobel oracle") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 5; ++trial) {
      const RgbImage img = random_image(8, 8, rng);
      const EdgeMap e = compute_edge_map(img);
      const std::vector<double> ref = oracle::sobel(img);
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(e.pixels()[i] == doctest::Approx(ref[i]).epsilon(1e-5));
    }
  }

  TEST_CASE("edge map rejects tiny images") {
    CHECK(category_of([] { compute_edge_map(RgbImage(2, 5)); }) == ErrorCategory::kDegenerateInput);
  }

  TEST_CASE("candidate grid arithmetic") {
    const std::vector<double> scales{0.25}, aspects{1.0};
    const auto boxes = generate_candidates({128, 128}, scales, aspects, 0.5);
    REQUIRE(boxes.size() == 9);
    std::vector<BoundingBox> expected;
    for (int y = 0; y <= 64; y += 32)
      for (int x = 0; x <= 64; x += 32) expected.push_back({x, y, 64, 64});
    CHECK(boxes == expected);
  }

  TEST_CASE("full-image candidate and empty candidates") {
    const std::vector<double> one{1.0}, two{2.0};
    const auto boxes = generate_candidates({40, 40}, one, one, 0.25);
    REQUIRE(boxes.size() == 1);
    CHECK(boxes[0] == BoundingBox{0, 0, 40, 40});
    CHECK(category_of([&] { generate_candidates({40, 40}, two, one, 0.25); }) == ErrorCategory::kEmptyCandidates);
  }

  TEST_CASE("candidates stay inside the image for every scale and aspect") {
    const ProposalOptions o;
    const auto boxes = generate_candidates({96, 128}, o.scales, o.aspects, o.stride_frac);
    for (const auto& b : boxes) CHECK(b.fits({96, 128}));
    for (double s : o.scales)
      for (double a : o.aspects) {
        const int w = static_cast<int>(std::lround(std::sqrt(s * 96 * 128 * a)));
        const int h = static_cast<int>(std::lround(std::sqrt(s * 96 * 128 / a)));
        const bool present = std::any_of(boxes.begin(), boxes.end(), [&](const BoundingBox& b) { return b.w == w && b.h == h; });
        CHECK(present == (w <= 128 && h <= 96));
      }
  }

  TEST_CASE("score_box basics") {
    EdgeMap zero(32, 32);
    CHECK(score_box(zero, {4, 4, 10, 10}) == 0.0);
    EdgeMap e(32, 32, 1.0f);
    CHECK(score_box(e, {4, 4, 4, 10}) == 0.0);
    CHECK(score_box(e, {4, 4, 10, 4}) == 0.0);
  }

  TEST_CASE("enclosing box outscores a box cut by the contour") {
    EdgeMap e(40, 40);
    for (int i = 10; i < 20; ++i) {
      e.at(10, i) = e.at(19, i) = 1.0f;
      e.at(i, 10) = e.at(i, 19) = 1.0f;
    }
    const BoundingBox inside{6, 6, 18, 18};
    const BoundingBox shifted{14, 6, 18, 18};
    // brute-force border / interior sums
    auto brute = [&](const BoundingBox& b) {
      double inner = 0, border = 0;
      for (int y = b.y; y < b.y + b.h; ++y)
        for (int x = b.x; x < b.x + b.w; ++x) {
          const bool in = x >= b.x + 2 && x < b.x + b.w - 2 && y >= b.y + 2 && y < b.y + b.h - 2;
          (in ? inner : border) += e.at(y, x);
        }
      return std::max(0.0, inner - border) / std::pow(double(b.w) * b.h, 1.5);
    };
    CHECK(score_box(e, inside) == doctest::Approx(brute(inside)));
    CHECK(score_box(e, shifted) == doctest::Approx(brute(shifted)));
    CHECK(score_box(e, inside) > score_box(e, shifted));
  }

  TEST_CASE("score_box is translation equivariant") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> u(0, 1);
    EdgeMap e(40, 40), moved(40, 40);
    for (int y = 0; y < 30; ++y)
      for (int x = 0; x < 30; ++x) {
        e.at(y, x) = u(rng);
        moved.at(y + 7, x + 5) = e.at(y, x);
      }
    const BoundingBox b{3, 4, 14, 12};
    CHECK(score_box(e, b) == doctest::Approx(score_box(moved, {8, 11, 14, 12})).epsilon(1e-12));
  }

  TEST_CASE("filter boundary cases") {
    const ImageSize size{128, 128};
    const std::vector<ScoredBox> boxes = {{{0, 0, 64, 64}, 1}, {{0, 0, 20, 20}, 1}, {{0, 0, 16, 85}, 1}};
    const auto kept = filter_boxes(boxes, size);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].box == BoundingBox{0, 0, 64, 64});
    FilterOptions tall;
    tall.tall_mode = true;
    const auto kept_tall = filter_boxes(boxes, size, tall);
    REQUIRE(kept_tall.size() == 2);
    CHECK(kept_tall[1].box == BoundingBox{0, 0, 16, 85});
    // Over the height cap: 16 x 90 -> 0.703 of H.
    const std::vector<ScoredBox> too_tall = {{{0, 0, 16, 90}, 1}};
    CHECK(filter_boxes(too_tall, size, tall).empty());
    // Tall mode ignores the upper area bound for tall boxes: 60 x 89 is 0.326 of the area.
    const std::vector<ScoredBox> big_tall = {{{0, 0, 60, 89}, 1}};
    CHECK(filter_boxes(big_tall, size).empty());
    CHECK(filter_boxes(big_tall, size, tall).size() == 1);
  }

  TEST_CASE("filter rejects extreme aspect ratios") {
    const std::vector<ScoredBox> boxes = {{{0, 0, 120, 28}, 1}, {{0, 0, 100, 25}, 1}};
    const auto kept = filter_boxes(boxes, {128, 128});
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].box.w == 100);
  }

  TEST_CASE("iou examples and symmetry") {
    CHECK(iou({0, 0, 10, 10}, {0, 0, 10, 10}) == 1.0);
    CHECK(iou({0, 0, 10, 10}, {20, 20, 5, 5}) == 0.0);
    CHECK(iou({0, 0, 10, 10}, {5, 0, 10, 10}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(oracle::iou_by_pixels({0, 0, 10, 10}, {5, 0, 10, 10}) == iou({0, 0, 10, 10}, {5, 0, 10, 10}));
  }

  TEST_CASE("nms examples") {
    const std::vector<ScoredBox> one = {{{1, 2, 5, 5}, 0.5}};
    CHECK(nms(one) == one);
    const std::vector<ScoredBox> twins = {{{1, 2, 5, 5}, 1.0}, {{1, 2, 5, 5}, 2.0}};
    const auto kept = nms(twins);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].score == 2.0);
  }

  TEST_CASE("iou and nms agree with exhaustive oracles on random sets") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> count(1, 10);
    std::uniform_int_distribution<int> score(0, 4);
    int mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<ScoredBox> boxes;
      const int n = count(rng);
      for (int i = 0; i < n; ++i) boxes.push_back({random_box(rng, 24), score(rng) * 0.25});
      for (const auto& a : boxes)
        for (const auto& b : boxes) {
          mismatches += iou(a.box, b.box) != oracle::iou_by_pixels(a.box, b.box);
          mismatches += iou(a.box, b.box) != iou(b.box, a.box);
        }
      const auto got = nms(boxes, 0.3);
      mismatches += got != oracle::greedy_nms(boxes, 0.3);
      for (std::size_t i = 0; i < got.size(); ++i)
        for (std::size_t j = i + 1; j < got.size(); ++j) mismatches += iou(got[i].box, got[j].box) >= 0.3;
    }
    CHECK(mismatches == 0);
  }

  TEST_CASE("select_top_n") {
    std::vector<ScoredBox> boxes;
    for (int i = 0; i < 5; ++i) boxes.push_back({{i * 10, 0, 5, 5}, static_cast<double>((i * 3) % 5)});
    const auto top = select_top_n(boxes, 3);
    REQUIRE(top.size() == 3);
    CHECK(top[0].score == 4.0);
    CHECK(top[1].score == 3.0);
    CHECK(top[2].score == 2.0);
    const std::vector<ScoredBox> two(boxes.begin(), boxes.begin() + 2);
    CHECK(category_of([&] { select_top_n(two, 3); }) == ErrorCategory::kInsufficientPatches);
  }

  TEST_CASE("equal scores follow the tie-break") {
    const std::vector<ScoredBox> boxes = {
        {{5, 9, 4, 4}, 1}, {{3, 9, 4, 4}, 1}, {{3, 2, 4, 4}, 1}, {{3, 2, 6, 6}, 1}};
    const auto top = select_top_n(boxes, 4);
    CHECK(top[0].box == BoundingBox{3, 2, 6, 6});
    CHECK(top[1].box == BoundingBox{3, 2, 4, 4});
    CHECK(top[2].box == BoundingBox{3, 9, 4, 4});
    CHECK(top[3].box == BoundingBox{5, 9, 4, 4});
  }

  TEST_CASE("rasterize_mask") {
    CHECK(rasterize_mask({}, {8, 8}).pixels() == std::vector<float>(64, 0.0f));
    const std::vector<BoundingBox> full = {{0, 0, 8, 8}};
    CHECK(rasterize_mask(full, {8, 8}).pixels() == std::vector<float>(64, 1.0f));
    const std::vector<BoundingBox> pair = {{0, 0, 4, 4}, {2, 2, 4, 4}};
    const Mask m = rasterize_mask(pair, {8, 8});
    int ones = 0;
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        const bool inside = (x < 4 && y < 4) || (x >= 2 && x < 6 && y >= 2 && y < 6);
        CHECK(m.at(y, x) == (inside ? 1.0f : 0.0f));
        ones += m.at(y, x) == 1.0f;
      }
    CHECK(ones == 28);
  }

  TEST_CASE("mask union bounds") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<BoundingBox> boxes;
      long long sum = 0, biggest = 0;
      for (int i = 0; i < 4; ++i) {
        boxes.push_back(random_box(rng, 20));
        sum += boxes.back().area();
        biggest = std::max(biggest, boxes.back().area());
      }
      const Mask m = rasterize_mask(boxes, {20, 20});
      long long ones = 0;
      for (float v : m.pixels()) ones += v == 1.0f;
      CHECK(ones <= sum);
      CHECK(ones >= biggest);
    }
  }

  TEST_CASE("proposal pipeline is deterministic and returns n boxes") {
    std::mt19937_64 rng(17);
    RgbImage img(96, 96, 0.2f);
    for (int y = 20; y < 40; ++y)
      for (int x = 30; x < 50; ++x)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = 0.9f;
    const auto a = propose_key_patches(img, 3);
    const auto b = propose_key_patches(img, 3);
    CHECK(a.size() == 3);
    CHECK(a == b);
    for (const auto& s : a) CHECK(s.box.fits({96, 96}));
  }

  TEST_CASE("boxes file round trip") {
    const auto dir = oracle::temp_dir("boxes");
    const std::vector<ScoredBox> boxes = {{{1, 2, 3, 4}, 0.125}, {{5, 6, 7, 8}, 2.5e-7}};
    write_boxes_file(dir / "a.boxes", boxes);
    CHECK(read_boxes_file(dir / "a.boxes") == boxes);
  }
}
