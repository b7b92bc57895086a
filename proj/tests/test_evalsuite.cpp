#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "patchgen/error.hpp"
#include "patchgen/evalsuite.hpp"
#include "patchgen/fsutil.hpp"
#include "patchgen/image_io.hpp"

using namespace patchgen;
namespace fs = std::filesystem;

namespace {

ModelConfig small_model(EncoderKind kind = EncoderKind::kSiameseSum) {
  ModelConfig c;
  c.base_channels = 4;
  c.encoder = kind;
  return c;
}

Mask mask_from(int side, const std::vector<BoundingBox>& boxes) { return rasterize_mask(boxes, {side, side}); }

RgbImage random_image(int side, std::mt19937_64& rng) {
  RgbImage img(side, side);
  std::uniform_real_distribution<float> u(0, 1);
  for (float& v : img.pixels()) v = u(rng);
  return img;
}

}  // namespace

TEST_SUITE("evalsuite") {
  TEST_CASE("mask iou examples") {
    const Mask truth = mask_from(16, {{2, 2, 4, 4}});
    CHECK(mask_iou(truth, truth) == 1.0);
    CHECK(mask_iou(mask_from(16, {{10, 10, 4, 4}}), truth) == 0.0);
    CHECK(mask_iou(mask_from(16, {{2, 2, 4, 4}, {10, 10, 4, 4}}), truth) == 0.5);
    CHECK(mask_iou(Mask(16, 16), Mask(16, 16)) == 1.0);
    Mask soft(16, 16, 0.49f);
    CHECK(mask_iou(soft, truth) == 0.0);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> u(0, 1);
    for (int trial = 0; trial < 20; ++trial) {
      Mask p(8, 8);
      for (float& v : p.pixels()) v = u(rng);
      const double value = mask_iou(p, mask_from(8, {{1, 1, 5, 3}}));
      CHECK(value >= 0.0);
      CHECK(value <= 1.0);
    }
  }

  TEST_CASE("nearest neighbours match an exhaustive ranking") {
    std::mt19937_64 rng(2);
    std::vector<RgbImage> corpus;
    for (int i = 0; i < 10; ++i) corpus.push_back(random_image(8, rng));
    corpus.push_back(corpus[3]);
    const RgbImage query = random_image(8, rng);
    std::vector<std::pair<double, int>> brute;
    for (int i = 0; i < static_cast<int>(corpus.size()); ++i) {
      double s = 0;
      for (std::size_t j = 0; j < query.size(); ++j) {
        const double d = static_cast<double>(query.pixels()[j]) - corpus[i].pixels()[j];
        s += d * d;
      }
      brute.emplace_back(std::sqrt(s), i);
    }
    std::sort(brute.begin(), brute.end());
    const auto got = nearest_neighbors(query, corpus, 11);
    REQUIRE(got.size() == 11);
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].index == brute[i].second);
      CHECK(got[i].distance == doctest::Approx(brute[i].first).epsilon(1e-9));
      if (i > 0) CHECK(got[i].distance >= got[i - 1].distance);
    }
    const auto self = nearest_neighbors(corpus[3], corpus, 2);
    CHECK(self[0].index == 3);
    CHECK(self[0].distance == 0.0);
    CHECK(self[1].index == 10);
    const std::vector<RgbImage> one = {corpus[0]};
    const auto single = nearest_neighbors(query, one, 5);
    REQUIRE(single.size() == 1);
    CHECK(single[0].index == 0);
    try {
      nearest_neighbors(query, std::span<const RgbImage>(), 1);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.category() == ErrorCategory::kConfig);
    }
  }

  TEST_CASE("grid layout") {
    Grid grid(2, 3, 8);
    CHECK(grid.canvas().height() == 16);
    CHECK(grid.canvas().width() == 24);
    grid.set_image(1, 2, RgbImage(8, 8, 0.25f));
    grid.set_mask(0, 1, Mask(8, 8, 0.0f));
    CHECK(grid.canvas().at(9, 17, 0) == 0.25f);
    CHECK(grid.canvas().at(3, 9, 2) == 0.0f);
    CHECK(grid.canvas().at(3, 3, 1) == 1.0f);
    CHECK(generation_columns(3).size() == 7);
    CHECK(generation_columns(3).back() == "Real M");
    CHECK(grid_path("out", "noise", 7, "0002") == fs::path("out") / "noise_7_0002.png");
  }

  TEST_CASE("noise robustness") {
    Model<float> model(small_model());
    model.init(3);
    const auto samples = generate_toy_dataset(32, 64, 4);
    const std::vector<double> zero = {0.0};
    const auto clean = noise_robustness(model, samples[0], zero, 2, 5);
    REQUIRE(clean.l1.size() == 1);
    CHECK(clean.l1[0] == 0.0);
    CHECK(clean.grid.rows() == 2);
    CHECK(clean.grid.cols() == 7);

    const std::vector<double> sigmas = {0.1, 0.5};
    double low = 0, high = 0;
    for (const Sample& s : samples) {
      const auto r = noise_robustness(model, s, sigmas, 2, 6);
      low += r.l1[0];
      high += r.l1[1];
    }
    CHECK(low > 0.0);
    CHECK(high >= low);
    const auto a = noise_robustness(model, samples[1], sigmas, 2, 9);
    const auto b = noise_robustness(model, samples[1], sigmas, 2, 9);
    CHECK(a.grid.canvas() == b.grid.canvas());
    CHECK(a.l1 == b.l1);
  }

  TEST_CASE("patch mixing") {
    Model<float> model(small_model());
    model.init(3);
    const auto samples = generate_toy_dataset(4, 64, 4);
    const std::vector<int> none, all = {0, 1, 2}, one = {2};
    const auto plain_a = mix_patches(model, samples[0], samples[1], none, 11);
    const auto full_b = mix_patches(model, samples[1], samples[0], all, 11);
    CHECK(plain_a.generation.image == full_b.generation.image);
    CHECK(plain_a.generation.image ==
          generate(model, images_to_tensor<float>(samples[0].patches), experiment_noise(100, 11, 0)).image);
    const auto b_all = mix_patches(model, samples[0], samples[1], all, 11);
    CHECK(b_all.generation.image == mix_patches(model, samples[1], samples[0], none, 11).generation.image);
    const auto mixed = mix_patches(model, samples[0], samples[1], one, 11);
    CHECK(mixed.grid.cols() == 3 + 4);
    CHECK(mixed.grid.rows() == 1);
    CHECK(mixed.patches[2] == samples[1].patches[2]);
    CHECK(mixed.patches[0] == samples[0].patches[0]);
    const std::vector<int> dup = {1, 1}, bad = {3};
    CHECK_THROWS_AS(mix_patches(model, samples[0], samples[1], dup, 11), Error);
    CHECK_THROWS_AS(mix_patches(model, samples[0], samples[1], bad, 11), Error);
  }

  TEST_CASE("permutation audit") {
    const auto samples = generate_toy_dataset(8, 64, 5);
    Model<float> model(small_model());
    model.init(7);
    const std::vector<std::vector<int>> identity(samples.size(), {0, 1, 2});
    const auto id = permutation_audit(model, samples, identity, 3);
    CHECK(id.embedding_deviation == 0.0);
    CHECK(id.image_deviation == 0.0);
    CHECK(permutation_audit(model, samples, 4, 3).max() <= 1e-4);

    Model<float> concat(small_model(EncoderKind::kConcat));
    concat.init(7);
    CHECK(permutation_audit(concat, samples, 4, 3).max() > 1e-4);
  }

  TEST_CASE("mask quality and report") {
    const auto samples = generate_toy_dataset(40, 64, 6);
    Model<float> model(small_model());
    model.init(1);
    const MaskQuality q = evaluate_masks(model, samples, 2);
    CHECK(q.iou.size() == 40);
    CHECK(std::isfinite(q.mean_iou));
    CHECK(q.fraction_above >= 0.0);
    CHECK(q.fraction_above <= 1.0);
    CHECK(q.mean_d_score > 0.0);
    CHECK(q.mean_d_score < 1.0);
    CHECK(q.masked_l1 >= 0.0);
    double mean = 0;
    for (std::size_t i = 0; i < q.iou.size(); ++i) mean += q.iou[i];
    CHECK(q.mean_iou == doctest::Approx(mean / 40));
  }

  TEST_CASE("evaluation writes decodable, reproducible grids") {
    const auto samples = generate_toy_dataset(34, 64, 6);
    Model<float> model(small_model());
    model.init(1);
    TrainConfig config;
    config.base_channels = 4;
    const auto dir_a = oracle::temp_dir("eval_a");
    const auto dir_b = oracle::temp_dir("eval_b");
    const std::span<const Sample> corpus(samples.data(), 10);
    const EvalReport a = run_evaluation(model, config, samples, dir_a, 3, 2, corpus);
    const EvalReport b = run_evaluation(model, config, samples, dir_b, 3, 2, corpus);
    a.write(dir_a);
    CHECK(fs::exists(dir_a / "report.json"));
    REQUIRE(a.grids.size() == b.grids.size());
    CHECK(a.grids.size() >= 5);
    for (std::size_t i = 0; i < a.grids.size(); ++i) {
      REQUIRE(fs::exists(a.grids[i]));
      CHECK(a.grids[i].filename() == b.grids[i].filename());
      CHECK(read_file(a.grids[i]) == read_file(b.grids[i]));
      const RgbImage decoded = read_image(a.grids[i]);
      CHECK(decoded.height() % 64 == 0);
      CHECK(decoded.width() % 64 == 0);
    }
    const auto report = nlohmann::json::parse(read_file(dir_a / "report.json"));
    for (const char* key : {"mask_quality", "permutation_audit", "noise_robustness"})
      CHECK(report["metrics"].contains(key));
    CHECK(a.to_json()["metrics"] == b.to_json()["metrics"]);
    CHECK(write_sample_grids(model, samples, 0, 1, oracle::temp_dir("none")).empty());
  }

  TEST_CASE("non-finite metrics are refused") {
    EvalReport r;
    r.metrics["x"] = std::nan("");
    CHECK_THROWS_AS(r.write(oracle::temp_dir("nan")), Error);
  }

  TEST_CASE("standard ablation variants") {
    const auto variants = standard_variants(TrainConfig{});
    REQUIRE(variants.size() == 5);
    CHECK(variants[0].name == "full");
    int two = 0;
    for (const auto& v : variants) two += v.config.n_patches == 2;
    CHECK(two == 1);
  }
}
