#include <doctest.h>

#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "patchgen/error.hpp"
#include "patchgen/model.hpp"

using namespace patchgen;
using nn::Mode;

namespace {

ModelConfig mini_config(int n_patches = 2) {
  ModelConfig c;
  c.image_size = 16;
  c.base_channels = 8;
  c.n_patches = n_patches;
  c.embed_dim = 6;
  c.noise_dim = 5;
  c.allow_any_size = true;
  return c;
}

template <typename T>
T weighted_sum(const Tensor<T>& t, const Tensor<T>& w) {
  T s = 0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * w[i];
  return s;
}

// Coordinates to probe: a few spread over every parameter tensor.
template <typename T>
std::vector<std::pair<nn::Parameter<T>*, std::size_t>> probes(const std::vector<nn::Parameter<T>*>& params,
                                                              std::mt19937_64& rng, int per_tensor) {
  std::vector<std::pair<nn::Parameter<T>*, std::size_t>> out;
  for (auto* p : params) {
    std::uniform_int_distribution<std::size_t> pick(0, p->value.size() - 1);
    for (int i = 0; i < per_tensor; ++i) out.emplace_back(p, pick(rng));
  }
  return out;
}

struct GradStats {
  double worst = 0;
  int checked = 0;
};

// Central differences of `loss` against the accumulated `.grad` of each probe.
template <typename T>
GradStats compare_param_grads(const std::vector<std::pair<nn::Parameter<T>*, std::size_t>>& pts,
                              const std::function<double()>& loss, double h, double floor) {
  GradStats stats;
  for (auto [p, i] : pts) {
    const T saved = p->value[i];
    p->value[i] = saved + h;
    const double up = loss();
    p->value[i] = saved - h;
    const double down = loss();
    p->value[i] = saved;
    const double numeric = (up - down) / (2 * h);
    stats.worst = std::max(stats.worst, oracle::relative_error(p->grad[i], numeric, floor));
    ++stats.checked;
  }
  return stats;
}

// Layer-level check on both input and parameter gradients.
template <typename L>
double check_layer(L& layer, Shape in_shape, Mode mode, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<nn::Parameter<double>*> params;
  layer.collect_parameters(params);
  nn::init_normal(params, rng, 0.3);
  for (auto* p : params)
    if (!p->is_weight)
      for (double& v : p->value.values()) v += std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
  Tensor<double> x = oracle::random_tensor<double>(in_shape, rng);
  const Tensor<double> probe_out = layer.forward(x, mode);
  const Tensor<double> w = oracle::random_tensor<double>(probe_out.shape(), rng);
  auto loss = [&] { return weighted_sum(layer.forward(x, mode), w); };

  for (auto* p : params) p->grad = Tensor<double>(p->value.shape());
  layer.forward(x, mode);
  const Tensor<double> gx = layer.backward(w, true);
  double worst = 0;
  const double h = 1e-5;
  for (std::size_t i = 0; i < x.size(); i += std::max<std::size_t>(1, x.size() / 40)) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = loss();
    x[i] = saved - h;
    const double down = loss();
    x[i] = saved;
    worst = std::max(worst, oracle::relative_error(gx[i], (up - down) / (2 * h), 1e-6));
  }
  const auto pts = probes(params, rng, 8);
  worst = std::max(worst, compare_param_grads<double>(pts, loss, h, 1e-6).worst);
  return worst;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("convolution matches a direct sum") {
    std::mt19937_64 rng(1);
    nn::Conv2d<double> conv("c", 2, 3, 5, 2, 2, true);
    std::vector<nn::Parameter<double>*> params;
    conv.collect_parameters(params);
    nn::init_normal(params, rng, 0.5);
    params[1]->value = oracle::random_tensor<double>(params[1]->value.shape(), rng);
    const Tensor<double> x = oracle::random_tensor<double>({2, 2, 7, 6}, rng);
    const Tensor<double> y = conv.forward(x, Mode::kTrain);
    REQUIRE(y.shape() == Shape{2, 3, 4, 3});
    const Tensor<double>& wt = params[0]->value;
    double worst = 0;
    for (int n = 0; n < 2; ++n)
      for (int o = 0; o < 3; ++o)
        for (int oy = 0; oy < 4; ++oy)
          for (int ox = 0; ox < 3; ++ox) {
            double s = params[1]->value[o];
            for (int c = 0; c < 2; ++c)
              for (int ky = 0; ky < 5; ++ky)
                for (int kx = 0; kx < 5; ++kx) {
                  const int iy = oy * 2 - 2 + ky, ix = ox * 2 - 2 + kx;
                  if (iy < 0 || iy >= 7 || ix < 0 || ix >= 6) continue;
                  s += wt[(o * 2 + c) * 25 + ky * 5 + kx] * x.at(n, c, iy, ix);
                }
            worst = std::max(worst, std::fabs(s - y.at(n, o, oy, ox)));
          }
    CHECK(worst < 1e-12);
  }

  TEST_CASE("transposed convolution is the adjoint of the strided convolution") {
    std::mt19937_64 rng(2);
    nn::ConvTranspose2d<double> up("u", 3, 2, 5, 2, false);
    nn::Conv2d<double> down("d", 2, 3, 5, 2, 2, false);
    std::vector<nn::Parameter<double>*> pu, pd;
    up.collect_parameters(pu);
    down.collect_parameters(pd);
    nn::init_normal(pu, rng, 0.5);
    // Conv weight is out x (in*k*k) = 3 x (2*25); transposed weight is in x (out*k*k) = 3 x (2*25).
    pd[0]->value = pu[0]->value;
    const Tensor<double> a = oracle::random_tensor<double>({1, 3, 4, 4}, rng);
    const Tensor<double> b = oracle::random_tensor<double>({1, 2, 8, 8}, rng);
    const Tensor<double> ua = up.forward(a, Mode::kTrain);
    REQUIRE(ua.shape() == Shape{1, 2, 8, 8});
    const Tensor<double> db = down.forward(b, Mode::kTrain);
    CHECK(weighted_sum(ua, b) == doctest::Approx(weighted_sum(a, db)).epsilon(1e-12));
  }

  TEST_CASE("layer gradients match central differences in double") {
    nn::Conv2d<double> conv("c", 3, 4, 5, 2, 2, true);
    CHECK(check_layer(conv, {2, 3, 8, 8}, Mode::kTrain, 3) < 1e-5);
    nn::ConvTranspose2d<double> up("u", 4, 3, 5, 2, true);
    CHECK(check_layer(up, {2, 4, 4, 4}, Mode::kTrain, 4) < 1e-5);
    nn::Dense<double> dense("d", 12, Shape{1, 2, 2, 2}, true);
    CHECK(check_layer(dense, {3, 3, 2, 2}, Mode::kTrain, 5) < 1e-5);
    nn::BatchNorm<double> bn("b", 3);
    CHECK(check_layer(bn, {4, 3, 2, 3}, Mode::kTrain, 6) < 1e-5);
    nn::BatchNorm<double> bn_frozen("b", 3);
    CHECK(check_layer(bn_frozen, {4, 3, 2, 3}, Mode::kTrainFrozen, 7) < 1e-5);
    nn::BatchNorm<double> bn_inf("b", 3);
    CHECK(check_layer(bn_inf, {4, 3, 2, 3}, Mode::kInference, 8) < 1e-5);
    for (auto kind : {nn::Activation::kLeakyRelu, nn::Activation::kRelu, nn::Activation::kSigmoid,
                      nn::Activation::kTanh}) {
      nn::Activate<double> act(kind);
      CHECK(check_layer(act, {2, 2, 3, 3}, Mode::kTrain, 9) < 1e-5);
    }
  }

  TEST_CASE("batch norm modes") {
    std::mt19937_64 rng(10);
    nn::BatchNorm<double> bn("b", 2);
    std::vector<nn::Buffer<double>> buffers;
    bn.collect_buffers(buffers);
    REQUIRE(buffers.size() == 2);
    const Tensor<double> x = oracle::random_tensor<double>({5, 2, 3, 3}, rng, 1.0, 3.0);
    const Tensor<double> before_mean = *buffers[0].value;
    bn.forward(x, Mode::kTrainFrozen);
    CHECK(*buffers[0].value == before_mean);
    const Tensor<double> y = bn.forward(x, Mode::kTrain);
    CHECK(*buffers[0].value != before_mean);
    for (int c = 0; c < 2; ++c) {
      double m = 0;
      for (int n = 0; n < 5; ++n)
        for (int i = 0; i < 9; ++i) m += y[(n * 2 + c) * 9 + i];
      CHECK(std::fabs(m / 45) < 1e-12);
    }
  }

  TEST_CASE("generator and discriminator gradients match central differences") {
    const ModelConfig config = mini_config(2);
    Model<double> model(config);
    model.init(11);
    std::mt19937_64 rng(12);
    const int b = 2;
    const Tensor<double> patches = oracle::random_tensor<double>({b * 2, 3, 16, 16}, rng);
    const Tensor<double> z = sample_noise<double>(b, config.noise_dim, rng);
    const Tensor<double> wm = oracle::random_tensor<double>({b, 1, 16, 16}, rng);
    const Tensor<double> wi = oracle::random_tensor<double>({b, 3, 16, 16}, rng);

    auto g_loss = [&] {
      const auto out = model.generate(patches, z, Mode::kTrain);
      return weighted_sum(out.mask.mask, wm) + weighted_sum(out.image, wi);
    };
    model.zero_generator_grads();
    model.generate(patches, z, Mode::kTrain);
    model.backward_generator(wm, wi);
    const auto g_pts = probes(model.generator_parameters(), rng, 3);
    const GradStats g = compare_param_grads<double>(g_pts, g_loss, 1e-6, 1e-7);
    CHECK(g.checked > 40);
    CHECK(g.worst < 1e-5);

    // Mask gradient only reaches the encoder and mask decoder.
    model.zero_generator_grads();
    model.generate(patches, z, Mode::kTrain);
    model.backward_generator(wm, Tensor<double>());
    for (auto* p : model.image_decoder_parameters())
      for (double v : p->grad.values()) REQUIRE(v == 0.0);

    const Tensor<double> images = oracle::random_tensor<double>({3, 3, 16, 16}, rng);
    Tensor<double> x = images;
    const Tensor<double> wd = oracle::random_tensor<double>({3, 1, 1, 1}, rng);
    auto d_loss = [&] { return weighted_sum(model.discriminate(x, Mode::kTrain), wd); };
    model.zero_discriminator_grads();
    model.discriminate(x, Mode::kTrain);
    const Tensor<double> gx = model.backward_discriminator(wd, true);
    const auto d_pts = probes(model.discriminator_parameters(), rng, 4);
    const GradStats d = compare_param_grads<double>(d_pts, d_loss, 1e-6, 1e-7);
    CHECK(d.worst < 1e-5);
    double worst_input = 0;
    for (std::size_t i : {0u, 77u, 300u, 511u, 700u}) {
      const double saved = x[i];
      x[i] = saved + 1e-5;
      const double up = d_loss();
      x[i] = saved - 1e-5;
      const double down = d_loss();
      x[i] = saved;
      REQUIRE(std::isfinite(gx[i]));
      worst_input = std::max(worst_input, oracle::relative_error(gx[i], (up - down) / 2e-5, 1e-7));
    }
    CHECK(worst_input < 1e-5);
  }

  TEST_CASE("gradients of the concatenating and skip-free variants") {
    for (int variant = 0; variant < 2; ++variant) {
      ModelConfig config = mini_config(2);
      if (variant == 0) config.skips = false;
      else config.encoder = EncoderKind::kConcat;
      Model<double> model(config);
      // Three samples: batch norm over two samples is nearly flat in its input.
      model.init(13);
      std::mt19937_64 rng(14);
      const Tensor<double> patches = oracle::random_tensor<double>({6, 3, 16, 16}, rng);
      const Tensor<double> z = sample_noise<double>(3, config.noise_dim, rng);
      const Tensor<double> wm = oracle::random_tensor<double>({3, 1, 16, 16}, rng);
      const Tensor<double> wi = oracle::random_tensor<double>({3, 3, 16, 16}, rng);
      auto loss = [&] {
        const auto out = model.generate(patches, z, Mode::kTrain);
        return weighted_sum(out.mask.mask, wm) + weighted_sum(out.image, wi);
      };
      model.zero_generator_grads();
      model.generate(patches, z, Mode::kTrain);
      model.backward_generator(wm, wi);
      const auto pts = probes(model.generator_parameters(), rng, 2);
      CHECK(compare_param_grads<double>(pts, loss, 1e-6, 1e-7).worst < 1e-5);
    }
  }

  TEST_CASE("single precision gradients agree within 1e-3") {
    const ModelConfig config = mini_config(2);
    Model<double> ref(config);
    ref.init(15);
    Model<float> model(config);
    model.init(15);
    std::mt19937_64 rng(16);
    const Tensor<double> patches = oracle::random_tensor<double>({4, 3, 16, 16}, rng);
    const Tensor<double> z = sample_noise<double>(2, config.noise_dim, rng);
    const Tensor<double> wm = oracle::random_tensor<double>({2, 1, 16, 16}, rng);
    const Tensor<double> wi = oracle::random_tensor<double>({2, 3, 16, 16}, rng);
    ref.zero_generator_grads();
    ref.generate(patches, z, Mode::kTrain);
    ref.backward_generator(wm, wi);
    model.zero_generator_grads();
    model.generate(patches.cast<float>(), z.cast<float>(), Mode::kTrain);
    model.backward_generator(wm.cast<float>(), wi.cast<float>());
    const auto pd = ref.generator_parameters();
    const auto pf = model.generator_parameters();
    REQUIRE(pd.size() == pf.size());
    double worst = 0;
    for (std::size_t k = 0; k < pd.size(); ++k) {
      double scale = 0;
      for (double v : pd[k]->grad.values()) scale = std::max(scale, std::fabs(v));
      for (std::size_t i = 0; i < pd[k]->grad.size(); ++i)
        worst = std::max(worst, std::fabs(pd[k]->grad[i] - pf[k]->grad[i]) / std::max(scale, 1e-6));
    }
    CHECK(worst < 1e-3);
  }

  TEST_CASE("init statistics and determinism") {
    ModelConfig config;  // 64 x 64, base 64
    Model<float> a(config), b(config);
    a.init(7);
    b.init(7);
    const auto pa = a.generator_parameters();
    const auto pb = b.generator_parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) REQUIRE(pa[i]->value == pb[i]->value);
    int large = 0;
    auto audit = [&](const std::vector<nn::Parameter<float>*>& params) {
      for (auto* p : params) {
        if (!p->is_weight) {
          const bool is_scale = p->name.find("gamma") != std::string::npos;
          for (float v : p->value.values()) REQUIRE(v == (is_scale ? 1.0f : 0.0f));
          continue;
        }
        if (p->value.size() < 10000) continue;
        ++large;
        // First 10k elements of each tensor.
        double mean = 0, sq = 0;
        for (int i = 0; i < 10000; ++i) mean += p->value[i];
        mean /= 10000;
        for (int i = 0; i < 10000; ++i) sq += (p->value[i] - mean) * (p->value[i] - mean);
        const double sd = std::sqrt(sq / 9999);
        CHECK(std::fabs(mean) <= 3 * 0.02 / 100);
        CHECK(sd >= 0.018);
        CHECK(sd <= 0.022);
      }
    };
    audit(a.generator_parameters());
    audit(a.discriminator_parameters());
    CHECK(large > 10);
    Model<float> c(config);
    c.init(8);
    CHECK(c.generator_parameters()[0]->value != pa[0]->value);
  }

  TEST_CASE("unsupported image size is a configuration error") {
    ModelConfig config;
    config.image_size = 32;
    try {
      Model<float> m(config);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.category() == ErrorCategory::kConfig);
    }
  }

  TEST_CASE("shape audit at 128") {
    ModelConfig config;
    config.image_size = 128;
    config.base_channels = 4;
    config.n_patches = 2;
    Model<float> model(config);
    model.init(1);
    std::mt19937_64 rng(2);
    const Tensor<float> patches = oracle::random_tensor<float>({2, 3, 128, 128}, rng);
    const Tensor<float> z = sample_noise<float>(1, 100, rng);
    const auto out = model.generate(patches, z, Mode::kInference);
    REQUIRE(out.encoding.pyramid.size() == 5);
    const int enc_sizes[] = {64, 32, 16, 8, 4};
    for (int i = 0; i < 5; ++i) {
      CHECK(out.encoding.pyramid[i].h() == enc_sizes[i]);
      CHECK(out.encoding.pyramid[i].c() == 4 << i);
    }
    CHECK(out.encoding.embedding.shape() == Shape{1, 100, 1, 1});
    REQUIRE(out.mask.pyramid.size() >= 5);
    for (int j = 0; j < 5; ++j) CHECK(out.mask.pyramid[j].h() == 4 << j);
    CHECK(out.mask.mask.shape() == Shape{1, 1, 128, 128});
    CHECK(out.image.shape() == Shape{1, 3, 128, 128});
    CHECK(model.discriminate(out.image, Mode::kInference).shape() == Shape{1, 1, 1, 1});
  }

  TEST_CASE("forward ranges, finiteness and determinism at 64") {
    ModelConfig config;
    config.base_channels = 8;
    Model<float> model(config);
    model.init(3);
    std::mt19937_64 rng(4);
    const Tensor<float> patches = oracle::random_tensor<float>({6, 3, 64, 64}, rng);
    const Tensor<float> z = sample_noise<float>(2, 100, rng);
    const auto a = model.generate(patches, z, Mode::kInference);
    const auto b = model.generate(patches, z, Mode::kInference);
    CHECK(a.mask.mask == b.mask.mask);
    CHECK(a.image == b.image);
    for (float v : a.mask.mask.values()) {
      REQUIRE(v > 0.0f);
      REQUIRE(v < 1.0f);
    }
    for (float v : a.image.values()) {
      REQUIRE(v > -1.0f);
      REQUIRE(v < 1.0f);
    }
    const Tensor<float> d = model.discriminate(a.image, Mode::kInference);
    for (float v : d.values()) {
      REQUIRE(v > 0.0f);
      REQUIRE(v < 1.0f);
    }
    CHECK(all_finite(a.encoding.embedding.values()));
    const Tensor<float> z2 = sample_noise<float>(2, 100, rng);
    CHECK(max_abs_diff(model.generate(patches, z2, Mode::kInference).image, a.image) > 0.0f);
  }

  TEST_CASE("encoder is permutation invariant and additive") {
    ModelConfig config;
    config.base_channels = 8;
    Model<float> model(config);
    model.init(5);
    std::mt19937_64 rng(6);
    const Tensor<float> patches = oracle::random_tensor<float>({3, 3, 64, 64}, rng);
    const Tensor<float> z = sample_noise<float>(1, 100, rng);
    Tensor<float> permuted(patches.shape());
    const int order[] = {2, 0, 1};
    for (int i = 0; i < 3; ++i)
      std::copy(patches.item(order[i]).begin(), patches.item(order[i]).end(), permuted.item(i).begin());
    const auto a = model.generate(patches, z, Mode::kInference);
    const auto b = model.generate(permuted, z, Mode::kInference);
    CHECK(max_abs_diff(a.encoding.embedding, b.encoding.embedding) <= 1e-4f);
    for (std::size_t i = 0; i < a.encoding.pyramid.size(); ++i)
      CHECK(max_abs_diff(a.encoding.pyramid[i], b.encoding.pyramid[i]) <= 1e-4f);
    CHECK(max_abs_diff(a.mask.mask, b.mask.mask) <= 1e-4f);
    CHECK(max_abs_diff(a.image, b.image) <= 1e-4f);

    // Raw sums: compare pyramid levels, which carry no normalization after the sum.
    ModelConfig two = config;
    two.n_patches = 2;
    ModelConfig one = config;
    one.n_patches = 1;
    Model<float> m2(two), m1(one);
    m2.init(5);
    m1.init(5);
    Tensor<float> single(Shape{1, 3, 64, 64});
    std::copy(patches.item(0).begin(), patches.item(0).end(), single.item(0).begin());
    Tensor<float> doubled(Shape{2, 3, 64, 64});
    std::copy(patches.item(0).begin(), patches.item(0).end(), doubled.item(0).begin());
    std::copy(patches.item(0).begin(), patches.item(0).end(), doubled.item(1).begin());
    const auto e1 = m1.encode_parts(single, Mode::kInference);
    const auto e2 = m2.encode_parts(doubled, Mode::kInference);
    for (std::size_t i = 0; i < e1.pyramid.size(); ++i) {
      Tensor<float> twice = e1.pyramid[i];
      for (float& v : twice.values()) v *= 2;
      CHECK(max_abs_diff(e2.pyramid[i], twice) <= 1e-4f);
    }
  }

  TEST_CASE("concatenating encoder depends on order") {
    ModelConfig config;
    config.base_channels = 8;
    config.encoder = EncoderKind::kConcat;
    Model<float> model(config);
    model.init(5);
    std::mt19937_64 rng(6);
    const Tensor<float> patches = oracle::random_tensor<float>({3, 3, 64, 64}, rng);
    Tensor<float> swapped = patches;
    std::copy(patches.item(1).begin(), patches.item(1).end(), swapped.item(0).begin());
    std::copy(patches.item(0).begin(), patches.item(0).end(), swapped.item(1).begin());
    const auto a = model.encode_parts(patches, Mode::kInference);
    const auto b = model.encode_parts(swapped, Mode::kInference);
    CHECK(max_abs_diff(a.embedding, b.embedding) > 1e-4f);
  }

  TEST_CASE("inference outputs do not depend on batch companions") {
    ModelConfig config;
    config.base_channels = 8;
    Model<float> model(config);
    model.init(9);
    std::mt19937_64 rng(10);
    const Tensor<float> images = oracle::random_tensor<float>({3, 3, 64, 64}, rng);
    const Tensor<float> all = model.discriminate(images, Mode::kInference);
    for (int i = 0; i < 3; ++i) {
      Tensor<float> one(Shape{1, 3, 64, 64});
      std::copy(images.item(i).begin(), images.item(i).end(), one.item(0).begin());
      CHECK(model.discriminate(one, Mode::kInference)[0] == doctest::Approx(all[i]).epsilon(1e-5));
    }
  }

  TEST_CASE("skip-free model still produces valid outputs") {
    ModelConfig config;
    config.base_channels = 8;
    config.skips = false;
    Model<float> model(config);
    model.init(2);
    std::mt19937_64 rng(3);
    const auto out = model.generate(oracle::random_tensor<float>({3, 3, 64, 64}, rng),
                                    sample_noise<float>(1, 100, rng), Mode::kInference);
    CHECK(out.mask.mask.shape() == Shape{1, 1, 64, 64});
    CHECK(out.image.shape() == Shape{1, 3, 64, 64});
    CHECK(all_finite(out.image.values()));
  }

  TEST_CASE("mismatched patch tensors are shape errors") {
    ModelConfig config;
    config.base_channels = 8;
    Model<float> model(config);
    try {
      model.encode_parts(Tensor<float>(Shape{4, 3, 64, 64}), Mode::kInference);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.category() == ErrorCategory::kShape);
    }
    CHECK_THROWS_AS(model.encode_parts(Tensor<float>(Shape{3, 3, 32, 32}), Mode::kInference), Error);
  }

  TEST_CASE("copy_from reproduces outputs") {
    const ModelConfig config = mini_config(2);
    Model<float> a(config), b(config);
    a.init(1);
    b.init(2);
    b.copy_from(a);
    std::mt19937_64 rng(3);
    const Tensor<float> p = oracle::random_tensor<float>({2, 3, 16, 16}, rng);
    const Tensor<float> z = sample_noise<float>(1, config.noise_dim, rng);
    CHECK(a.generate(p, z, Mode::kInference).image == b.generate(p, z, Mode::kInference).image);
  }
}
