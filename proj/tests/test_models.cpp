#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fd_harness.hpp"
#include "lidarseg/feature_extractor.hpp"
#include "lidarseg/neighborhood.hpp"
#include "lidarseg/params.hpp"
#include "lidarseg/unet.hpp"
#include "oracles.hpp"

using namespace lidarseg;
using ad::make_tensor;
using ad::Mode;
using ad::Tape;
using ad::TensorPtr;

namespace {

// Quantized random image (multiples of 1/1024) so translations stay exact.
RangeImage random_image(Rng& rng, int height, int width, double occupancy) {
  RangeImage img(height, width);
  auto& cx = img.add_channel("x");
  auto& cy = img.add_channel("y");
  auto& cz = img.add_channel("z");
  auto& cr = img.add_channel("reflectance");
  auto& cd = img.add_channel("depth");
  for (std::size_t px = 0; px < img.pixel_count(); ++px) {
    if (rng.uniform() > occupancy) continue;
    img.mask()[px] = 1;
    auto q = [&](double lo, double hi) {
      return static_cast<float>(std::floor(rng.uniform(lo, hi) * 1024.0) / 1024.0);
    };
    cx[px] = q(-20, 20);
    cy[px] = q(-20, 20);
    cz[px] = q(-2, 3);
    cr[px] = static_cast<float>(rng.uniform());
    cd[px] = 5.0f;
  }
  return img;
}

template <class S>
ExtractorOutput<S> run_extractor(const FeatureExtractor<S>& fx, const RangeImage& img,
                                 const NeighborField& nf, Mode mode, Tape<S>& tape) {
  auto neighbors = neighbor_tensor<S>({&nf});
  auto centers = center_tensor<S>({&img});
  return fx.forward(tape, neighbors, centers, mode, static_cast<S>(0.99));
}

}  // namespace

TEST_CASE("extractor output reshapes to pixel_count x N") {
  Rng rng(41);
  const RangeImage img = random_image(rng, 6, 10, 0.7);
  const NeighborField nf = build_neighbor_field(img, CoordMode::kRelative);
  ExtractorConfig cfg;  // N = 3
  ParamStore<double> store;
  Rng init(1);
  FeatureExtractor<double> fx(cfg, store, init);
  Tape<double> tape;
  const auto out = run_extractor(fx, img, nf, Mode::kEval, tape);
  CHECK(out.features->shape == std::vector<std::size_t>{60, 3});
  CHECK(out.pooled->shape == std::vector<std::size_t>{60, 16});
}

TEST_CASE("permuting the 8 neighbor slots leaves the extractor output bitwise unchanged") {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const RangeImage img = random_image(rng, 4, 6, 0.8);
    const NeighborField nf = build_neighbor_field(img, CoordMode::kRelative);
    ExtractorConfig cfg;
    ParamStore<double> store;
    Rng init(100 + static_cast<uint64_t>(trial));
    FeatureExtractor<double> fx(cfg, store, init);

    Tape<double> tape;
    const auto base = run_extractor(fx, img, nf, Mode::kEval, tape);

    NeighborField shuffled = nf;
    std::vector<std::size_t> perm = {0, 1, 2, 3, 4, 5, 6, 7};
    rng.shuffle(perm);
    for (int r = 0; r < nf.height; ++r)
      for (int c = 0; c < nf.width; ++c)
        for (int s = 0; s < 8; ++s)
          for (int d = 0; d < 3; ++d)
            shuffled.values[shuffled.slot_offset(r, c, s) + static_cast<std::size_t>(d)] =
                nf.values[nf.slot_offset(r, c, static_cast<int>(perm[static_cast<std::size_t>(s)])) +
                          static_cast<std::size_t>(d)];

    Tape<double> tape2;
    const auto permuted = run_extractor(fx, img, shuffled, Mode::kEval, tape2);
    CHECK(base.features->value == permuted.features->value);  // bitwise
    CHECK(base.pooled->value == permuted.pooled->value);
  }
}

TEST_CASE("stage-1 pooled features are translation invariant in relative mode") {
  Rng rng(43);
  for (int trial = 0; trial < 20; ++trial) {
    RangeImage img = random_image(rng, 5, 8, 0.75);
    const NeighborField nf = build_neighbor_field(img, CoordMode::kRelative);

    RangeImage moved = img;
    const float tx = static_cast<float>(rng.index(16)) - 8.0f;
    const float ty = static_cast<float>(rng.index(16)) - 8.0f;
    const float tz = static_cast<float>(rng.index(6)) - 3.0f;
    for (std::size_t px = 0; px < moved.pixel_count(); ++px) {
      if (!moved.mask()[px]) continue;
      moved.channel("x")[px] += tx;
      moved.channel("y")[px] += ty;
      moved.channel("z")[px] += tz;
    }
    const NeighborField nf_moved = build_neighbor_field(moved, CoordMode::kRelative);
    CHECK(nf.values == nf_moved.values);  // exact: inputs quantized

    ExtractorConfig cfg;
    ParamStore<double> store;
    Rng init(7 + static_cast<uint64_t>(trial));
    FeatureExtractor<double> fx(cfg, store, init);
    Tape<double> t1, t2;
    const auto base = run_extractor(fx, img, nf, Mode::kEval, t1);
    const auto shifted = run_extractor(fx, moved, nf_moved, Mode::kEval, t2);
    CHECK(base.pooled->value == shifted.pooled->value);  // stage 1, bitwise
    // The second stage sees the translated centers, so features may differ.
  }
}

TEST_CASE("absolute mode equals relative mode when the center is the origin") {
  RangeImage img(1, 2);
  auto& cx = img.add_channel("x");
  auto& cy = img.add_channel("y");
  auto& cz = img.add_channel("z");
  img.add_channel("reflectance");
  img.add_channel("depth");
  img.mask()[0] = 1;  // center at the origin
  img.mask()[1] = 1;
  cx[1] = 2.0f;
  cy[1] = -1.0f;
  cz[1] = 0.5f;

  const NeighborField rel = build_neighbor_field(img, CoordMode::kRelative);
  const NeighborField abs = build_neighbor_field(img, CoordMode::kAbsolute);
  // Pixel 0's East slot: q - 0 == q.
  for (int d = 0; d < 3; ++d)
    CHECK(rel.values[rel.slot_offset(0, 0, 4) + static_cast<std::size_t>(d)] ==
          abs.values[abs.slot_offset(0, 0, 4) + static_cast<std::size_t>(d)]);

  ExtractorConfig cfg;
  ParamStore<double> store;
  Rng init(5);
  FeatureExtractor<double> fx(cfg, store, init);
  Tape<double> t1, t2;
  const auto out_rel = run_extractor(fx, img, rel, Mode::kEval, t1);
  const auto out_abs = run_extractor(fx, img, abs, Mode::kEval, t2);
  // Only pixel 0 has its center at the origin; compare its feature row.
  for (int j = 0; j < cfg.feature_count; ++j)
    CHECK(out_rel.features->value[static_cast<std::size_t>(j)] ==
          out_abs.features->value[static_cast<std::size_t>(j)]);
}

TEST_CASE("extractor gradients match finite differences end to end") {
  Rng rng(44);
  ExtractorConfig cfg;
  cfg.mlp1_widths = {4, 6};
  cfg.mlp2_widths = {5};
  cfg.feature_count = 2;
  ParamStore<double> store;
  Rng init(9);
  FeatureExtractor<double> fx(cfg, store, init);

  const std::size_t pixels = 6;
  auto neighbors = make_tensor<double>({pixels * 8, 3}, true);
  auto centers = make_tensor<double>({pixels, 4}, true);
  fdtest::fill_random(rng, neighbors, -1, 1);
  fdtest::fill_random(rng, centers, -1, 1);

  std::vector<TensorPtr<double>> inputs = {neighbors, centers};
  std::vector<TensorPtr<double>> buffers;
  for (const auto& e : store.entries()) {
    if (e.trainable) inputs.push_back(e.tensor);
    else buffers.push_back(e.tensor);
  }
  for (const Mode mode : {Mode::kTrain, Mode::kEval}) {
    fdtest::FdHarness harness{
        inputs, buffers, [&, mode](Tape<double>& t) {
          return fx.forward(t, neighbors, centers, mode, 0.99).features;
        }};
    CHECK(harness.run(rng) < 1e-4);
  }
}

TEST_CASE("unet maps 64x128x3 to 64x128x4 with the default depth") {
  UNetConfig cfg;  // depth 3, base 16, in 3, out 4
  ParamStore<float> store;
  Rng init(11);
  UNet<float> net(cfg, store, init);
  auto x = make_tensor<float>({1, 3, 64, 128});
  Rng rng(45);
  for (auto& v : x->value) v = static_cast<float>(rng.uniform(-1, 1));
  Tape<float> tape;
  auto y = net.forward(tape, x, Mode::kEval, 0.99f);
  CHECK(y->shape == std::vector<std::size_t>{1, 4, 64, 128});
}

TEST_CASE("unet rejects spatial dims not divisible by 2^depth") {
  UNetConfig cfg;
  ParamStore<float> store;
  Rng init(12);
  UNet<float> net(cfg, store, init);
  auto x = make_tensor<float>({1, 3, 60, 128});  // 60/8 is not integral
  Tape<float> tape;
  try {
    net.forward(tape, x, Mode::kEval, 0.99f);
    FAIL("expected IndivisibleSpatialDims");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IndivisibleSpatialDims);
  }
}

TEST_CASE("skip concatenation doubles the decoder double-conv input channels") {
  UNetConfig cfg;
  cfg.depth = 3;
  cfg.base_channels = 16;
  ParamStore<float> store;
  Rng init(13);
  UNet<float> net(cfg, store, init);
  for (int s = 0; s < cfg.depth; ++s) {
    const auto w = store.at("unet.dec" + std::to_string(s) + ".conv0.w");
    const std::size_t out = static_cast<std::size_t>(cfg.base_channels) << s;
    CHECK(w->shape == std::vector<std::size_t>{out, out * 2, 3, 3});
  }
}

TEST_CASE("zero input with zero weights propagates the final bias pattern") {
  UNetConfig cfg;
  cfg.depth = 2;
  cfg.base_channels = 4;
  cfg.in_channels = 3;
  ParamStore<double> store;
  Rng init(14);
  UNet<double> net(cfg, store, init);
  for (const auto& e : store.entries()) {
    if (!e.trainable) continue;
    std::fill(e.tensor->value.begin(), e.tensor->value.end(), 0.0);
  }
  auto out_b = store.at("unet.out.b");
  out_b->value = {0.5, -1.0, 2.0, 0.25};

  auto x = make_tensor<double>({1, 3, 8, 8});
  Tape<double> tape;
  auto y = net.forward(tape, x, Mode::kTrain, 0.99);
  const std::size_t plane = 64;
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < plane; ++i)
      CHECK(y->value[c * plane + i] == out_b->value[c]);
}

TEST_CASE("tiny unet gradients match finite differences") {
  Rng rng(46);
  UNetConfig cfg;
  cfg.depth = 1;
  cfg.base_channels = 2;
  cfg.in_channels = 2;
  cfg.out_channels = 2;
  for (const bool bn : {true, false}) {
    cfg.batch_norm = bn;
    ParamStore<double> store;
    Rng init(15);
    UNet<double> net(cfg, store, init);
    auto x = make_tensor<double>({1, 2, 4, 4}, true);
    fdtest::fill_random(rng, x, -1, 1);

    std::vector<TensorPtr<double>> inputs = {x};
    std::vector<TensorPtr<double>> buffers;
    for (const auto& e : store.entries()) {
      if (e.trainable) inputs.push_back(e.tensor);
      else buffers.push_back(e.tensor);
    }
    for (const Mode mode : {Mode::kTrain, Mode::kEval}) {
      fdtest::FdHarness harness{inputs, buffers, [&, mode](Tape<double>& t) {
                                  return net.forward(t, x, mode, 0.99);
                                }};
      CHECK(harness.run(rng) < 1e-4);
    }
  }
}

TEST_CASE("eval-mode forward is independent of batch composition") {
  Rng rng(47);
  UNetConfig cfg;
  cfg.depth = 2;
  cfg.base_channels = 4;
  cfg.in_channels = 3;
  ParamStore<double> store;
  Rng init(16);
  UNet<double> net(cfg, store, init);

  auto a = make_tensor<double>({1, 3, 8, 8});
  auto b = make_tensor<double>({1, 3, 8, 8});
  fdtest::fill_random(rng, a, -1, 1);
  fdtest::fill_random(rng, b, -1, 1);
  auto both = make_tensor<double>({2, 3, 8, 8});
  std::copy(a->value.begin(), a->value.end(), both->value.begin());
  std::copy(b->value.begin(), b->value.end(), both->value.begin() + a->size());

  Tape<double> t1, t2;
  auto alone = net.forward(t1, a, Mode::kEval, 0.99);
  auto batched = net.forward(t2, both, Mode::kEval, 0.99);
  for (std::size_t i = 0; i < alone->size(); ++i)
    CHECK(alone->value[i] == batched->value[i]);  // bitwise
}

TEST_CASE("32-bit and 64-bit forward passes agree within 1e-3 relative") {
  Rng rng(48);
  ExtractorConfig ecfg;
  UNetConfig ucfg;
  ucfg.depth = 2;
  ucfg.base_channels = 8;
  ucfg.in_channels = ecfg.feature_count;

  ParamStore<double> store64;
  Rng init64(17);
  FeatureExtractor<double> fx64(ecfg, store64, init64);
  UNet<double> net64(ucfg, store64, init64);

  ParamStore<float> store32;
  Rng init32(17);
  FeatureExtractor<float> fx32(ecfg, store32, init32);
  UNet<float> net32(ucfg, store32, init32);
  copy_param_values(store64, store32);

  const RangeImage img = random_image(rng, 8, 16, 0.8);
  const NeighborField nf = build_neighbor_field(img, CoordMode::kRelative);

  Tape<double> t64;
  auto n64 = neighbor_tensor<double>({&nf});
  auto c64 = center_tensor<double>({&img});
  auto f64 = fx64.forward(t64, n64, c64, Mode::kEval, 0.99);
  auto fmap64 = ad::permute(t64, ad::reshape(t64, f64.features, {1, 8, 16, 3}), {0, 3, 1, 2});
  auto y64 = net64.forward(t64, fmap64, Mode::kEval, 0.99);

  Tape<float> t32;
  auto n32 = neighbor_tensor<float>({&nf});
  auto c32 = center_tensor<float>({&img});
  auto f32 = fx32.forward(t32, n32, c32, Mode::kEval, 0.99f);
  auto fmap32 = ad::permute(t32, ad::reshape(t32, f32.features, {1, 8, 16, 3}), {0, 3, 1, 2});
  auto y32 = net32.forward(t32, fmap32, Mode::kEval, 0.99f);

  for (std::size_t i = 0; i < y64->size(); ++i) {
    const double v64 = y64->value[i];
    const double v32 = static_cast<double>(y32->value[i]);
    const double scale = std::max({1.0, std::fabs(v64), std::fabs(v32)});
    CHECK(std::fabs(v64 - v32) / scale < 1e-3);
  }
}

TEST_CASE("extractor config invariants") {
  ExtractorConfig cfg;
  cfg.feature_count = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.feature_count = 3;
  cfg.mlp1_widths = {8, 0};
  CHECK_THROWS_AS(cfg.validate(), Error);
}
