#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "lidarseg/synthetic.hpp"
#include "lidarseg/trainer.hpp"

using namespace lidarseg;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("lidarseg_trainer_" + name)).string();
}

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  REQUIRE(in);
  std::vector<char> bytes(static_cast<std::size_t>(in.tellg()));
  in.seekg(0);
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  return bytes;
}

std::vector<LabeledSample> tiny_dataset(int count, uint64_t seed) {
  std::vector<LabeledSample> samples;
  for (int i = 0; i < count; ++i) {
    SceneConfig cfg;
    cfg.seed = seed + static_cast<uint64_t>(i);
    cfg.grid = GridConfig::frontal(16, 32);
    cfg.cars = 1;
    cfg.pedestrians = 1;
    cfg.cyclists = 0;
    cfg.range_min = 5.0;
    cfg.range_max = 10.0;
    samples.push_back(generate_scene(cfg).sample);
  }
  return samples;
}

ExtractorConfig tiny_extractor() {
  ExtractorConfig cfg;
  cfg.mlp1_widths = {4, 6};
  cfg.mlp2_widths = {6};
  cfg.feature_count = 2;
  return cfg;
}

UNetConfig tiny_unet() {
  UNetConfig cfg;
  cfg.depth = 2;
  cfg.base_channels = 4;
  return cfg;
}

TrainConfig tiny_train(int epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 2;
  cfg.seed = 5;
  cfg.iou_interval = 0;
  return cfg;
}

}  // namespace

TEST_CASE("training config invariants") {
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.bn_momentum = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.precision = 16;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("empty and heterogeneous datasets are rejected") {
  std::ostringstream log;
  CHECK_THROWS_AS(
      train<float>({}, tiny_train(1), tiny_extractor(), tiny_unet(), LossConfig{}, log),
      Error);

  auto dataset = tiny_dataset(1, 1);
  SceneConfig other;
  other.grid = GridConfig::frontal(32, 32);
  other.seed = 9;
  dataset.push_back(generate_scene(other).sample);
  try {
    train<float>(dataset, tiny_train(1), tiny_extractor(), tiny_unet(), LossConfig{}, log);
    FAIL("expected ShapeHeterogeneity");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeHeterogeneity);
  }
}

TEST_CASE("indivisible image sizes are rejected") {
  std::ostringstream log;
  auto dataset = tiny_dataset(1, 2);
  UNetConfig deep = tiny_unet();
  deep.depth = 5;  // 16 rows / 32 is not integral
  try {
    train<float>(dataset, tiny_train(1), tiny_extractor(), deep, LossConfig{}, log);
    FAIL("expected IndivisibleSpatialDims");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IndivisibleSpatialDims);
  }
}

TEST_CASE("identical seeded runs produce byte-identical checkpoints and logs") {
  const auto dataset = tiny_dataset(3, 11);
  const std::string ckpt_a = temp_path("det_a.ckpt");
  const std::string ckpt_b = temp_path("det_b.ckpt");

  std::ostringstream log_a, log_b;
  {
    auto result = train<float>(dataset, tiny_train(3), tiny_extractor(), tiny_unet(),
                               LossConfig{}, log_a);
    result.model->save(ckpt_a, &result.adam);
  }
  {
    auto result = train<float>(dataset, tiny_train(3), tiny_extractor(), tiny_unet(),
                               LossConfig{}, log_b);
    result.model->save(ckpt_b, &result.adam);
  }
  CHECK(log_a.str() == log_b.str());
  CHECK(read_bytes(ckpt_a) == read_bytes(ckpt_b));
  CHECK(log_a.str().find("step=1 epoch=1 loss=") == 0);
}

TEST_CASE("a different seed changes the checkpoint") {
  const auto dataset = tiny_dataset(2, 13);
  std::ostringstream log;
  auto a = train<float>(dataset, tiny_train(1), tiny_extractor(), tiny_unet(), LossConfig{},
                        log);
  TrainConfig other = tiny_train(1);
  other.seed = 99;
  auto b = train<float>(dataset, other, tiny_extractor(), tiny_unet(), LossConfig{}, log);
  const std::string pa = temp_path("seed_a.ckpt"), pb = temp_path("seed_b.ckpt");
  a.model->save(pa, nullptr);
  b.model->save(pb, nullptr);
  CHECK(read_bytes(pa) != read_bytes(pb));
}

TEST_CASE("loss decreases over the first steps on a fixed overfit batch") {
  const auto dataset = tiny_dataset(1, 17);
  TrainConfig cfg = tiny_train(10);
  cfg.batch_size = 1;  // one sample, one step per epoch: a fixed batch
  std::ostringstream log;
  train<double>(dataset, cfg, tiny_extractor(), tiny_unet(), LossConfig{}, log);

  std::istringstream lines(log.str());
  std::string line;
  std::vector<double> losses;
  while (std::getline(lines, line)) {
    const auto at = line.find("loss=");
    if (at != std::string::npos) losses.push_back(std::stod(line.substr(at + 5)));
  }
  REQUIRE(losses.size() == 10);
  for (std::size_t i = 1; i < losses.size(); ++i) CHECK(losses[i] < losses[i - 1]);
}

TEST_CASE("max_steps caps the optimizer steps") {
  const auto dataset = tiny_dataset(3, 19);
  TrainConfig cfg = tiny_train(10);
  cfg.max_steps = 4;
  std::ostringstream log;
  const auto result =
      train<float>(dataset, cfg, tiny_extractor(), tiny_unet(), LossConfig{}, log);
  CHECK(result.steps == 4);
}

TEST_CASE("predict labels invalid pixels none and valid pixels with the argmax") {
  const auto dataset = tiny_dataset(1, 23);
  std::ostringstream log;
  const auto result =
      train<float>(dataset, tiny_train(1), tiny_extractor(), tiny_unet(), LossConfig{}, log);
  const Model<float>& model = *result.model;

  const auto& img = dataset[0].image;
  const auto labels = predict(model, img);
  const NeighborField nf = build_neighbor_field(img, model.extractor_cfg.coord_mode);
  ad::Tape<float> tape;
  auto probs = batch_forward(model, tape, {&img}, {&nf}, ad::Mode::kEval, 0.99f);
  const std::size_t plane = img.pixel_count();
  for (std::size_t px = 0; px < plane; ++px) {
    if (!img.mask()[px]) {
      CHECK(labels[px] == -1);
      continue;
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < 4; ++c)
      if (probs->value[c * plane + px] > probs->value[best * plane + px]) best = c;
    CHECK(labels[px] == static_cast<int32_t>(best));
  }
}

TEST_CASE("predict on an all-invalid image returns all none") {
  std::ostringstream log;
  const auto dataset = tiny_dataset(1, 29);
  const auto result =
      train<float>(dataset, tiny_train(1), tiny_extractor(), tiny_unet(), LossConfig{}, log);
  RangeImage img(16, 32);
  img.add_channel("x");
  img.add_channel("y");
  img.add_channel("z");
  img.add_channel("reflectance");
  img.add_channel("depth");
  const auto labels = predict(*result.model, img);
  for (int32_t l : labels) CHECK(l == -1);
}

TEST_CASE("evaluate scores a perfectly predicted dataset at 1.0") {
  const auto dataset = tiny_dataset(2, 31);
  std::ostringstream log;
  const auto result =
      train<float>(dataset, tiny_train(1), tiny_extractor(), tiny_unet(), LossConfig{}, log);

  // Use the model's own predictions as ground truth.
  std::vector<LabeledSample> echo = dataset;
  for (auto& sample : echo) {
    const auto labels = predict(*result.model, sample.image);
    for (std::size_t px = 0; px < labels.size(); ++px)
      sample.labels[px] = sample.image.mask()[px] ? labels[px] : 0;
  }
  const IoUReport report = evaluate(*result.model, echo);
  for (int c = 0; c < kNumClasses; ++c) {
    if (report.present[static_cast<std::size_t>(c)])
      CHECK(report.iou[static_cast<std::size_t>(c)] == 1.0);
  }
  CHECK(report.average == 1.0);
}

TEST_CASE("evaluation is independent of sample order and thread count") {
  const auto dataset = tiny_dataset(4, 37);
  std::ostringstream log;
  const auto result =
      train<float>(dataset, tiny_train(2), tiny_extractor(), tiny_unet(), LossConfig{}, log);

  const IoUReport base = evaluate(*result.model, dataset);
  std::vector<LabeledSample> reversed(dataset.rbegin(), dataset.rend());
  const IoUReport swapped = evaluate(*result.model, reversed);
  CHECK(base.confusion == swapped.confusion);
  for (int c = 0; c < kNumClasses; ++c)
    CHECK(base.iou[static_cast<std::size_t>(c)] == swapped.iou[static_cast<std::size_t>(c)]);

  const IoUReport threaded = evaluate(*result.model, dataset, /*threads=*/3);
  CHECK(base.confusion == threaded.confusion);
}

TEST_CASE("global aggregation equals the IoU of concatenated pixel streams") {
  const auto dataset = tiny_dataset(3, 41);
  std::ostringstream log;
  const auto result =
      train<float>(dataset, tiny_train(1), tiny_extractor(), tiny_unet(), LossConfig{}, log);

  std::vector<int32_t> all_pred, all_gt;
  std::vector<uint8_t> all_mask;
  for (const auto& sample : dataset) {
    const auto pred = predict(*result.model, sample.image);
    for (std::size_t px = 0; px < pred.size(); ++px) {
      all_mask.push_back(sample.image.mask()[px]);
      all_gt.push_back(sample.labels[px]);
      all_pred.push_back(sample.image.mask()[px] ? pred[px] : 0);
    }
  }
  const IoUReport concat_report = iou(all_pred, all_gt, all_mask);
  const IoUReport eval_report = evaluate(*result.model, dataset);
  CHECK(concat_report.confusion == eval_report.confusion);
  for (int c = 0; c < kNumClasses; ++c)
    CHECK(concat_report.iou[static_cast<std::size_t>(c)] ==
          eval_report.iou[static_cast<std::size_t>(c)]);
}

TEST_CASE("checkpoint round-trip reproduces evaluation bitwise") {
  const auto dataset = tiny_dataset(2, 43);
  std::ostringstream log;
  auto result =
      train<float>(dataset, tiny_train(2), tiny_extractor(), tiny_unet(), LossConfig{}, log);
  const IoUReport before = evaluate(*result.model, dataset);

  const std::string path = temp_path("roundtrip.ckpt");
  result.model->save(path, &result.adam);
  AdamState<float> adam;
  auto loaded = Model<float>::load(path, &adam);
  const IoUReport after = evaluate(*loaded, dataset);

  CHECK(before.confusion == after.confusion);
  for (int c = 0; c < kNumClasses; ++c) {
    CHECK(before.iou[static_cast<std::size_t>(c)] == after.iou[static_cast<std::size_t>(c)]);
    CHECK(before.present[static_cast<std::size_t>(c)] ==
          after.present[static_cast<std::size_t>(c)]);
  }
  CHECK(before.average == after.average);
  CHECK(adam.step == result.adam.step);
  REQUIRE(adam.m.size() == result.adam.m.size());
  for (std::size_t i = 0; i < adam.m.size(); ++i) {
    CHECK(adam.m[i] == result.adam.m[i]);
    CHECK(adam.v[i] == result.adam.v[i]);
  }
}

TEST_CASE("saving a loaded checkpoint reproduces the file byte for byte") {
  const auto dataset = tiny_dataset(1, 47);
  std::ostringstream log;
  auto result =
      train<float>(dataset, tiny_train(1), tiny_extractor(), tiny_unet(), LossConfig{}, log);
  const std::string a = temp_path("rewrite_a.ckpt");
  const std::string b = temp_path("rewrite_b.ckpt");
  result.model->save(a, &result.adam);
  AdamState<float> adam;
  auto loaded = Model<float>::load(a, &adam);
  loaded->save(b, &adam);
  CHECK(read_bytes(a) == read_bytes(b));
}

TEST_CASE("training in 64-bit precision works end to end") {
  const auto dataset = tiny_dataset(1, 53);
  std::ostringstream log;
  TrainConfig cfg = tiny_train(2);
  cfg.precision = 64;
  const auto result =
      train<double>(dataset, cfg, tiny_extractor(), tiny_unet(), LossConfig{}, log);
  CHECK(result.steps == 2);
  const std::string path = temp_path("double.ckpt");
  result.model->save(path, &result.adam);
  const CheckpointMeta meta = read_checkpoint_meta(path);
  CHECK(meta.require("precision") == "64");
  auto loaded = Model<double>::load(path, nullptr);
  CHECK(loaded->unet_cfg.depth == 2);
}

TEST_CASE("per-epoch training IoU lines appear at the configured interval") {
  const auto dataset = tiny_dataset(2, 59);
  TrainConfig cfg = tiny_train(4);
  cfg.iou_interval = 2;
  std::ostringstream log;
  train<float>(dataset, cfg, tiny_extractor(), tiny_unet(), LossConfig{}, log);
  const std::string text = log.str();
  CHECK(text.find("epoch=2 train_iou=") != std::string::npos);
  CHECK(text.find("epoch=4 train_iou=") != std::string::npos);
  CHECK(text.find("epoch=1 train_iou=") == std::string::npos);
}

TEST_CASE("intermediate checkpoints are written at the configured interval") {
  const auto dataset = tiny_dataset(2, 61);
  TrainConfig cfg = tiny_train(4);
  cfg.checkpoint_interval = 2;
  const std::string base = temp_path("interval.ckpt");
  std::ostringstream log;
  train<float>(dataset, cfg, tiny_extractor(), tiny_unet(), LossConfig{}, log, base);
  CHECK(fs::exists(base + ".epoch2"));
  CHECK(fs::exists(base + ".epoch4"));
  CHECK(!fs::exists(base + ".epoch1"));
  CHECK(!fs::exists(base + ".epoch3"));
}
