#ifndef LIDARSEG_TRAINER_HPP
#define LIDARSEG_TRAINER_HPP

#include <cstdio>
#include <memory>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "lidarseg/checkpoint.hpp"
#include "lidarseg/feature_extractor.hpp"
#include "lidarseg/loss.hpp"
#include "lidarseg/neighborhood.hpp"
#include "lidarseg/range_image.hpp"
#include "lidarseg/unet.hpp"

namespace lidarseg {

struct TrainConfig {
  double learning_rate = 0.001;
  int batch_size = 4;
  int epochs = 10;
  double bn_momentum = 0.99;
  uint64_t seed = 1;
  int checkpoint_interval = 0;  // epochs between intermediate checkpoints, 0 = none
  int precision = 32;           // 32 or 64
  int max_steps = 0;            // optional cap on optimizer steps, 0 = unlimited
  int iou_interval = 1;         // epochs between training-IoU log lines, 0 = never
  double target_mean_iou = 0.0; // stop once the training IoU reaches this, 0 = off

  void validate() const {
    if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
    if (epochs < 1) throw Error(ErrorCode::InvalidArgument, "epochs must be >= 1");
    if (!(bn_momentum > 0.0 && bn_momentum < 1.0))
      throw Error(ErrorCode::InvalidArgument, "bn_momentum must lie in (0, 1)");
    if (precision != 32 && precision != 64)
      throw Error(ErrorCode::InvalidArgument, "precision must be 32 or 64");
  }
};

/// Extractor plus U-Net sharing one parameter store.
template <class S>
struct Model {
  ExtractorConfig extractor_cfg;
  UNetConfig unet_cfg;
  ParamStore<S> store;
  std::unique_ptr<FeatureExtractor<S>> extractor;
  std::unique_ptr<UNet<S>> unet;

  Model(const ExtractorConfig& ecfg, UNetConfig ucfg, uint64_t seed)
      : extractor_cfg(ecfg), unet_cfg(ucfg) {
    unet_cfg.in_channels = ecfg.feature_count;
    Rng rng(seed);
    extractor = std::make_unique<FeatureExtractor<S>>(extractor_cfg, store, rng);
    unet = std::make_unique<UNet<S>>(unet_cfg, store, rng);
  }

  CheckpointMeta meta() const {
    CheckpointMeta m;
    m.set("precision", sizeof(S) == 4 ? "32" : "64");
    m.set("extractor.features", std::to_string(extractor_cfg.feature_count));
    auto join = [](const std::vector<int>& v) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(v[i]);
      }
      return s;
    };
    m.set("extractor.mlp1", join(extractor_cfg.mlp1_widths));
    m.set("extractor.mlp2", join(extractor_cfg.mlp2_widths));
    m.set("extractor.coords",
          extractor_cfg.coord_mode == CoordMode::kRelative ? "relative" : "absolute");
    m.set("extractor.wrap", extractor_cfg.wrap_azimuth ? "1" : "0");
    m.set("unet.depth", std::to_string(unet_cfg.depth));
    m.set("unet.base_channels", std::to_string(unet_cfg.base_channels));
    m.set("unet.batch_norm", unet_cfg.batch_norm ? "1" : "0");
    m.set("unet.classes", std::to_string(unet_cfg.out_channels));
    return m;
  }

  void save(const std::string& path, const AdamState<S>* adam) const {
    save_model_checkpoint(path, meta(), store, adam);
  }

  static std::unique_ptr<Model<S>> load(const std::string& path, AdamState<S>* adam,
                                        CheckpointMeta* meta_out = nullptr) {
    CheckpointMeta meta = read_checkpoint_meta(path);
    auto model = std::make_unique<Model<S>>(extractor_config_from_meta(meta),
                                            unet_config_from_meta(meta), /*seed=*/0);
    load_model_checkpoint<S>(path, model->store, adam, meta_out);
    return model;
  }

  static ExtractorConfig extractor_config_from_meta(const CheckpointMeta& meta) {
    ExtractorConfig cfg;
    cfg.feature_count = std::stoi(meta.require("extractor.features"));
    cfg.mlp1_widths = parse_widths(meta.require("extractor.mlp1"));
    cfg.mlp2_widths = parse_widths(meta.require("extractor.mlp2"));
    cfg.coord_mode = meta.require("extractor.coords") == "absolute" ? CoordMode::kAbsolute
                                                                    : CoordMode::kRelative;
    cfg.wrap_azimuth = meta.require("extractor.wrap") == "1";
    return cfg;
  }

  static UNetConfig unet_config_from_meta(const CheckpointMeta& meta) {
    UNetConfig cfg;
    cfg.depth = std::stoi(meta.require("unet.depth"));
    cfg.base_channels = std::stoi(meta.require("unet.base_channels"));
    cfg.batch_norm = meta.require("unet.batch_norm") == "1";
    cfg.out_channels = std::stoi(meta.require("unet.classes"));
    return cfg;
  }

  static std::vector<int> parse_widths(const std::string& text) {
    std::vector<int> widths;
    std::size_t start = 0;
    while (start < text.size()) {
      std::size_t comma = text.find(',', start);
      if (comma == std::string::npos) comma = text.size();
      if (comma > start) widths.push_back(std::stoi(text.substr(start, comma - start)));
      start = comma + 1;
    }
    return widths;
  }
};

/// Per-sample tensors that do not change across epochs.
struct PreparedSample {
  NeighborField nf;
  std::vector<float> weights;
};

template <class S>
struct TrainResult {
  std::unique_ptr<Model<S>> model;
  AdamState<S> adam;
  int steps = 0;
  IoUReport last_train_iou;
};

namespace detail {

inline void check_dataset(const std::vector<LabeledSample>& dataset, int divisor) {
  if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "no samples to train on");
  const int height = dataset.front().image.height();
  const int width = dataset.front().image.width();
  for (const auto& s : dataset) {
    if (s.image.height() != height || s.image.width() != width)
      throw Error(ErrorCode::ShapeHeterogeneity, "samples disagree on image size");
  }
  if (height % divisor != 0 || width % divisor != 0)
    throw Error(ErrorCode::IndivisibleSpatialDims,
                "image size must be divisible by " + std::to_string(divisor));
}

inline std::vector<double> resolve_class_weights(const std::vector<LabeledSample>& dataset,
                                                 const LossConfig& cfg) {
  if (!cfg.class_weights.empty()) {
    if (cfg.class_weights.size() != static_cast<std::size_t>(kNumClasses))
      throw Error(ErrorCode::InvalidArgument, "class_weights needs one entry per class");
    return cfg.class_weights;
  }
  // Inverse frequency over valid pixels of the training set, clamped to keep
  // rare classes from exploding the loss scale.
  std::vector<uint64_t> counts(kNumClasses, 0);
  uint64_t total = 0;
  for (const auto& s : dataset) {
    const auto& mask = s.image.mask();
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) continue;
      ++counts[static_cast<std::size_t>(s.labels[i])];
      ++total;
    }
  }
  std::vector<double> weights(kNumClasses, 1.0);
  for (int c = 0; c < kNumClasses; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) continue;
    double w = static_cast<double>(total) /
               (static_cast<double>(kNumClasses) *
                static_cast<double>(counts[static_cast<std::size_t>(c)]));
    w = std::min(100.0, std::max(0.05, w));
    weights[static_cast<std::size_t>(c)] = w;
  }
  return weights;
}

}  // namespace detail

/// Forward pass over a batch of images; returns softmax probabilities
/// (B x K x H x W) on the given tape.
template <class S>
ad::TensorPtr<S> batch_forward(const Model<S>& model, ad::Tape<S>& tape,
                               const std::vector<const RangeImage*>& images,
                               const std::vector<const NeighborField*>& fields,
                               ad::Mode mode, S bn_momentum) {
  const std::size_t bsz = images.size();
  const std::size_t height = images[0]->height();
  const std::size_t width = images[0]->width();
  const std::size_t feats = static_cast<std::size_t>(model.extractor_cfg.feature_count);

  auto neighbors = neighbor_tensor<S>(fields);
  auto centers = center_tensor<S>(images);
  auto extracted = model.extractor->forward(tape, neighbors, centers, mode, bn_momentum);
  auto fmap = ad::reshape(tape, extracted.features, {bsz, height, width, feats});
  fmap = ad::permute(tape, fmap, {0, 3, 1, 2});
  auto logits = model.unet->forward(tape, fmap, mode, bn_momentum);
  return ad::softmax_channels(tape, logits);
}

/// Argmax class per valid pixel; invalid pixels get -1 ("none").
template <class S>
std::vector<int32_t> predict(const Model<S>& model, const RangeImage& img) {
  const NeighborField nf = build_neighbor_field(img, model.extractor_cfg.coord_mode,
                                                model.extractor_cfg.wrap_azimuth);
  ad::Tape<S> tape;
  auto probs = batch_forward(model, tape, {&img}, {&nf}, ad::Mode::kEval,
                             static_cast<S>(0.99));
  const std::size_t classes = probs->shape[1];
  const std::size_t plane = probs->shape[2] * probs->shape[3];
  std::vector<int32_t> out(img.pixel_count(), -1);
  for (std::size_t px = 0; px < plane; ++px) {
    if (!img.mask()[px]) continue;
    std::size_t best = 0;
    S best_v = probs->value[px];
    for (std::size_t c = 1; c < classes; ++c) {
      const S v = probs->value[c * plane + px];
      if (v > best_v) {  // ties break toward the lower class id
        best_v = v;
        best = c;
      }
    }
    out[px] = static_cast<int32_t>(best);
  }
  return out;
}

/// Global confusion over the dataset, then IoU. With per_sample_average the
/// per-class scores are averaged over the samples where the class occurs
/// (the confusion matrix stays global either way).
template <class S>
IoUReport evaluate(const Model<S>& model, const std::vector<LabeledSample>& dataset,
                   int threads = 1, bool per_sample_average = false) {
  detail::check_dataset(dataset, model.unet_cfg.divisor());
  std::vector<IoUReport> reports(dataset.size());
  auto run_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto pred = predict(model, dataset[i].image);
      reports[i] = iou(pred, dataset[i].labels, dataset[i].image.mask());
    }
  };
  if (threads <= 1) {
    run_range(0, dataset.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (dataset.size() + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const std::size_t begin = std::min(dataset.size(), static_cast<std::size_t>(t) * chunk);
      const std::size_t end = std::min(dataset.size(), begin + chunk);
      if (begin < end) pool.emplace_back(run_range, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  std::array<std::array<uint64_t, kNumClasses>, kNumClasses> confusion{};
  for (const auto& r : reports)
    for (int a = 0; a < kNumClasses; ++a)
      for (int b = 0; b < kNumClasses; ++b)
        confusion[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] +=
            r.confusion[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
  IoUReport global = report_from_confusion(confusion);
  if (per_sample_average) {
    double object_sum = 0.0;
    int object_count = 0;
    for (int c = 0; c < kNumClasses; ++c) {
      double sum = 0.0;
      int count = 0;
      for (const auto& r : reports) {
        if (!r.present[static_cast<std::size_t>(c)]) continue;
        sum += r.iou[static_cast<std::size_t>(c)];
        ++count;
      }
      global.present[static_cast<std::size_t>(c)] = count > 0;
      global.iou[static_cast<std::size_t>(c)] = count > 0 ? sum / count : 0.0;
      if (c != kBackground && count > 0) {
        object_sum += global.iou[static_cast<std::size_t>(c)];
        ++object_count;
      }
    }
    global.average = object_count > 0 ? object_sum / object_count : 0.0;
  }
  return global;
}

/// Full training loop: seeded shuffle per epoch, batched forward, masked
/// weighted focal loss, Adam. Log lines go to `log` ("step=<n> epoch=<e>
/// loss=<f>", plus "epoch=<e> train_iou=<f>" at the configured interval).
template <class S>
TrainResult<S> train(const std::vector<LabeledSample>& dataset, const TrainConfig& tcfg,
                     const ExtractorConfig& ecfg, const UNetConfig& ucfg,
                     const LossConfig& lcfg, std::ostream& log,
                     const std::string& checkpoint_base = "") {
  tcfg.validate();
  lcfg.validate();
  UNetConfig ucfg_full = ucfg;
  ucfg_full.in_channels = ecfg.feature_count;
  detail::check_dataset(dataset, ucfg_full.divisor());

  TrainResult<S> result;
  result.model = std::make_unique<Model<S>>(ecfg, ucfg_full, tcfg.seed);
  Model<S>& model = *result.model;
  result.adam = AdamState<S>::init(model.store);

  LossConfig lcfg_eff = lcfg;
  lcfg_eff.class_weights = detail::resolve_class_weights(dataset, lcfg);
  const S gamma = static_cast<S>(lcfg_eff.effective_gamma());
  const S momentum = static_cast<S>(tcfg.bn_momentum);
  const S lr = static_cast<S>(tcfg.learning_rate);

  std::vector<PreparedSample> prepared;
  prepared.reserve(dataset.size());
  for (const auto& s : dataset) {
    PreparedSample p;
    p.nf = build_neighbor_field(s.image, ecfg.coord_mode, ecfg.wrap_azimuth);
    p.weights = border_weight_map(s.labels, s.image.mask(), s.image.height(),
                                  s.image.width(), lcfg_eff);
    prepared.push_back(std::move(p));
  }

  // Model construction consumed the head of the stream; shuffling continues it.
  Rng rng(tcfg.seed + 0x9e3779b97f4a7c15ull);
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const std::size_t pixels = dataset.front().image.pixel_count();
  char line[128];
  bool stop = false;
  for (int epoch = 1; epoch <= tcfg.epochs && !stop; ++epoch) {
    rng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size() && !stop;
         begin += static_cast<std::size_t>(tcfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(tcfg.batch_size));
      std::vector<const RangeImage*> images;
      std::vector<const NeighborField*> fields;
      std::vector<int32_t> labels;
      std::vector<uint8_t> mask;
      std::vector<S> weights;
      labels.reserve((end - begin) * pixels);
      for (std::size_t i = begin; i < end; ++i) {
        const auto& s = dataset[order[i]];
        images.push_back(&s.image);
        fields.push_back(&prepared[order[i]].nf);
        labels.insert(labels.end(), s.labels.begin(), s.labels.end());
        mask.insert(mask.end(), s.image.mask().begin(), s.image.mask().end());
        for (float w : prepared[order[i]].weights) weights.push_back(static_cast<S>(w));
      }

      ad::Tape<S> tape;
      auto probs = batch_forward(model, tape, images, fields, ad::Mode::kTrain, momentum);
      auto loss = ad::focal_loss(tape, probs, labels, mask, weights, gamma);

      ++result.steps;
      std::snprintf(line, sizeof(line), "step=%d epoch=%d loss=%.9g\n", result.steps,
                    epoch, static_cast<double>(loss->value[0]));
      log << line;

      model.store.zero_grad();
      tape.backward(loss);
      adam_step(model.store, result.adam, lr);

      if (tcfg.max_steps > 0 && result.steps >= tcfg.max_steps) stop = true;
    }

    const bool last = stop || epoch == tcfg.epochs;
    if (tcfg.iou_interval > 0 && (epoch % tcfg.iou_interval == 0 || last)) {
      result.last_train_iou = evaluate(model, dataset);
      std::snprintf(line, sizeof(line), "epoch=%d train_iou=%.6f\n", epoch,
                    result.last_train_iou.average);
      log << line;
      if (tcfg.target_mean_iou > 0.0 && result.last_train_iou.average >= tcfg.target_mean_iou)
        stop = true;
    }
    if (!checkpoint_base.empty() && tcfg.checkpoint_interval > 0 &&
        epoch % tcfg.checkpoint_interval == 0) {
      model.save(checkpoint_base + ".epoch" + std::to_string(epoch), &result.adam);
    }
  }
  return result;
}

}  // namespace lidarseg

#endif  // LIDARSEG_TRAINER_HPP
