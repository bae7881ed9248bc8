#ifndef LIDARSEG_FEATURE_EXTRACTOR_HPP
#define LIDARSEG_FEATURE_EXTRACTOR_HPP

// Per-point 3D feature learning: a shared MLP over each pixel's neighbor set,
// max-pooling across the set, concatenation with the center point and its
// reflectance, and a second MLP down to N features per point. One batched
// pass covers the whole cloud; the result reshapes to an H x W x N image.

#include <string>
#include <vector>

#include "lidarseg/autodiff.hpp"
#include "lidarseg/neighborhood.hpp"
#include "lidarseg/params.hpp"
#include "lidarseg/range_image.hpp"

namespace lidarseg {

struct ExtractorConfig {
  int feature_count = 3;                  // N output channels
  std::vector<int> mlp1_widths = {8, 16}; // per-neighbor MLP, input width 3
  std::vector<int> mlp2_widths = {16};    // hidden widths after concat; a final
                                          // plain linear layer maps to N
  CoordMode coord_mode = CoordMode::kRelative;
  bool wrap_azimuth = false;

  int pooled_width() const { return mlp1_widths.empty() ? 3 : mlp1_widths.back(); }

  void validate() const {
    if (feature_count < 1)
      throw Error(ErrorCode::InvalidArgument, "extractor needs feature_count >= 1");
    for (int w : mlp1_widths)
      if (w < 1) throw Error(ErrorCode::InvalidArgument, "mlp1 widths must be positive");
    for (int w : mlp2_widths)
      if (w < 1) throw Error(ErrorCode::InvalidArgument, "mlp2 widths must be positive");
  }
};

template <class S>
struct ExtractorOutput {
  ad::TensorPtr<S> features;  // cloud_size x N
  ad::TensorPtr<S> pooled;    // cloud_size x pooled_width, the stage-1 set features
};

/// Builds the (pixels*8) x 3 neighbor tensor for a batch of fields.
template <class S>
ad::TensorPtr<S> neighbor_tensor(const std::vector<const NeighborField*>& fields) {
  std::size_t pixels = 0;
  for (const auto* nf : fields) pixels += static_cast<std::size_t>(nf->height) * nf->width;
  auto t = ad::make_tensor<S>({pixels * 8, 3});
  std::size_t at = 0;
  for (const auto* nf : fields)
    for (float v : nf->values) t->value[at++] = static_cast<S>(v);
  return t;
}

/// Builds the pixels x 4 tensor of center coordinates and reflectance.
template <class S>
ad::TensorPtr<S> center_tensor(const std::vector<const RangeImage*>& images) {
  std::size_t pixels = 0;
  for (const auto* img : images) pixels += img->pixel_count();
  auto t = ad::make_tensor<S>({pixels, 4});
  std::size_t row = 0;
  for (const auto* img : images) {
    const auto& cx = img->channel("x");
    const auto& cy = img->channel("y");
    const auto& cz = img->channel("z");
    const auto& cr = img->channel("reflectance");
    for (std::size_t px = 0; px < img->pixel_count(); ++px, ++row) {
      t->value[row * 4 + 0] = static_cast<S>(cx[px]);
      t->value[row * 4 + 1] = static_cast<S>(cy[px]);
      t->value[row * 4 + 2] = static_cast<S>(cz[px]);
      t->value[row * 4 + 3] = static_cast<S>(cr[px]);
    }
  }
  return t;
}

template <class S>
class FeatureExtractor {
 public:
  FeatureExtractor(const ExtractorConfig& cfg, ParamStore<S>& store, Rng& rng)
      : cfg_(cfg) {
    cfg_.validate();
    int in_width = 3;
    for (std::size_t i = 0; i < cfg_.mlp1_widths.size(); ++i) {
      mlp1_.push_back(make_layer(store, "extractor.mlp1." + std::to_string(i), in_width,
                                 cfg_.mlp1_widths[i], rng));
      in_width = cfg_.mlp1_widths[i];
    }
    in_width = cfg_.pooled_width() + 4;
    for (std::size_t i = 0; i < cfg_.mlp2_widths.size(); ++i) {
      mlp2_.push_back(make_layer(store, "extractor.mlp2." + std::to_string(i), in_width,
                                 cfg_.mlp2_widths[i], rng));
      in_width = cfg_.mlp2_widths[i];
    }
    out_w_ = store.add("extractor.out.w",
                       {static_cast<std::size_t>(in_width),
                        static_cast<std::size_t>(cfg_.feature_count)},
                       true);
    out_b_ = store.add("extractor.out.b", {static_cast<std::size_t>(cfg_.feature_count)}, true);
    fill_uniform_fan_in(rng, out_w_, static_cast<std::size_t>(in_width));
  }

  const ExtractorConfig& config() const { return cfg_; }

  /// neighbors: (pixels*8) x 3, centers: pixels x 4.
  ExtractorOutput<S> forward(ad::Tape<S>& tape, const ad::TensorPtr<S>& neighbors,
                             const ad::TensorPtr<S>& centers, ad::Mode mode,
                             S bn_momentum) const {
    if (neighbors->rank() != 2 || neighbors->shape[1] != 3 ||
        neighbors->shape[0] != centers->shape[0] * 8 || centers->shape[1] != 4)
      throw Error(ErrorCode::ShapeMismatch, "extractor: bad neighbor/center tensors");
    const std::size_t pixels = centers->shape[0];

    auto x = neighbors;
    for (const auto& layer : mlp1_) x = apply_layer(tape, layer, x, mode, bn_momentum);
    x = ad::reshape(tape, x, {pixels, 8, static_cast<std::size_t>(cfg_.pooled_width())});
    auto pooled = ad::max_over_set(tape, x);

    auto y = ad::concat(tape, pooled, centers, 1);
    for (const auto& layer : mlp2_) y = apply_layer(tape, layer, y, mode, bn_momentum);
    auto features = ad::linear(tape, y, out_w_, out_b_);
    return {features, pooled};
  }

 private:
  struct Layer {
    ad::TensorPtr<S> w, b, gamma, beta, running_mean, running_var;
  };

  static Layer make_layer(ParamStore<S>& store, const std::string& prefix, int in_width,
                          int out_width, Rng& rng) {
    Layer l;
    const auto in = static_cast<std::size_t>(in_width);
    const auto out = static_cast<std::size_t>(out_width);
    l.w = store.add(prefix + ".w", {in, out}, true);
    l.b = store.add(prefix + ".b", {out}, true);
    l.gamma = store.add(prefix + ".bn_gamma", {out}, true);
    l.beta = store.add(prefix + ".bn_beta", {out}, true);
    l.running_mean = store.add(prefix + ".bn_mean", {out}, false);
    l.running_var = store.add(prefix + ".bn_var", {out}, false);
    fill_uniform_fan_in(rng, l.w, in);
    fill_constant(l.gamma, S(1));
    fill_constant(l.running_var, S(1));
    return l;
  }

  // Layer order follows the module listing: linear, ReLU, batch norm.
  ad::TensorPtr<S> apply_layer(ad::Tape<S>& tape, const Layer& layer,
                               const ad::TensorPtr<S>& x, ad::Mode mode,
                               S bn_momentum) const {
    auto y = ad::linear(tape, x, layer.w, layer.b);
    y = ad::relu(tape, y);
    return ad::batchnorm(tape, y, layer.gamma, layer.beta, layer.running_mean,
                         layer.running_var, bn_momentum, mode);
  }

  ExtractorConfig cfg_;
  std::vector<Layer> mlp1_, mlp2_;
  ad::TensorPtr<S> out_w_, out_b_;
};

}  // namespace lidarseg

#endif  // LIDARSEG_FEATURE_EXTRACTOR_HPP
