#ifndef LIDARSEG_UNET_HPP
#define LIDARSEG_UNET_HPP

// Encoder-decoder segmentation network. Each encoder stage applies two 3x3
// same-padded convolutions with ReLU and halves the resolution with 2x2
// max-pooling, doubling the channel count; the decoder mirrors it with 2x2
// up-convolutions and skip concatenations; a final 1x1 convolution emits one
// logit plane per class.

#include <string>
#include <vector>

#include "lidarseg/autodiff.hpp"
#include "lidarseg/params.hpp"

namespace lidarseg {

struct UNetConfig {
  int depth = 3;          // down/up stages
  int base_channels = 16; // channels at full resolution
  int in_channels = 3;
  int out_channels = 4;
  bool batch_norm = true; // normalization after each double-conv ReLU

  void validate() const {
    if (depth < 1 || base_channels < 1 || in_channels < 1 || out_channels < 1)
      throw Error(ErrorCode::InvalidArgument, "unet config values must be positive");
  }

  int divisor() const { return 1 << depth; }
};

template <class S>
class UNet {
 public:
  UNet(const UNetConfig& cfg, ParamStore<S>& store, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    int channels = cfg_.in_channels;
    for (int s = 0; s < cfg_.depth; ++s) {
      const int out = cfg_.base_channels << s;
      encoder_.push_back(make_block(store, "unet.enc" + std::to_string(s), channels, out, rng));
      channels = out;
    }
    bottleneck_ = make_block(store, "unet.bottleneck", channels, channels * 2, rng);
    channels *= 2;
    for (int s = cfg_.depth - 1; s >= 0; --s) {
      const int out = cfg_.base_channels << s;
      Up up;
      up.w = store.add("unet.dec" + std::to_string(s) + ".up.w",
                       {static_cast<std::size_t>(channels), static_cast<std::size_t>(out), 2, 2},
                       true);
      up.b = store.add("unet.dec" + std::to_string(s) + ".up.b",
                       {static_cast<std::size_t>(out)}, true);
      fill_uniform_fan_in(rng, up.w, static_cast<std::size_t>(channels));
      // concat with the skip doubles the input channels of the double-conv
      up.block = make_block(store, "unet.dec" + std::to_string(s), out * 2, out, rng);
      decoder_.push_back(up);
      channels = out;
    }
    out_w_ = store.add("unet.out.w",
                       {static_cast<std::size_t>(cfg_.out_channels),
                        static_cast<std::size_t>(channels), 1, 1},
                       true);
    out_b_ = store.add("unet.out.b", {static_cast<std::size_t>(cfg_.out_channels)}, true);
    fill_uniform_fan_in(rng, out_w_, static_cast<std::size_t>(channels));
  }

  const UNetConfig& config() const { return cfg_; }

  /// x: B x in_channels x H x W with H and W divisible by 2^depth.
  ad::TensorPtr<S> forward(ad::Tape<S>& tape, const ad::TensorPtr<S>& x, ad::Mode mode,
                           S bn_momentum) const {
    if (x->rank() != 4 || x->shape[1] != static_cast<std::size_t>(cfg_.in_channels))
      throw Error(ErrorCode::ShapeMismatch, "unet: expected B x C_in x H x W input");
    const std::size_t div = static_cast<std::size_t>(cfg_.divisor());
    if (x->shape[2] % div != 0 || x->shape[3] % div != 0)
      throw Error(ErrorCode::IndivisibleSpatialDims,
                  "spatial dimensions must be divisible by " + std::to_string(div));

    std::vector<ad::TensorPtr<S>> skips;
    auto h = x;
    for (const auto& block : encoder_) {
      h = apply_block(tape, block, h, mode, bn_momentum);
      skips.push_back(h);
      h = ad::maxpool2x2(tape, h);
    }
    h = apply_block(tape, bottleneck_, h, mode, bn_momentum);
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      const auto& up = decoder_[i];
      h = ad::upconv2x2(tape, h, up.w, up.b);
      h = ad::concat(tape, h, skips[skips.size() - 1 - i], 1);
      h = apply_block(tape, up.block, h, mode, bn_momentum);
    }
    return ad::conv2d(tape, h, out_w_, out_b_);
  }

 private:
  struct Block {
    ad::TensorPtr<S> w0, b0, w1, b1;
    ad::TensorPtr<S> gamma0, beta0, mean0, var0;
    ad::TensorPtr<S> gamma1, beta1, mean1, var1;
    bool use_bn = false;
  };
  struct Up {
    ad::TensorPtr<S> w, b;
    Block block;
  };

  Block make_block(ParamStore<S>& store, const std::string& prefix, int in, int out,
                   Rng& rng) {
    Block blk;
    blk.use_bn = cfg_.batch_norm;
    const auto ci = static_cast<std::size_t>(in);
    const auto co = static_cast<std::size_t>(out);
    blk.w0 = store.add(prefix + ".conv0.w", {co, ci, 3, 3}, true);
    blk.b0 = store.add(prefix + ".conv0.b", {co}, true);
    fill_uniform_fan_in(rng, blk.w0, ci * 9);
    blk.w1 = store.add(prefix + ".conv1.w", {co, co, 3, 3}, true);
    blk.b1 = store.add(prefix + ".conv1.b", {co}, true);
    fill_uniform_fan_in(rng, blk.w1, co * 9);
    if (blk.use_bn) {
      blk.gamma0 = store.add(prefix + ".conv0.bn_gamma", {co}, true);
      blk.beta0 = store.add(prefix + ".conv0.bn_beta", {co}, true);
      blk.mean0 = store.add(prefix + ".conv0.bn_mean", {co}, false);
      blk.var0 = store.add(prefix + ".conv0.bn_var", {co}, false);
      blk.gamma1 = store.add(prefix + ".conv1.bn_gamma", {co}, true);
      blk.beta1 = store.add(prefix + ".conv1.bn_beta", {co}, true);
      blk.mean1 = store.add(prefix + ".conv1.bn_mean", {co}, false);
      blk.var1 = store.add(prefix + ".conv1.bn_var", {co}, false);
      fill_constant(blk.gamma0, S(1));
      fill_constant(blk.var0, S(1));
      fill_constant(blk.gamma1, S(1));
      fill_constant(blk.var1, S(1));
    }
    return blk;
  }

  ad::TensorPtr<S> apply_block(ad::Tape<S>& tape, const Block& blk,
                               const ad::TensorPtr<S>& x, ad::Mode mode,
                               S bn_momentum) const {
    auto h = ad::conv2d(tape, x, blk.w0, blk.b0);
    h = ad::relu(tape, h);
    if (blk.use_bn)
      h = ad::batchnorm(tape, h, blk.gamma0, blk.beta0, blk.mean0, blk.var0, bn_momentum, mode);
    h = ad::conv2d(tape, h, blk.w1, blk.b1);
    h = ad::relu(tape, h);
    if (blk.use_bn)
      h = ad::batchnorm(tape, h, blk.gamma1, blk.beta1, blk.mean1, blk.var1, bn_momentum, mode);
    return h;
  }

  UNetConfig cfg_;
  std::vector<Block> encoder_;
  Block bottleneck_;
  std::vector<Up> decoder_;
  ad::TensorPtr<S> out_w_, out_b_;
};

}  // namespace lidarseg

#endif  // LIDARSEG_UNET_HPP
