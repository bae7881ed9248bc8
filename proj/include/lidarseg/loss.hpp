#ifndef LIDARSEG_LOSS_HPP
#define LIDARSEG_LOSS_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lidarseg/point_cloud.hpp"

namespace lidarseg {

struct LossConfig {
  double gamma = 2.0;             // focusing parameter
  bool use_focal = true;          // false trains with plain weighted cross-entropy
  double border_amplitude = 10.0; // w0
  double border_sigma = 5.0;      // falloff in pixels
  std::vector<double> class_weights;  // empty: inverse frequency over the training set

  double effective_gamma() const { return use_focal ? gamma : 0.0; }

  void validate() const;
};

/// Per-pixel loss weights: class weight plus a Gaussian bump near label
/// borders. w(x) = class_weights[l(x)] + w0 * exp(-dist(x)^2 / (2 sigma^2)),
/// with dist(x) the Euclidean distance to the nearest valid pixel holding a
/// different label. Invalid pixels get weight 0.
std::vector<float> border_weight_map(const std::vector<int32_t>& labels,
                                     const std::vector<uint8_t>& mask, int height,
                                     int width, const LossConfig& cfg);

/// Exact squared Euclidean distance transform of a binary seed grid;
/// non-seed pixels receive the squared distance to the nearest seed
/// (infinity when there is none).
std::vector<double> squared_distance_transform(const std::vector<uint8_t>& seeds,
                                               int height, int width);

struct IoUReport {
  std::array<double, kNumClasses> iou{};
  std::array<bool, kNumClasses> present{};  // union non-empty over valid pixels
  double average = 0.0;  // mean over the present object classes (background excluded)
  std::array<std::array<uint64_t, kNumClasses>, kNumClasses> confusion{};  // [gt][pred]

  /// Classes as columns, one score row; mirrors the usual comparison tables.
  std::string table() const;
};

/// Per-class intersection-over-union over valid pixels.
IoUReport iou(const std::vector<int32_t>& predicted, const std::vector<int32_t>& truth,
              const std::vector<uint8_t>& mask);

/// Builds a report from accumulated confusion counts.
IoUReport report_from_confusion(
    const std::array<std::array<uint64_t, kNumClasses>, kNumClasses>& confusion);

}  // namespace lidarseg

#endif  // LIDARSEG_LOSS_HPP
