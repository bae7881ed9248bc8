#ifndef LIDARSEG_RANGE_IMAGE_HPP
#define LIDARSEG_RANGE_IMAGE_HPP

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "lidarseg/error.hpp"

namespace lidarseg {

constexpr int32_t kNoPoint = -1;

/// 2D grid over the sensor's sampling pattern. Each valid pixel carries the
/// channels of one measured point; empty pixels (no echo) have mask 0 and
/// all-zero channels.
class RangeImage {
 public:
  RangeImage() = default;
  RangeImage(int height, int width) : height_(height), width_(width) {
    mask_.assign(pixel_count(), 0);
    point_index_.assign(pixel_count(), kNoPoint);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
  }

  bool has_channel(const std::string& name) const {
    return find_channel(name) >= 0;
  }

  /// The returned reference stays valid while the image lives (planes are
  /// kept in a deque).
  std::vector<float>& add_channel(const std::string& name) {
    int idx = find_channel(name);
    if (idx >= 0) return planes_[static_cast<std::size_t>(idx)];
    names_.push_back(name);
    planes_.emplace_back(pixel_count(), 0.0f);
    return planes_.back();
  }

  const std::vector<float>& channel(const std::string& name) const {
    int idx = find_channel(name);
    if (idx < 0) throw Error(ErrorCode::MissingChannel, "no channel '" + name + "'");
    return planes_[static_cast<std::size_t>(idx)];
  }
  std::vector<float>& channel(const std::string& name) {
    int idx = find_channel(name);
    if (idx < 0) throw Error(ErrorCode::MissingChannel, "no channel '" + name + "'");
    return planes_[static_cast<std::size_t>(idx)];
  }

  const std::vector<std::string>& channel_names() const { return names_; }

  std::vector<uint8_t>& mask() { return mask_; }
  const std::vector<uint8_t>& mask() const { return mask_; }

  std::vector<int32_t>& point_index() { return point_index_; }
  const std::vector<int32_t>& point_index() const { return point_index_; }

  std::size_t at(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }

  /// Flat little-endian float32 planes behind a small textual manifest.
  void save(const std::string& path) const;
  static RangeImage load(const std::string& path);

 private:
  int find_channel(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == name) return static_cast<int>(i);
    }
    return -1;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::string> names_;
  std::deque<std::vector<float>> planes_;
  std::vector<uint8_t> mask_;
  std::vector<int32_t> point_index_;
};

/// Range-image plus its per-pixel ground-truth class map.
struct LabeledSample {
  RangeImage image;
  std::vector<int32_t> labels;  // H*W, values in [0, kNumClasses)
};

}  // namespace lidarseg

#endif  // LIDARSEG_RANGE_IMAGE_HPP
