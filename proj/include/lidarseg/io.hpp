#ifndef LIDARSEG_IO_HPP
#define LIDARSEG_IO_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "lidarseg/point_cloud.hpp"
#include "lidarseg/range_image.hpp"

namespace lidarseg {

struct ParseStats {
  std::size_t reflectance_clamped = 0;  // values outside [0,1] pulled back
  std::size_t labels_zeroed = 0;        // labels at invalid pixels forced to 0
};

/// Raw little-endian float32 quadruples (x, y, z, reflectance), 16 bytes per
/// point, no header. Reflectance outside [0,1] is clamped and counted.
PointCloud read_kitti_bin(const std::string& path, ParseStats* stats = nullptr);
void write_kitti_bin(const std::string& path, const PointCloud& cloud);

/// Labeled sample: '.npy' v1.0, float32, shape (H, W, 6) with channel order
/// x, y, z, intensity, depth, label. Pixels with depth <= 0 are invalid.
LabeledSample read_labeled_sample(const std::string& path, ParseStats* stats = nullptr);
void write_labeled_sample(const std::string& path, const LabeledSample& sample);

/// ASCII PLY with per-vertex color from the class color map. labels[i] < 0
/// renders black.
void write_colored_ply(const std::string& path, const PointCloud& cloud,
                       const std::vector<int32_t>& labels);

struct Rgb {
  uint8_t r = 0, g = 0, b = 0;
};

/// Display colors: blue cars, red cyclists, lime pedestrians, gray background.
Rgb class_color(int class_id);

}  // namespace lidarseg

#endif  // LIDARSEG_IO_HPP
