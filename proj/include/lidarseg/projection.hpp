#ifndef LIDARSEG_PROJECTION_HPP
#define LIDARSEG_PROJECTION_HPP

#include <cstdint>

#include "lidarseg/grid.hpp"
#include "lidarseg/point_cloud.hpp"
#include "lidarseg/range_image.hpp"

namespace lidarseg {

struct ProjectionStats {
  std::size_t valid = 0;               // pixels that ended up carrying a point
  std::size_t dropped_out_of_view = 0; // outside the grid (or zero-norm points)
  std::size_t dropped_by_collision = 0;

  std::size_t total() const { return valid + dropped_out_of_view + dropped_by_collision; }
};

struct ProjectionResult {
  RangeImage image;
  ProjectionStats stats;
};

/// Bins every point of the cloud into the grid. Collisions keep the nearer
/// point (smaller depth); the result is independent of input order.
/// Channels produced: x, y, z, reflectance, depth.
ProjectionResult project(const PointCloud& cloud, const GridConfig& cfg);

/// Points at valid pixels in row-major pixel order. Requires the x, y, z and
/// reflectance channels.
PointCloud unproject(const RangeImage& img);

}  // namespace lidarseg

#endif  // LIDARSEG_PROJECTION_HPP
