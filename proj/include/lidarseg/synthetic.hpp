#ifndef LIDARSEG_SYNTHETIC_HPP
#define LIDARSEG_SYNTHETIC_HPP

#include <cstdint>
#include <vector>

#include "lidarseg/grid.hpp"
#include "lidarseg/point_cloud.hpp"
#include "lidarseg/range_image.hpp"

namespace lidarseg {

/// Procedural 64-beam scene: a ground plane plus boxes (cars, cyclists) and
/// vertical cylinders (pedestrians) placed in the sensor's field of view.
/// One ray is cast per grid cell through its center; first hit wins. Each
/// class carries a distinct reflectance constant plus jitter.
struct SceneConfig {
  uint64_t seed = 1;
  int cars = 2;
  int pedestrians = 2;
  int cyclists = 2;
  GridConfig grid = GridConfig::frontal();
  double sensor_height = 1.7;   // sensor origin above the ground plane
  double range_min = 6.0;       // object placement distances, meters
  double range_max = 18.0;
  double max_range = 80.0;      // rays travelling farther produce no echo
  double reflectance_jitter = 0.03;
};

struct SyntheticScene {
  PointCloud cloud;
  std::vector<int32_t> point_labels;
  std::vector<int32_t> rows;  // generating grid cell of each point
  std::vector<int32_t> cols;
  LabeledSample sample;       // the same scene as a labeled range-image
};

SyntheticScene generate_scene(const SceneConfig& cfg);

}  // namespace lidarseg

#endif  // LIDARSEG_SYNTHETIC_HPP
