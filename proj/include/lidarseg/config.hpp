#ifndef LIDARSEG_CONFIG_HPP
#define LIDARSEG_CONFIG_HPP

#include <string>

#include "lidarseg/feature_extractor.hpp"
#include "lidarseg/loss.hpp"
#include "lidarseg/synthetic.hpp"
#include "lidarseg/trainer.hpp"
#include "lidarseg/unet.hpp"

namespace lidarseg {

/// Every tunable of the pipeline, loadable from a line-oriented
/// "key = value" file with dotted namespaces. Unknown keys are errors.
struct RunConfig {
  int grid_height = 64;
  int grid_width = 512;
  double azimuth_min_deg = -45.0;
  double azimuth_max_deg = 45.0;
  double elev_min_deg = -24.8;
  double elev_max_deg = 2.0;

  ExtractorConfig extractor;
  UNetConfig unet;
  LossConfig loss;
  TrainConfig train;

  uint64_t synth_seed = 1;
  int synth_cars = 2;
  int synth_pedestrians = 2;
  int synth_cyclists = 2;
  double synth_range_min = 6.0;
  double synth_range_max = 18.0;
  double synth_sensor_height = 1.7;
  double synth_max_range = 80.0;
  double synth_reflectance_jitter = 0.03;

  GridConfig grid() const {
    return GridConfig::frontal(grid_height, grid_width, azimuth_min_deg, azimuth_max_deg,
                               elev_min_deg, elev_max_deg);
  }

  SceneConfig scene() const {
    SceneConfig cfg;
    cfg.seed = synth_seed;
    cfg.cars = synth_cars;
    cfg.pedestrians = synth_pedestrians;
    cfg.cyclists = synth_cyclists;
    cfg.grid = grid();
    cfg.sensor_height = synth_sensor_height;
    cfg.range_min = synth_range_min;
    cfg.range_max = synth_range_max;
    cfg.max_range = synth_max_range;
    cfg.reflectance_jitter = synth_reflectance_jitter;
    return cfg;
  }
};

/// Applies one "key = value" assignment. Throws InvalidArgument on unknown
/// keys or malformed values.
void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// Reads a config file on top of `base`. Lines starting with '#' and blank
/// lines are ignored.
RunConfig load_config_file(const std::string& path, RunConfig base = {});

}  // namespace lidarseg

#endif  // LIDARSEG_CONFIG_HPP
