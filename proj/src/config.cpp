#include "lidarseg/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace lidarseg {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "bad integer for " + key + ": '" + value + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const uint64_t v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "bad integer for " + key + ": '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "bad number for " + key + ": '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw Error(ErrorCode::InvalidArgument, "bad boolean for " + key + ": '" + value + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_int(key, item));
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_double(key, item));
  }
  return out;
}

}  // namespace

void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "grid.height") cfg.grid_height = parse_int(key, value);
  else if (key == "grid.width") cfg.grid_width = parse_int(key, value);
  else if (key == "grid.azimuth_min_deg") cfg.azimuth_min_deg = parse_double(key, value);
  else if (key == "grid.azimuth_max_deg") cfg.azimuth_max_deg = parse_double(key, value);
  else if (key == "grid.elev_min_deg") cfg.elev_min_deg = parse_double(key, value);
  else if (key == "grid.elev_max_deg") cfg.elev_max_deg = parse_double(key, value);
  else if (key == "extractor.features") cfg.extractor.feature_count = parse_int(key, value);
  else if (key == "extractor.mlp1") cfg.extractor.mlp1_widths = parse_int_list(key, value);
  else if (key == "extractor.mlp2") cfg.extractor.mlp2_widths = parse_int_list(key, value);
  else if (key == "extractor.coords") {
    if (value == "relative") cfg.extractor.coord_mode = CoordMode::kRelative;
    else if (value == "absolute") cfg.extractor.coord_mode = CoordMode::kAbsolute;
    else throw Error(ErrorCode::InvalidArgument, "extractor.coords must be relative|absolute");
  } else if (key == "extractor.wrap_azimuth") cfg.extractor.wrap_azimuth = parse_bool(key, value);
  else if (key == "unet.depth") cfg.unet.depth = parse_int(key, value);
  else if (key == "unet.base_channels") cfg.unet.base_channels = parse_int(key, value);
  else if (key == "unet.batch_norm") cfg.unet.batch_norm = parse_bool(key, value);
  else if (key == "unet.classes") cfg.unet.out_channels = parse_int(key, value);
  else if (key == "loss.gamma") cfg.loss.gamma = parse_double(key, value);
  else if (key == "loss.use_focal") cfg.loss.use_focal = parse_bool(key, value);
  else if (key == "loss.border_amplitude") cfg.loss.border_amplitude = parse_double(key, value);
  else if (key == "loss.border_sigma") cfg.loss.border_sigma = parse_double(key, value);
  else if (key == "loss.class_weights") cfg.loss.class_weights = parse_double_list(key, value);
  else if (key == "train.learning_rate") cfg.train.learning_rate = parse_double(key, value);
  else if (key == "train.batch_size") cfg.train.batch_size = parse_int(key, value);
  else if (key == "train.epochs") cfg.train.epochs = parse_int(key, value);
  else if (key == "train.bn_momentum") cfg.train.bn_momentum = parse_double(key, value);
  else if (key == "train.seed") cfg.train.seed = parse_u64(key, value);
  else if (key == "train.checkpoint_interval") cfg.train.checkpoint_interval = parse_int(key, value);
  else if (key == "train.precision") cfg.train.precision = parse_int(key, value);
  else if (key == "train.max_steps") cfg.train.max_steps = parse_int(key, value);
  else if (key == "train.iou_interval") cfg.train.iou_interval = parse_int(key, value);
  else if (key == "train.target_mean_iou") cfg.train.target_mean_iou = parse_double(key, value);
  else if (key == "synth.seed") cfg.synth_seed = parse_u64(key, value);
  else if (key == "synth.cars") cfg.synth_cars = parse_int(key, value);
  else if (key == "synth.pedestrians") cfg.synth_pedestrians = parse_int(key, value);
  else if (key == "synth.cyclists") cfg.synth_cyclists = parse_int(key, value);
  else if (key == "synth.range_min") cfg.synth_range_min = parse_double(key, value);
  else if (key == "synth.range_max") cfg.synth_range_max = parse_double(key, value);
  else if (key == "synth.sensor_height") cfg.synth_sensor_height = parse_double(key, value);
  else if (key == "synth.max_range") cfg.synth_max_range = parse_double(key, value);
  else if (key == "synth.reflectance_jitter")
    cfg.synth_reflectance_jitter = parse_double(key, value);
  else
    throw Error(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
}

RunConfig load_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open config " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    const std::size_t eq = text.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::InvalidArgument,
                  path + ":" + std::to_string(line_no) + ": expected key = value");
    apply_config_value(base, trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
  }
  return base;
}

}  // namespace lidarseg
