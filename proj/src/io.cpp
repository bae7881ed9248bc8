#include "lidarseg/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "lidarseg/error.hpp"
#include "lidarseg/npy.hpp"

namespace lidarseg {

PointCloud read_kitti_bin(const std::string& path, ParseStats* stats) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path);
  const std::streamsize size = in.tellg();
  if (size % 16 != 0)
    throw Error(ErrorCode::SizeNotMultipleOf16,
                path + " has " + std::to_string(size) + " bytes");
  in.seekg(0);
  const std::size_t count = static_cast<std::size_t>(size) / 16;
  std::vector<float> raw(count * 4);
  in.read(reinterpret_cast<char*>(raw.data()), size);
  if (!in) throw Error(ErrorCode::IoFailure, "read failed: " + path);

  PointCloud cloud;
  cloud.points.resize(count);
  cloud.reflectance.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const float x = raw[i * 4 + 0], y = raw[i * 4 + 1];
    const float z = raw[i * 4 + 2];
    float r = raw[i * 4 + 3];
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z) || !std::isfinite(r))
      throw Error(ErrorCode::NonFiniteValue, path + " record " + std::to_string(i));
    if (r < 0.0f || r > 1.0f) {
      r = r < 0.0f ? 0.0f : 1.0f;
      if (stats) ++stats->reflectance_clamped;
    }
    cloud.points[i] = {x, y, z};
    cloud.reflectance[i] = r;
  }
  return cloud;
}

void write_kitti_bin(const std::string& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path + " for writing");
  for (std::size_t i = 0; i < cloud.count(); ++i) {
    const float rec[4] = {cloud.points[i].x, cloud.points[i].y, cloud.points[i].z,
                          cloud.reflectance[i]};
    out.write(reinterpret_cast<const char*>(rec), 16);
  }
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path);
}

LabeledSample read_labeled_sample(const std::string& path, ParseStats* stats) {
  NpyArray arr = read_npy_f32(path);
  if (arr.shape.size() != 3 || arr.shape[2] != 6 || arr.shape[0] < 1 || arr.shape[1] < 1)
    throw Error(ErrorCode::UnsupportedDtypeOrShape,
                path + " must have shape (H, W, 6)");
  const int height = static_cast<int>(arr.shape[0]);
  const int width = static_cast<int>(arr.shape[1]);

  LabeledSample sample;
  sample.image = RangeImage(height, width);
  auto& img = sample.image;
  auto& cx = img.add_channel("x");
  auto& cy = img.add_channel("y");
  auto& cz = img.add_channel("z");
  auto& cr = img.add_channel("reflectance");
  auto& cd = img.add_channel("depth");
  sample.labels.assign(img.pixel_count(), 0);

  for (std::size_t px = 0; px < img.pixel_count(); ++px) {
    const float* rec = &arr.data[px * 6];
    for (int c = 0; c < 6; ++c) {
      if (!std::isfinite(rec[c]))
        throw Error(ErrorCode::NonFiniteValue, path + " pixel " + std::to_string(px));
    }
    const float depth = rec[4];
    if (depth > 0.0f) {
      img.mask()[px] = 1;
      cx[px] = rec[0];
      cy[px] = rec[1];
      cz[px] = rec[2];
      float refl = rec[3];
      if (refl < 0.0f || refl > 1.0f) {
        refl = refl < 0.0f ? 0.0f : 1.0f;
        if (stats) ++stats->reflectance_clamped;
      }
      cr[px] = refl;
      cd[px] = depth;

      const float label_value = rec[5];
      const long rounded = std::lround(label_value);
      if (std::fabs(label_value - static_cast<float>(rounded)) > 0.01f ||
          rounded < 0 || rounded >= kNumClasses)
        throw Error(ErrorCode::UnsupportedDtypeOrShape,
                    path + " has label " + std::to_string(label_value) + " at pixel " +
                        std::to_string(px));
      sample.labels[px] = static_cast<int32_t>(rounded);
    } else {
      // Invalid pixel: channels stay zero, label forced to background.
      const float label_value = rec[5];
      if (label_value != 0.0f && stats) ++stats->labels_zeroed;
    }
  }
  return sample;
}

void write_labeled_sample(const std::string& path, const LabeledSample& sample) {
  const auto& img = sample.image;
  if (sample.labels.size() != img.pixel_count())
    throw Error(ErrorCode::LengthMismatch, "labels do not match image size");
  const auto& cx = img.channel("x");
  const auto& cy = img.channel("y");
  const auto& cz = img.channel("z");
  const auto& cr = img.channel("reflectance");
  const auto& cd = img.channel("depth");
  NpyArray arr;
  arr.shape = {static_cast<std::size_t>(img.height()), static_cast<std::size_t>(img.width()), 6};
  arr.data.resize(img.pixel_count() * 6);
  for (std::size_t px = 0; px < img.pixel_count(); ++px) {
    float* rec = &arr.data[px * 6];
    rec[0] = cx[px];
    rec[1] = cy[px];
    rec[2] = cz[px];
    rec[3] = cr[px];
    rec[4] = cd[px];
    rec[5] = img.mask()[px] ? static_cast<float>(sample.labels[px]) : 0.0f;
  }
  write_npy_f32(path, arr);
}

Rgb class_color(int class_id) {
  switch (class_id) {
    case kCar: return {0, 0, 255};
    case kPedestrian: return {0, 255, 0};
    case kCyclist: return {255, 0, 0};
    case kBackground: return {128, 128, 128};
  }
  return {0, 0, 0};  // invalid / none
}

void write_colored_ply(const std::string& path, const PointCloud& cloud,
                       const std::vector<int32_t>& labels) {
  if (labels.size() != cloud.count())
    throw Error(ErrorCode::LengthMismatch,
                std::to_string(labels.size()) + " labels for " +
                    std::to_string(cloud.count()) + " points");
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path + " for writing");
  out << "ply\nformat ascii 1.0\n";
  out << "element vertex " << cloud.count() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "end_header\n";
  char line[160];
  for (std::size_t i = 0; i < cloud.count(); ++i) {
    const Rgb c = class_color(labels[i]);
    // %.9g round-trips float32 exactly.
    std::snprintf(line, sizeof(line), "%.9g %.9g %.9g %d %d %d\n", cloud.points[i].x,
                  cloud.points[i].y, cloud.points[i].z, c.r, c.g, c.b);
    out << line;
  }
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path);
}

}  // namespace lidarseg
