#include "lidarseg/export.hpp"

#include <algorithm>

#include "lidarseg/error.hpp"
#include "lidarseg/io.hpp"
#include "lidarseg/png.hpp"
#include "lidarseg/projection.hpp"

namespace lidarseg {

void export_range_png(const std::string& path, const RangeImage& img,
                      const std::vector<int32_t>& labels) {
  if (!labels.empty() && labels.size() != img.pixel_count())
    throw Error(ErrorCode::LengthMismatch, "labels do not match image size");
  const auto& depth = img.channel("depth");
  const auto& mask = img.mask();
  float d_max = 0.0f;
  for (std::size_t i = 0; i < depth.size(); ++i)
    if (mask[i]) d_max = std::max(d_max, depth[i]);

  const int height = img.height(), width = img.width();
  std::vector<uint8_t> pixels(static_cast<std::size_t>(height) * width * 3, 0);
  for (int row = 0; row < height; ++row) {
    // Row 0 holds the lowest elevation; draw it at the bottom.
    const int out_row = height - 1 - row;
    for (int col = 0; col < width; ++col) {
      const std::size_t px = img.at(row, col);
      uint8_t* rgb = &pixels[(static_cast<std::size_t>(out_row) * width + col) * 3];
      if (!mask[px]) continue;  // invalid stays black
      const int32_t label = labels.empty() ? kBackground : labels[px];
      if (label > 0) {
        const Rgb c = class_color(label);
        rgb[0] = c.r;
        rgb[1] = c.g;
        rgb[2] = c.b;
      } else {
        float shade = d_max > 0.0f ? 255.0f * (1.0f - depth[px] / d_max) : 255.0f;
        shade = std::clamp(shade, 0.0f, 255.0f);
        const auto gray = static_cast<uint8_t>(shade);
        rgb[0] = gray;
        rgb[1] = gray;
        rgb[2] = gray;
      }
    }
  }
  write_png_rgb(path, width, height, pixels);
}

void export_ply(const std::string& path, const RangeImage& img,
                const std::vector<int32_t>& labels) {
  if (!labels.empty() && labels.size() != img.pixel_count())
    throw Error(ErrorCode::LengthMismatch, "labels do not match image size");
  const PointCloud cloud = unproject(img);
  std::vector<int32_t> point_labels;
  point_labels.reserve(cloud.count());
  const auto& mask = img.mask();
  for (std::size_t px = 0; px < img.pixel_count(); ++px) {
    if (!mask[px]) continue;
    point_labels.push_back(labels.empty() ? kBackground : labels[px]);
  }
  write_colored_ply(path, cloud, point_labels);
}

}  // namespace lidarseg
