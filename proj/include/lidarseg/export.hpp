#ifndef LIDARSEG_EXPORT_HPP
#define LIDARSEG_EXPORT_HPP

#include <string>
#include <vector>

#include "lidarseg/range_image.hpp"

namespace lidarseg {

/// Range-image view: depth as grayscale underlay (255 * (1 - d/d_max),
/// clamped), object classes painted in their display colors, invalid pixels
/// black. Rows are flipped so higher elevation appears at the top. Labels may
/// be empty (depth only); label -1 means "none".
void export_range_png(const std::string& path, const RangeImage& img,
                      const std::vector<int32_t>& labels);

/// Colored point cloud of the valid pixels. Labels as above.
void export_ply(const std::string& path, const RangeImage& img,
                const std::vector<int32_t>& labels);

}  // namespace lidarseg

#endif  // LIDARSEG_EXPORT_HPP
