#ifndef LIDARSEG_NEIGHBORHOOD_HPP
#define LIDARSEG_NEIGHBORHOOD_HPP

#include <array>
#include <vector>

#include "lidarseg/range_image.hpp"

namespace lidarseg {

enum class CoordMode {
  kRelative,  // neighbor minus center
  kAbsolute,  // raw neighbor coordinates (ablation)
};

/// Slot order over the 3x3 ring, row-major, center excluded:
/// NW, N, NE, W, E, SW, S, SE. Offsets are (row, col).
constexpr std::array<std::array<int, 2>, 8> kNeighborOffsets = {{
    {{-1, -1}}, {{-1, 0}}, {{-1, 1}}, {{0, -1}}, {{0, 1}}, {{1, -1}}, {{1, 0}}, {{1, 1}},
}};

/// H x W x 8 x 3 coordinates of the 8-connected neighborhood of every pixel.
/// A slot is exactly (0,0,0) whenever the center pixel or the neighbor pixel
/// is invalid or off the image.
struct NeighborField {
  int height = 0;
  int width = 0;
  CoordMode mode = CoordMode::kRelative;
  std::vector<float> values;  // height * width * 8 * 3, row-major

  std::size_t slot_offset(int row, int col, int slot) const {
    return ((static_cast<std::size_t>(row) * width + col) * 8 + slot) * 3;
  }
};

/// wrap_azimuth joins the first and last columns, for full-revolution scans.
NeighborField build_neighbor_field(const RangeImage& img, CoordMode mode,
                                   bool wrap_azimuth = false);

}  // namespace lidarseg

#endif  // LIDARSEG_NEIGHBORHOOD_HPP
