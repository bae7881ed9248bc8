#include "lidarseg/neighborhood.hpp"

namespace lidarseg {

NeighborField build_neighbor_field(const RangeImage& img, CoordMode mode,
                                   bool wrap_azimuth) {
  const auto& cx = img.channel("x");
  const auto& cy = img.channel("y");
  const auto& cz = img.channel("z");
  const auto& mask = img.mask();
  const int height = img.height();
  const int width = img.width();

  NeighborField nf;
  nf.height = height;
  nf.width = width;
  nf.mode = mode;
  nf.values.assign(static_cast<std::size_t>(height) * width * 8 * 3, 0.0f);

  for (int row = 0; row < height; ++row) {
    for (int col = 0; col < width; ++col) {
      const std::size_t center = img.at(row, col);
      if (!mask[center]) continue;  // all slots stay zero
      for (int slot = 0; slot < 8; ++slot) {
        const int nr = row + kNeighborOffsets[slot][0];
        int nc = col + kNeighborOffsets[slot][1];
        if (nr < 0 || nr >= height) continue;
        if (nc < 0 || nc >= width) {
          if (!wrap_azimuth) continue;
          nc = (nc + width) % width;
        }
        const std::size_t nb = img.at(nr, nc);
        if (!mask[nb]) continue;
        float* out = &nf.values[nf.slot_offset(row, col, slot)];
        if (mode == CoordMode::kRelative) {
          out[0] = cx[nb] - cx[center];
          out[1] = cy[nb] - cy[center];
          out[2] = cz[nb] - cz[center];
        } else {
          out[0] = cx[nb];
          out[1] = cy[nb];
          out[2] = cz[nb];
        }
      }
    }
  }
  return nf;
}

}  // namespace lidarseg
