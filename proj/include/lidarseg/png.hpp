#ifndef LIDARSEG_PNG_HPP
#define LIDARSEG_PNG_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace lidarseg {

/// 8-bit RGB PNG, pixels in row-major order (3 bytes per pixel).
void write_png_rgb(const std::string& path, int width, int height,
                   const std::vector<uint8_t>& pixels);

}  // namespace lidarseg

#endif  // LIDARSEG_PNG_HPP
