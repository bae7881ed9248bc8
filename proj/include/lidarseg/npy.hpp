#ifndef LIDARSEG_NPY_HPP
#define LIDARSEG_NPY_HPP

#include <cstddef>
#include <string>
#include <vector>

namespace lidarseg {

/// Minimal reader/writer for '.npy' version 1.0 containers holding
/// little-endian float32 arrays in C order.
struct NpyArray {
  std::vector<std::size_t> shape;
  std::vector<float> data;
};

NpyArray read_npy_f32(const std::string& path);
void write_npy_f32(const std::string& path, const NpyArray& array);

/// Same container with dtype '<i4'.
struct NpyArrayI32 {
  std::vector<std::size_t> shape;
  std::vector<int32_t> data;
};

NpyArrayI32 read_npy_i32(const std::string& path);
void write_npy_i32(const std::string& path, const NpyArrayI32& array);

}  // namespace lidarseg

#endif  // LIDARSEG_NPY_HPP
