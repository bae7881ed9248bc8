#include "lidarseg/npy.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "lidarseg/error.hpp"

namespace lidarseg {

namespace {

constexpr char kMagic[6] = {'\x93', 'N', 'U', 'M', 'P', 'Y'};

struct Header {
  std::string descr;
  bool fortran_order = false;
  std::vector<std::size_t> shape;
};

// The header is a Python dict literal, e.g.
//   {'descr': '<f4', 'fortran_order': False, 'shape': (64, 512, 6), }
Header parse_header(const std::string& text, const std::string& path) {
  Header h;
  auto find_value = [&](const std::string& key) -> std::string {
    auto pos = text.find("'" + key + "'");
    if (pos == std::string::npos)
      throw Error(ErrorCode::UnsupportedDtypeOrShape, "missing '" + key + "' in " + path);
    pos = text.find(':', pos);
    if (pos == std::string::npos)
      throw Error(ErrorCode::UnsupportedDtypeOrShape, "malformed header in " + path);
    ++pos;
    while (pos < text.size() && text[pos] == ' ') ++pos;
    std::size_t end = pos;
    if (text[pos] == '\'') {
      end = text.find('\'', pos + 1);
      if (end == std::string::npos)
        throw Error(ErrorCode::UnsupportedDtypeOrShape, "malformed header in " + path);
      return text.substr(pos + 1, end - pos - 1);
    }
    if (text[pos] == '(') {
      end = text.find(')', pos);
      if (end == std::string::npos)
        throw Error(ErrorCode::UnsupportedDtypeOrShape, "malformed header in " + path);
      return text.substr(pos, end - pos + 1);
    }
    while (end < text.size() && text[end] != ',' && text[end] != '}') ++end;
    return text.substr(pos, end - pos);
  };

  h.descr = find_value("descr");
  std::string forder = find_value("fortran_order");
  if (forder.rfind("True", 0) == 0) h.fortran_order = true;
  else if (forder.rfind("False", 0) == 0) h.fortran_order = false;
  else throw Error(ErrorCode::UnsupportedDtypeOrShape, "bad fortran_order in " + path);

  std::string shape = find_value("shape");
  std::size_t i = 1;  // skip '('
  while (i < shape.size()) {
    while (i < shape.size() && (shape[i] == ' ' || shape[i] == ',')) ++i;
    if (i >= shape.size() || shape[i] == ')') break;
    std::size_t j = i;
    while (j < shape.size() && shape[j] >= '0' && shape[j] <= '9') ++j;
    if (j == i)
      throw Error(ErrorCode::UnsupportedDtypeOrShape, "bad shape tuple in " + path);
    h.shape.push_back(static_cast<std::size_t>(std::stoull(shape.substr(i, j - i))));
    i = j;
  }
  return h;
}

Header read_header(std::ifstream& in, const std::string& path) {
  char magic[6];
  in.read(magic, 6);
  if (in.gcount() != 6 || std::memcmp(magic, kMagic, 6) != 0)
    throw Error(ErrorCode::BadMagic, path + " is not an npy file");
  uint8_t version[2];
  in.read(reinterpret_cast<char*>(version), 2);
  if (!in || version[0] != 1 || version[1] != 0)
    throw Error(ErrorCode::BadMagic, "unsupported npy version in " + path);
  uint8_t len_bytes[2];
  in.read(reinterpret_cast<char*>(len_bytes), 2);
  if (!in) throw Error(ErrorCode::BadMagic, "truncated npy header in " + path);
  const std::size_t header_len = len_bytes[0] | (std::size_t(len_bytes[1]) << 8);
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw Error(ErrorCode::BadMagic, "truncated npy header in " + path);
  return parse_header(text, path);
}

template <typename T>
std::vector<T> read_payload(std::ifstream& in, const Header& h, const std::string& path) {
  std::size_t count = 1;
  for (std::size_t d : h.shape) count *= d;
  std::vector<T> data(count);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(count * sizeof(T)));
  if (!in || in.gcount() != static_cast<std::streamsize>(count * sizeof(T)))
    throw Error(ErrorCode::UnsupportedDtypeOrShape, "truncated npy payload in " + path);
  return data;
}

void write_npy(const std::string& path, const std::string& descr,
               const std::vector<std::size_t>& shape, const void* data,
               std::size_t byte_count) {
  std::string dict = "{'descr': '" + descr + "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dict += std::to_string(shape[i]);
    if (shape.size() == 1 || i + 1 < shape.size()) dict += ",";
    if (i + 1 < shape.size()) dict += " ";
  }
  dict += "), }";
  // Pad with spaces so the payload starts on a 64-byte boundary.
  std::size_t unpadded = 10 + dict.size() + 1;
  std::size_t padded = (unpadded + 63) / 64 * 64;
  dict.append(padded - unpadded, ' ');
  dict += '\n';

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path + " for writing");
  out.write(kMagic, 6);
  const uint8_t version[2] = {1, 0};
  out.write(reinterpret_cast<const char*>(version), 2);
  const uint16_t len = static_cast<uint16_t>(dict.size());
  const uint8_t len_bytes[2] = {uint8_t(len & 0xff), uint8_t(len >> 8)};
  out.write(reinterpret_cast<const char*>(len_bytes), 2);
  out.write(dict.data(), static_cast<std::streamsize>(dict.size()));
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(byte_count));
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path);
}

}  // namespace

NpyArray read_npy_f32(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path);
  Header h = read_header(in, path);
  if (h.descr != "<f4")
    throw Error(ErrorCode::UnsupportedDtypeOrShape,
                "expected dtype <f4, got '" + h.descr + "' in " + path);
  if (h.fortran_order)
    throw Error(ErrorCode::UnsupportedDtypeOrShape, "fortran order unsupported: " + path);
  NpyArray a;
  a.shape = h.shape;
  a.data = read_payload<float>(in, h, path);
  return a;
}

void write_npy_f32(const std::string& path, const NpyArray& array) {
  write_npy(path, "<f4", array.shape, array.data.data(), array.data.size() * sizeof(float));
}

NpyArrayI32 read_npy_i32(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path);
  Header h = read_header(in, path);
  if (h.descr != "<i4")
    throw Error(ErrorCode::UnsupportedDtypeOrShape,
                "expected dtype <i4, got '" + h.descr + "' in " + path);
  if (h.fortran_order)
    throw Error(ErrorCode::UnsupportedDtypeOrShape, "fortran order unsupported: " + path);
  NpyArrayI32 a;
  a.shape = h.shape;
  a.data = read_payload<int32_t>(in, h, path);
  return a;
}

void write_npy_i32(const std::string& path, const NpyArrayI32& array) {
  write_npy(path, "<i4", array.shape, array.data.data(), array.data.size() * sizeof(int32_t));
}

}  // namespace lidarseg
