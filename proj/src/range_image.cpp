#include "lidarseg/range_image.hpp"

#include <fstream>
#include <sstream>

namespace lidarseg {

// Format: textual manifest terminated by a "data" line, then raw little-endian
// float32 planes in manifest order followed by the mask as one byte per pixel.
void RangeImage::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path + " for writing");
  out << "RIMG 1\n";
  out << "height " << height_ << "\n";
  out << "width " << width_ << "\n";
  out << "channels";
  for (const auto& n : names_) out << " " << n;
  out << "\n";
  out << "data\n";
  for (const auto& plane : planes_) {
    out.write(reinterpret_cast<const char*>(plane.data()),
              static_cast<std::streamsize>(plane.size() * sizeof(float)));
  }
  out.write(reinterpret_cast<const char*>(mask_.data()),
            static_cast<std::streamsize>(mask_.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path);
}

RangeImage RangeImage::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "RIMG 1")
    throw Error(ErrorCode::BadMagic, path + " is not a range-image file");
  int height = -1, width = -1;
  std::vector<std::string> names;
  while (std::getline(in, line)) {
    if (line == "data") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "height") ls >> height;
    else if (key == "width") ls >> width;
    else if (key == "channels") {
      std::string n;
      while (ls >> n) names.push_back(n);
    } else {
      throw Error(ErrorCode::BadMagic, "unknown manifest key '" + key + "' in " + path);
    }
  }
  if (height < 1 || width < 1)
    throw Error(ErrorCode::UnsupportedDtypeOrShape, "bad dimensions in " + path);
  RangeImage img(height, width);
  for (const auto& n : names) {
    auto& plane = img.add_channel(n);
    in.read(reinterpret_cast<char*>(plane.data()),
            static_cast<std::streamsize>(plane.size() * sizeof(float)));
  }
  in.read(reinterpret_cast<char*>(img.mask().data()),
          static_cast<std::streamsize>(img.mask().size()));
  if (!in || in.gcount() != static_cast<std::streamsize>(img.mask().size()))
    throw Error(ErrorCode::UnsupportedDtypeOrShape, "truncated payload in " + path);
  return img;
}

}  // namespace lidarseg
