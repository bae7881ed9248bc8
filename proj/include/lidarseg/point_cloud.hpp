#ifndef LIDARSEG_POINT_CLOUD_HPP
#define LIDARSEG_POINT_CLOUD_HPP

#include <cstddef>
#include <cstdint>
#include <vector>

namespace lidarseg {

// Segmentation classes. Background is an explicit class; averaged scores
// exclude it.
constexpr int kNumClasses = 4;
constexpr int kBackground = 0;
constexpr int kCar = 1;
constexpr int kPedestrian = 2;
constexpr int kCyclist = 3;

const char* class_name(int class_id);

struct Point3 {
  float x = 0.0f;
  float y = 0.0f;
  float z = 0.0f;
};

inline Point3 operator-(const Point3& a, const Point3& b) {
  return {a.x - b.x, a.y - b.y, a.z - b.z};
}
inline Point3 operator+(const Point3& a, const Point3& b) {
  return {a.x + b.x, a.y + b.y, a.z + b.z};
}

/// Unordered LiDAR scan: Cartesian points plus per-point reflectance.
struct PointCloud {
  std::vector<Point3> points;
  std::vector<float> reflectance;  // nominally in [0,1]

  std::size_t count() const { return points.size(); }
};

inline const char* class_name(int class_id) {
  switch (class_id) {
    case kBackground: return "background";
    case kCar: return "car";
    case kPedestrian: return "pedestrian";
    case kCyclist: return "cyclist";
  }
  return "unknown";
}

}  // namespace lidarseg

#endif  // LIDARSEG_POINT_CLOUD_HPP
