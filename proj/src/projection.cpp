#include "lidarseg/projection.hpp"

#include <cmath>
#include <tuple>

namespace lidarseg {

namespace {
// Order-free winner selection for pixels hit by more than one point: nearest
// depth wins; exact depth ties fall back to lexicographic point content so the
// result never depends on input order.
bool beats(float depth_a, const Point3& a, float refl_a,
           float depth_b, const Point3& b, float refl_b) {
  if (depth_a != depth_b) return depth_a < depth_b;
  return std::make_tuple(a.x, a.y, a.z, refl_a) <
         std::make_tuple(b.x, b.y, b.z, refl_b);
}
}  // namespace

ProjectionResult project(const PointCloud& cloud, const GridConfig& cfg) {
  cfg.validate();
  ProjectionResult res;
  res.image = RangeImage(cfg.height, cfg.width);
  auto& img = res.image;
  auto& cx = img.add_channel("x");
  auto& cy = img.add_channel("y");
  auto& cz = img.add_channel("z");
  auto& cr = img.add_channel("reflectance");
  auto& cd = img.add_channel("depth");
  auto& mask = img.mask();
  auto& pidx = img.point_index();

  for (std::size_t i = 0; i < cloud.count(); ++i) {
    const Point3& p = cloud.points[i];
    const double norm2 = double(p.x) * p.x + double(p.y) * p.y + double(p.z) * p.z;
    if (norm2 == 0.0) {
      // Zero-norm returns have no direction; counted with out-of-view drops.
      ++res.stats.dropped_out_of_view;
      continue;
    }
    const SphericalCoords s = spherical_coords(p);
    const long col = static_cast<long>(std::floor((s.theta - cfg.theta_origin) / cfg.delta_theta));
    const long row = static_cast<long>(std::floor((s.phi - cfg.phi_origin) / cfg.delta_phi));
    if (row < 0 || row >= cfg.height || col < 0 || col >= cfg.width) {
      ++res.stats.dropped_out_of_view;
      continue;
    }
    const std::size_t px = img.at(static_cast<int>(row), static_cast<int>(col));
    const float depth = static_cast<float>(s.depth);
    if (mask[px]) {
      // Collision: the nearer surface occludes.
      ++res.stats.dropped_by_collision;
      if (beats(depth, p, cloud.reflectance[i],
                cd[px], Point3{cx[px], cy[px], cz[px]}, cr[px])) {
        cx[px] = p.x; cy[px] = p.y; cz[px] = p.z;
        cr[px] = cloud.reflectance[i];
        cd[px] = depth;
        pidx[px] = static_cast<int32_t>(i);
      }
    } else {
      mask[px] = 1;
      ++res.stats.valid;
      cx[px] = p.x; cy[px] = p.y; cz[px] = p.z;
      cr[px] = cloud.reflectance[i];
      cd[px] = depth;
      pidx[px] = static_cast<int32_t>(i);
    }
  }
  return res;
}

PointCloud unproject(const RangeImage& img) {
  const auto& cx = img.channel("x");
  const auto& cy = img.channel("y");
  const auto& cz = img.channel("z");
  const auto& cr = img.channel("reflectance");
  const auto& mask = img.mask();
  PointCloud cloud;
  for (std::size_t px = 0; px < img.pixel_count(); ++px) {
    if (!mask[px]) continue;
    cloud.points.push_back({cx[px], cy[px], cz[px]});
    cloud.reflectance.push_back(cr[px]);
  }
  return cloud;
}

}  // namespace lidarseg
