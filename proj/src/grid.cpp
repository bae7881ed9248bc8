#include "lidarseg/grid.hpp"

#include <cmath>

namespace lidarseg {

namespace {
constexpr double kDegToRad = 3.14159265358979323846 / 180.0;
}

GridConfig GridConfig::frontal(int height, int width, double azimuth_min_deg,
                               double azimuth_max_deg, double elev_min_deg,
                               double elev_max_deg) {
  GridConfig cfg;
  cfg.height = height;
  cfg.width = width;
  cfg.theta_origin = azimuth_min_deg * kDegToRad;
  cfg.phi_origin = elev_min_deg * kDegToRad;
  cfg.delta_theta = (azimuth_max_deg - azimuth_min_deg) * kDegToRad / width;
  cfg.delta_phi = (elev_max_deg - elev_min_deg) * kDegToRad / height;
  cfg.validate();
  return cfg;
}

void GridConfig::validate() const {
  if (height < 1 || width < 1)
    throw Error(ErrorCode::InvalidArgument, "grid needs height >= 1 and width >= 1");
  if (!(delta_theta > 0.0) || !(delta_phi > 0.0))
    throw Error(ErrorCode::InvalidArgument, "grid needs positive angular steps");
}

SphericalCoords spherical_coords(const Point3& p) {
  const double x = p.x, y = p.y, z = p.z;
  const double d = std::sqrt(x * x + y * y + z * z);
  if (d == 0.0) throw Error(ErrorCode::ZeroPoint, "spherical coordinates of (0,0,0)");
  SphericalCoords s;
  s.depth = d;
  s.theta = (x == 0.0 && y == 0.0) ? 0.0 : std::atan2(y, x);
  double ratio = z / d;
  if (ratio > 1.0) ratio = 1.0;
  if (ratio < -1.0) ratio = -1.0;
  s.phi = std::asin(ratio);
  return s;
}

}  // namespace lidarseg
