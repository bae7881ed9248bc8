#ifndef LIDARSEG_GRID_HPP
#define LIDARSEG_GRID_HPP

#include "lidarseg/error.hpp"
#include "lidarseg/point_cloud.hpp"

namespace lidarseg {

/// Angular binning of the sensor. Bin 0 of each axis starts at the origin
/// angle; a point falls into bin floor((angle - origin) / step).
struct GridConfig {
  int height = 64;   // elevation bins (HDL-64e beam count)
  int width = 512;   // azimuth bins
  double delta_theta = 0.0;  // azimuth step, radians
  double delta_phi = 0.0;    // elevation step, radians
  double theta_origin = 0.0;
  double phi_origin = 0.0;

  /// Frontal crop covering [azimuth_min, azimuth_max) x [elev_min, elev_max).
  /// Defaults mirror the 90-degree, 64-beam setup the evaluated export uses.
  static GridConfig frontal(int height = 64, int width = 512,
                            double azimuth_min_deg = -45.0,
                            double azimuth_max_deg = 45.0,
                            double elev_min_deg = -24.8,
                            double elev_max_deg = 2.0);

  void validate() const;
};

struct SphericalCoords {
  double theta = 0.0;  // azimuth in (-pi, pi], 0 along +x
  double phi = 0.0;    // elevation, asin(z/d)
  double depth = 0.0;  // Euclidean norm
};

/// Standard spherical parameterization of a spinning LiDAR sample.
/// theta := 0 at the poles (x = y = 0) so the map is total on nonzero points.
SphericalCoords spherical_coords(const Point3& p);

}  // namespace lidarseg

#endif  // LIDARSEG_GRID_HPP
