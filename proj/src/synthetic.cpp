#include "lidarseg/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "lidarseg/error.hpp"
#include "lidarseg/params.hpp"

namespace lidarseg {

namespace {

struct Box {
  double min_x, max_x, min_y, max_y, min_z, max_z;
  int cls;
};

struct Cylinder {
  double cx, cy, radius, min_z, max_z;
  int cls;
};

struct Hit {
  double t = -1.0;
  int cls = -1;
  bool valid() const { return t > 0.0; }
};

constexpr double kMinRange = 0.5;

void consider(Hit& best, double t, int cls) {
  if (t < kMinRange) return;
  if (!best.valid() || t < best.t) best = {t, cls};
}

// Slab intersection; origin is the sensor at (0,0,0).
void intersect_box(const Box& b, const double dir[3], Hit& best) {
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  const double mins[3] = {b.min_x, b.min_y, b.min_z};
  const double maxs[3] = {b.max_x, b.max_y, b.max_z};
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (0.0 < mins[a] || 0.0 > maxs[a]) return;
      continue;
    }
    double near = mins[a] / dir[a];
    double far = maxs[a] / dir[a];
    if (near > far) std::swap(near, far);
    t0 = std::max(t0, near);
    t1 = std::min(t1, far);
    if (t0 > t1) return;
  }
  consider(best, t0 > 0.0 ? t0 : t1, b.cls);
}

void intersect_cylinder(const Cylinder& c, const double dir[3], Hit& best) {
  // Side surface: |o + t d - center|_xy = R with o = 0.
  const double a = dir[0] * dir[0] + dir[1] * dir[1];
  if (a > 0.0) {
    const double bq = -2.0 * (dir[0] * c.cx + dir[1] * c.cy);
    const double cq = c.cx * c.cx + c.cy * c.cy - c.radius * c.radius;
    const double disc = bq * bq - 4.0 * a * cq;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      for (double t : {(-bq - sq) / (2.0 * a), (-bq + sq) / (2.0 * a)}) {
        const double z = t * dir[2];
        if (t > 0.0 && z >= c.min_z && z <= c.max_z) consider(best, t, c.cls);
      }
    }
  }
  // End caps.
  if (dir[2] != 0.0) {
    for (double plane_z : {c.min_z, c.max_z}) {
      const double t = plane_z / dir[2];
      if (t <= 0.0) continue;
      const double dx = t * dir[0] - c.cx;
      const double dy = t * dir[1] - c.cy;
      if (dx * dx + dy * dy <= c.radius * c.radius) consider(best, t, c.cls);
    }
  }
}

struct Placement {
  double cx, cy, footprint_radius;
};

bool placement_clear(const std::vector<Placement>& placed, double cx, double cy,
                     double radius) {
  for (const auto& p : placed) {
    const double dx = p.cx - cx, dy = p.cy - cy;
    const double min_dist = p.footprint_radius + radius + 0.4;
    if (dx * dx + dy * dy < min_dist * min_dist) return false;
  }
  return true;
}

double class_reflectance(int cls) {
  switch (cls) {
    case kCar: return 0.45;
    case kPedestrian: return 0.75;
    case kCyclist: return 0.95;
    default: return 0.15;
  }
}

struct Scene {
  std::vector<Box> boxes;
  std::vector<Cylinder> cylinders;
  double ground_z = 0.0;
};

Scene place_objects(const SceneConfig& cfg, Rng& rng) {
  Scene scene;
  scene.ground_z = -cfg.sensor_height;
  const double az_min = cfg.grid.theta_origin;
  const double az_max = cfg.grid.theta_origin + cfg.grid.width * cfg.grid.delta_theta;
  std::vector<Placement> placed;

  struct Spec {
    int count;
    int cls;
    double size_x, size_y, height;  // cylinders use size_x as diameter
    bool cylinder;
  };
  const Spec specs[] = {
      {cfg.cars, kCar, 4.0, 1.8, 1.5, false},
      {cfg.pedestrians, kPedestrian, 0.8, 0.8, 1.7, true},
      {cfg.cyclists, kCyclist, 1.8, 0.5, 1.6, false},
  };

  for (const auto& spec : specs) {
    for (int i = 0; i < spec.count; ++i) {
      bool done = false;
      for (int attempt = 0; attempt < 200 && !done; ++attempt) {
        const double range = rng.uniform(cfg.range_min, cfg.range_max);
        double sx = spec.size_x, sy = spec.size_y;
        if (!spec.cylinder && rng.uniform() < 0.5) std::swap(sx, sy);  // 90-degree yaw
        const double radius = 0.5 * std::hypot(sx, sy);
        // Keep the whole footprint inside the azimuth field of view.
        const double margin = std::atan2(radius, range) * 1.5 + 0.02;
        if (az_min + margin >= az_max - margin) continue;
        const double azimuth = rng.uniform(az_min + margin, az_max - margin);
        const double cx = range * std::cos(azimuth);
        const double cy = range * std::sin(azimuth);
        if (!placement_clear(placed, cx, cy, radius)) continue;
        placed.push_back({cx, cy, radius});
        if (spec.cylinder) {
          scene.cylinders.push_back({cx, cy, 0.5 * sx, scene.ground_z,
                                     scene.ground_z + spec.height, spec.cls});
        } else {
          scene.boxes.push_back({cx - 0.5 * sx, cx + 0.5 * sx, cy - 0.5 * sy,
                                 cy + 0.5 * sy, scene.ground_z,
                                 scene.ground_z + spec.height, spec.cls});
        }
        done = true;
      }
      if (!done)
        throw Error(ErrorCode::DegenerateConfig,
                    "could not place all objects in the field of view");
    }
  }
  return scene;
}

}  // namespace

SyntheticScene generate_scene(const SceneConfig& cfg) {
  cfg.grid.validate();
  if (cfg.cars < 0 || cfg.pedestrians < 0 || cfg.cyclists < 0)
    throw Error(ErrorCode::DegenerateConfig, "object counts must be nonnegative");
  if (!(cfg.range_min > kMinRange && cfg.range_max > cfg.range_min))
    throw Error(ErrorCode::DegenerateConfig, "bad placement range");
  if (!(cfg.sensor_height > 0.0))
    throw Error(ErrorCode::DegenerateConfig, "sensor must sit above the ground");

  Rng rng(cfg.seed);
  for (int attempt = 0; attempt < 20; ++attempt) {
    const Scene scene = place_objects(cfg, rng);

    SyntheticScene out;
    out.sample.image = RangeImage(cfg.grid.height, cfg.grid.width);
    auto& img = out.sample.image;
    auto& cx = img.add_channel("x");
    auto& cy = img.add_channel("y");
    auto& cz = img.add_channel("z");
    auto& cr = img.add_channel("reflectance");
    auto& cd = img.add_channel("depth");
    out.sample.labels.assign(img.pixel_count(), 0);

    std::vector<uint64_t> class_points(kNumClasses, 0);
    for (int row = 0; row < cfg.grid.height; ++row) {
      const double phi = cfg.grid.phi_origin + (row + 0.5) * cfg.grid.delta_phi;
      for (int col = 0; col < cfg.grid.width; ++col) {
        const double theta = cfg.grid.theta_origin + (col + 0.5) * cfg.grid.delta_theta;
        const double dir[3] = {std::cos(phi) * std::cos(theta),
                               std::cos(phi) * std::sin(theta), std::sin(phi)};
        Hit hit;
        if (dir[2] < 0.0) consider(hit, scene.ground_z / dir[2], kBackground);
        for (const auto& b : scene.boxes) intersect_box(b, dir, hit);
        for (const auto& c : scene.cylinders) intersect_cylinder(c, dir, hit);
        const double jitter = rng.uniform(-cfg.reflectance_jitter, cfg.reflectance_jitter);
        if (!hit.valid() || hit.t > cfg.max_range) continue;  // no echo

        const float px = static_cast<float>(hit.t * dir[0]);
        const float py = static_cast<float>(hit.t * dir[1]);
        const float pz = static_cast<float>(hit.t * dir[2]);
        const double refl =
            std::clamp(class_reflectance(hit.cls) + jitter, 0.0, 1.0);
        const float pr = static_cast<float>(refl);
        const float depth =
            static_cast<float>(std::sqrt(double(px) * px + double(py) * py + double(pz) * pz));

        out.cloud.points.push_back({px, py, pz});
        out.cloud.reflectance.push_back(pr);
        out.point_labels.push_back(hit.cls);
        out.rows.push_back(row);
        out.cols.push_back(col);
        ++class_points[static_cast<std::size_t>(hit.cls)];

        const std::size_t at = img.at(row, col);
        img.mask()[at] = 1;
        img.point_index()[at] = static_cast<int32_t>(out.cloud.count() - 1);
        cx[at] = px;
        cy[at] = py;
        cz[at] = pz;
        cr[at] = pr;
        cd[at] = depth;
        out.sample.labels[at] = hit.cls;
      }
    }

    const bool complete = (cfg.cars == 0 || class_points[kCar] > 0) &&
                          (cfg.pedestrians == 0 || class_points[kPedestrian] > 0) &&
                          (cfg.cyclists == 0 || class_points[kCyclist] > 0);
    if (complete) return out;
    // Rare: an object caught no rays; redraw the placement and try again.
  }
  throw Error(ErrorCode::DegenerateConfig, "scene kept producing empty object classes");
}

}  // namespace lidarseg
