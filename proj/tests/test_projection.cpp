#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lidarseg/error.hpp"
#include "lidarseg/params.hpp"
#include "lidarseg/projection.hpp"
#include "oracles.hpp"

using namespace lidarseg;

namespace {

constexpr double kPi = 3.14159265358979323846;

PointCloud random_cloud(Rng& rng, std::size_t count) {
  PointCloud cloud;
  for (std::size_t i = 0; i < count; ++i) {
    // Mostly frontal points, some deliberately out of view.
    const double theta = rng.uniform(-kPi * 0.35, kPi * 0.35);
    const double phi = rng.uniform(-0.5, 0.1);
    const double d = rng.uniform(2.0, 60.0);
    cloud.points.push_back({static_cast<float>(d * std::cos(phi) * std::cos(theta)),
                            static_cast<float>(d * std::cos(phi) * std::sin(theta)),
                            static_cast<float>(d * std::sin(phi))});
    cloud.reflectance.push_back(static_cast<float>(rng.uniform()));
  }
  return cloud;
}

bool images_equal(const RangeImage& a, const RangeImage& b) {
  if (a.height() != b.height() || a.width() != b.width()) return false;
  if (a.mask() != b.mask()) return false;
  for (const auto& name : a.channel_names())
    if (a.channel(name) != b.channel(name)) return false;
  return true;
}

}  // namespace

TEST_CASE("spherical coordinates of the axes") {
  const SphericalCoords sx = spherical_coords({1, 0, 0});
  CHECK(sx.theta == 0.0);
  CHECK(sx.phi == 0.0);
  CHECK(sx.depth == 1.0);

  const SphericalCoords sy = spherical_coords({0, 1, 0});
  CHECK(sy.theta == doctest::Approx(kPi / 2));
  CHECK(sy.phi == 0.0);
  CHECK(sy.depth == 1.0);

  const SphericalCoords sz = spherical_coords({0, 0, 2});
  CHECK(sz.theta == 0.0);  // pole convention
  CHECK(sz.phi == doctest::Approx(kPi / 2));
  CHECK(sz.depth == 2.0);
}

TEST_CASE("spherical coordinates reject the origin") {
  try {
    spherical_coords({0, 0, 0});
    FAIL("expected ZeroPoint");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ZeroPoint);
  }
}

TEST_CASE("empty cloud projects to an all-invalid image") {
  const GridConfig cfg = GridConfig::frontal(8, 16);
  const ProjectionResult res = project(PointCloud{}, cfg);
  CHECK(res.stats.valid == 0);
  for (auto m : res.image.mask()) CHECK(m == 0);
  for (float v : res.image.channel("depth")) CHECK(v == 0.0f);
}

TEST_CASE("point at the grid origin lands at pixel (0,0)") {
  // Origins at exactly zero; the +x axis point reconstructs theta = phi = 0,
  // and floor(0) puts it in bin 0 of both axes.
  GridConfig cfg = GridConfig::frontal(8, 16, 0.0, 90.0, 0.0, 24.0);
  PointCloud cloud;
  cloud.points.push_back({10.0f, 0.0f, 0.0f});
  cloud.reflectance.push_back(0.5f);
  const ProjectionResult res = project(cloud, cfg);
  CHECK(res.stats.valid == 1);
  CHECK(res.image.mask()[res.image.at(0, 0)] == 1);
}

TEST_CASE("collision keeps the nearer point") {
  const GridConfig cfg = GridConfig::frontal(8, 16);
  // Two points along the same ray direction at different depths.
  const double theta = cfg.theta_origin + 3.5 * cfg.delta_theta;
  const double phi = cfg.phi_origin + 2.5 * cfg.delta_phi;
  auto at_depth = [&](double d) -> Point3 {
    return {static_cast<float>(d * std::cos(phi) * std::cos(theta)),
            static_cast<float>(d * std::cos(phi) * std::sin(theta)),
            static_cast<float>(d * std::sin(phi))};
  };
  PointCloud cloud;
  cloud.points = {at_depth(5.0), at_depth(3.0)};
  cloud.reflectance = {0.1f, 0.9f};
  const ProjectionResult res = project(cloud, cfg);
  CHECK(res.stats.valid == 1);
  CHECK(res.stats.dropped_by_collision == 1);
  const std::size_t px = res.image.at(2, 3);
  REQUIRE(res.image.mask()[px] == 1);
  CHECK(res.image.channel("depth")[px] == doctest::Approx(3.0));
  CHECK(res.image.channel("reflectance")[px] == 0.9f);

  const oracles::BruteProjection brute = oracles::brute_project(cloud, cfg);
  CHECK(images_equal(res.image, brute.image));
}

TEST_CASE("projection matches the brute-force oracle bitwise") {
  Rng rng(101);
  for (int trial = 0; trial < 12; ++trial) {
    const GridConfig cfg = GridConfig::frontal(16, 64);
    const PointCloud cloud = random_cloud(rng, 50 + rng.index(800));
    const ProjectionResult fast = project(cloud, cfg);
    const oracles::BruteProjection brute = oracles::brute_project(cloud, cfg);
    CHECK(images_equal(fast.image, brute.image));
    CHECK(fast.stats.valid == brute.valid);
    CHECK(fast.stats.dropped_out_of_view == brute.dropped_out_of_view);
    CHECK(fast.stats.dropped_by_collision == brute.dropped_by_collision);
  }
}

TEST_CASE("drop accounting conserves the point count") {
  Rng rng(102);
  for (int trial = 0; trial < 10; ++trial) {
    const GridConfig cfg = GridConfig::frontal(16, 64);
    PointCloud cloud = random_cloud(rng, 100 + rng.index(2000));
    if (trial % 2 == 0) {  // zero-norm points count as out-of-view drops
      cloud.points.push_back({0, 0, 0});
      cloud.reflectance.push_back(0.0f);
    }
    const ProjectionResult res = project(cloud, cfg);
    CHECK(res.stats.total() == cloud.count());
  }
}

TEST_CASE("projection is invariant under input permutation") {
  Rng rng(103);
  const GridConfig cfg = GridConfig::frontal(8, 32);
  PointCloud cloud = random_cloud(rng, 600);  // dense enough to force collisions
  const ProjectionResult base = project(cloud, cfg);
  REQUIRE(base.stats.dropped_by_collision > 0);

  std::vector<std::size_t> perm(cloud.count());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  for (int trial = 0; trial < 5; ++trial) {
    rng.shuffle(perm);
    PointCloud shuffled;
    for (std::size_t i : perm) {
      shuffled.points.push_back(cloud.points[i]);
      shuffled.reflectance.push_back(cloud.reflectance[i]);
    }
    const ProjectionResult res = project(shuffled, cfg);
    CHECK(images_equal(res.image, base.image));
    CHECK(res.stats.dropped_by_collision == base.stats.dropped_by_collision);
  }
}

TEST_CASE("unproject returns the surviving points in row-major order") {
  Rng rng(104);
  const GridConfig cfg = GridConfig::frontal(16, 64);
  const PointCloud cloud = random_cloud(rng, 900);
  const ProjectionResult res = project(cloud, cfg);
  const PointCloud back = unproject(res.image);
  CHECK(back.count() == res.stats.valid);

  std::size_t at = 0;
  for (std::size_t px = 0; px < res.image.pixel_count(); ++px) {
    if (!res.image.mask()[px]) continue;
    const int32_t src = res.image.point_index()[px];
    REQUIRE(src >= 0);
    CHECK(back.points[at].x == cloud.points[static_cast<std::size_t>(src)].x);
    CHECK(back.points[at].y == cloud.points[static_cast<std::size_t>(src)].y);
    CHECK(back.points[at].z == cloud.points[static_cast<std::size_t>(src)].z);
    CHECK(back.reflectance[at] == cloud.reflectance[static_cast<std::size_t>(src)]);
    ++at;
  }
}

TEST_CASE("unproject of an all-invalid image is empty") {
  RangeImage img(4, 4);
  img.add_channel("x");
  img.add_channel("y");
  img.add_channel("z");
  img.add_channel("reflectance");
  CHECK(unproject(img).count() == 0);
}

TEST_CASE("unproject needs the coordinate channels") {
  RangeImage img(4, 4);
  img.add_channel("x");
  try {
    unproject(img);
    FAIL("expected MissingChannel");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingChannel);
  }
}

TEST_CASE("point_index is injective over valid pixels") {
  Rng rng(105);
  const GridConfig cfg = GridConfig::frontal(16, 64);
  const PointCloud cloud = random_cloud(rng, 1500);
  const ProjectionResult res = project(cloud, cfg);
  std::vector<bool> seen(cloud.count(), false);
  for (std::size_t px = 0; px < res.image.pixel_count(); ++px) {
    if (!res.image.mask()[px]) continue;
    const int32_t idx = res.image.point_index()[px];
    REQUIRE(idx >= 0);
    CHECK(!seen[static_cast<std::size_t>(idx)]);
    seen[static_cast<std::size_t>(idx)] = true;
  }
}

TEST_CASE("invalid grid configs are rejected") {
  GridConfig cfg;
  cfg.height = 0;
  cfg.width = 4;
  cfg.delta_phi = 0.1;
  cfg.delta_theta = 0.1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.height = 4;
  cfg.delta_theta = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
