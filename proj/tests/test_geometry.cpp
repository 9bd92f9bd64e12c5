#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "gazedepth/error.hpp"
#include "gazedepth/geometry.hpp"

using namespace gazedepth;

namespace {

double line_distance(const Ray& a, const Ray& b, double s, double t) {
  return ((a.origin + s * a.direction) - (b.origin + t * b.direction)).norm();
}

struct GridMin {
  double s, t, dist;
};

// Independent oracle: exhaustive grid over (s, t) in [0, 2]^2. A 1e-3 pass
// locates the basin, then a 1e-4 pass covers +-2e-3 around it.
GridMin grid_closest(const Ray& a, const Ray& b) {
  GridMin best{0, 0, 1e300};
  for (int i = 0; i <= 2000; ++i) {
    for (int j = 0; j <= 2000; ++j) {
      const double s = i * 1e-3, t = j * 1e-3;
      const double d = line_distance(a, b, s, t);
      if (d < best.dist) best = {s, t, d};
    }
  }
  const GridMin coarse = best;
  for (int i = -20; i <= 20; ++i) {
    for (int j = -20; j <= 20; ++j) {
      const double s = coarse.s + i * 1e-4, t = coarse.t + j * 1e-4;
      const double d = line_distance(a, b, s, t);
      if (d < best.dist) best = {s, t, d};
    }
  }
  return best;
}

double sample_std(const std::vector<double>& v) {
  double mean = 0;
  for (double x : v) mean += x;
  mean /= v.size();
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (v.size() - 1));
}

Vec3 rotate_small(const Vec3& d, double yaw, double pitch) {
  const double y = std::atan2(d.x(), d.z()) + yaw;
  const double p = std::atan2(d.y(), std::hypot(d.x(), d.z())) + pitch;
  return Vec3(std::cos(p) * std::sin(y), std::sin(p), std::cos(p) * std::cos(y));
}

}  // namespace

TEST_CASE("closest points of rays that intersect") {
  const Vec3 target(0, 0, 1);
  const Ray left = Ray::toward(Vec3(-0.0315, 0, 0), target);
  const Ray right = Ray::toward(Vec3(0.0315, 0, 0), target);
  const auto cp = ray_closest_points(left, right, 1e-6);
  REQUIRE(cp);
  const double eye_to_target = std::hypot(0.0315, 1.0);
  CHECK(cp->s == doctest::Approx(eye_to_target).epsilon(1e-12));
  CHECK(cp->t == doctest::Approx(eye_to_target).epsilon(1e-12));
  CHECK((cp->midpoint - target).norm() < 1e-12);
  CHECK(cp->gap < 1e-12);
}

TEST_CASE("identical directions are parallel") {
  const Ray left{Vec3(-0.0315, 0, 0), Vec3(0, 0, 1)};
  const Ray right{Vec3(0.0315, 0, 0), Vec3(0, 0, 1)};
  CHECK_FALSE(ray_closest_points(left, right, 1e-6));
}

TEST_CASE("skew rays agree with a grid-search oracle") {
  const Ray left = Ray::toward(Vec3(-0.03, 0, 0), Vec3(0, 0.005, 1));
  const Ray right = Ray::toward(Vec3(0.03, 0, 0), Vec3(0, -0.005, 1));

  const GridMin oracle = grid_closest(left, right);
  const auto cp = ray_closest_points(left, right, 1e-6);
  REQUIRE(cp);
  CHECK(std::abs(cp->s - oracle.s) <= 2e-4);
  CHECK(std::abs(cp->t - oracle.t) <= 2e-4);
  CHECK(cp->gap <= oracle.dist + 1e-12);
  CHECK(cp->gap == doctest::Approx(oracle.dist).epsilon(1e-4));

  // Frozen from the oracle run: midpoint sits on the axis just short of 1 m
  // (36/37 m by symmetry) and the rays miss by just under a centimeter.
  CHECK(std::abs(cp->midpoint.x()) < 1e-12);
  CHECK(std::abs(cp->midpoint.y()) < 1e-12);
  CHECK(cp->midpoint.z() == doctest::Approx(36.0 / 37.0).epsilon(1e-12));
  CHECK(cp->gap == doctest::Approx(0.00986).epsilon(1e-3));
}

TEST_CASE("estimate_depth on the canonical symmetric fixations") {
  GeometryConfig config;
  for (double d : {0.5, 2.0}) {
    const auto est = estimate_depth(fixation_sample(0.0, Vec3(0, 0, d), 0.063), config);
    CHECK(est.validity == Validity::Valid);
    CHECK(std::abs(est.depth - d) < 1e-9);
    CHECK(std::abs(est.vergence * est.depth - 1.0) < 1e-9);
  }
}

TEST_CASE("validity classification") {
  GeometryConfig config;

  SUBCASE("wall-eyed rays are divergent") {
    GazeSample s;
    s.left = Ray{Vec3(-0.0315, 0, 0), Vec3(-0.05, 0, 1).normalized()};
    s.right = Ray{Vec3(0.0315, 0, 0), Vec3(0.05, 0, 1).normalized()};
    CHECK(estimate_depth(s, config).validity == Validity::Divergent);
  }
  SUBCASE("parallel rays propagate") {
    GazeSample s;
    s.left = Ray{Vec3(-0.0315, 0, 0), Vec3::UnitZ()};
    s.right = Ray{Vec3(0.0315, 0, 0), Vec3::UnitZ()};
    const auto est = estimate_depth(s, config);
    CHECK(est.validity == Validity::Parallel);
    CHECK_FALSE(est.valid());
  }
  SUBCASE("vertical misalignment exceeds the gap limit") {
    GazeSample s;
    s.left = Ray::toward(Vec3(-0.0315, 0, 0), Vec3(0, 0.05, 1));
    s.right = Ray::toward(Vec3(0.0315, 0, 0), Vec3(0, -0.05, 1));
    const auto est = estimate_depth(s, config);
    CHECK(est.validity == Validity::ExcessiveGap);
    CHECK(est.ray_gap > config.max_ray_gap);
  }
  SUBCASE("far but not singular fixation is out of range") {
    const auto est = estimate_depth(fixation_sample(0, Vec3(0, 0, 20), 0.063), config);
    CHECK(est.validity == Validity::OutOfRange);
    CHECK(est.depth == doctest::Approx(20.0));
  }
  SUBCASE("too near is out of range") {
    const auto est = estimate_depth(fixation_sample(0, Vec3(0, 0, 0.03), 0.063), config);
    CHECK(est.validity == Validity::OutOfRange);
  }
}

TEST_CASE("diopter conversion") {
  CHECK(depth_to_diopters(0.5) == 2.0);
  CHECK(depth_to_diopters(2.0) == 0.5);
  CHECK(depth_to_diopters(1.0) == 1.0);
  CHECK_THROWS_AS(depth_to_diopters(0.0), Error);
  CHECK_THROWS_AS(depth_to_diopters(-1.0), Error);
  CHECK_THROWS_AS(diopters_to_depth(0.0), Error);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> depth(0.05, 50.0);
  for (int i = 0; i < 1000; ++i) {
    const double d = depth(rng);
    CHECK(std::abs(diopters_to_depth(depth_to_diopters(d)) - d) <= 1e-12 * d);
  }
  for (double d = 0.1; d < 10.0; d += 0.1) {
    CHECK(depth_to_diopters(d + 0.05) < depth_to_diopters(d));
  }
}

TEST_CASE("noiseless round trip over depth and IPD, symmetric and off-axis") {
  GeometryConfig config;
  for (double ipd = 0.05; ipd <= 0.0800001; ipd += 0.005) {
    for (double d = 0.1; d <= 10.0; d *= 1.07) {
      const auto est = estimate_depth(fixation_sample(0, Vec3(0, 0, d), ipd), config);
      REQUIRE(est.validity == Validity::Valid);
      CHECK(std::abs(est.depth - d) / d < 1e-9);
    }
  }
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> lateral(-0.5, 0.5);
  std::uniform_real_distribution<double> depth(0.3, 10.0);
  std::uniform_real_distribution<double> ipd(0.05, 0.08);
  for (int i = 0; i < 2000; ++i) {
    const double d = depth(rng);
    const auto est =
        estimate_depth(fixation_sample(0, Vec3(lateral(rng), lateral(rng), d), ipd(rng)), config);
    REQUIRE(est.validity == Validity::Valid);
    CHECK(std::abs(est.depth - d) / d < 1e-9);
  }
}

TEST_CASE("angular noise costs more depth precision far away") {
  GeometryConfig config;
  config.max_depth = 1e6;
  config.max_ray_gap = 1.0;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0.0, 0.0035);

  auto spread = [&](double d) {
    const GazeSample clean = fixation_sample(0, Vec3(0, 0, d), 0.063);
    std::vector<double> depths;
    for (int i = 0; i < 2000; ++i) {
      GazeSample s = clean;
      s.left.direction = rotate_small(s.left.direction, noise(rng), noise(rng));
      s.right.direction = rotate_small(s.right.direction, noise(rng), noise(rng));
      const auto est = estimate_depth(s, config);
      if (est.validity == Validity::Valid) depths.push_back(est.depth);
    }
    return sample_std(depths);
  };
  CHECK(spread(2.0) > spread(0.5));
}

TEST_CASE("estimate_depth is pure") {
  GazeSample s;
  s.left = Ray::toward(Vec3(-0.031, 0.001, 0), Vec3(0.1, 0.02, 0.7));
  s.right = Ray::toward(Vec3(0.032, 0, 0), Vec3(0.1, 0.021, 0.71));
  const auto a = estimate_depth(s, {});
  const auto b = estimate_depth(s, {});
  auto same_bits = [](double x, double y) { return std::memcmp(&x, &y, sizeof x) == 0; };
  CHECK(same_bits(a.depth, b.depth));
  CHECK(same_bits(a.vergence, b.vergence));
  CHECK(same_bits(a.ray_gap, b.ray_gap));
  CHECK(a.validity == b.validity);
}

TEST_CASE("geometry config validation") {
  GeometryConfig c;
  CHECK_NOTHROW(c.validate());
  c.min_depth = 20;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.parallel_tolerance = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}
