#include "gazedepth/geometry.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Geometry>
#include <fmt/format.h>

#include "gazedepth/error.hpp"

namespace gazedepth {

Ray Ray::toward(const Vec3& origin, const Vec3& target) {
  return Ray{origin, (target - origin).normalized()};
}

void GeometryConfig::validate() const {
  if (!(ipd > 0.0)) {
    throw Error(ErrorCode::BadConfig, fmt::format("ipd must be positive, got {}", ipd));
  }
  if (!(min_depth > 0.0 && min_depth < max_depth)) {
    throw Error(ErrorCode::BadConfig,
                fmt::format("need 0 < min_depth < max_depth, got [{}, {}]", min_depth, max_depth));
  }
  if (!(parallel_tolerance > 0.0 && max_ray_gap > 0.0)) {
    throw Error(ErrorCode::BadConfig, "tolerances must be positive");
  }
}

std::string_view to_string(Validity v) noexcept {
  switch (v) {
    case Validity::Valid: return "Valid";
    case Validity::Parallel: return "Parallel";
    case Validity::Divergent: return "Divergent";
    case Validity::ExcessiveGap: return "ExcessiveGap";
    case Validity::OutOfRange: return "OutOfRange";
  }
  return "Parallel";
}

std::optional<Validity> validity_from_string(std::string_view s) noexcept {
  for (auto v : {Validity::Valid, Validity::Parallel, Validity::Divergent,
                 Validity::ExcessiveGap, Validity::OutOfRange}) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

std::optional<ClosestPoints> ray_closest_points(const Ray& left, const Ray& right,
                                                double parallel_tolerance) {
  const Vec3& u = left.direction;
  const Vec3& v = right.direction;
  const Vec3 w0 = left.origin - right.origin;

  const double a = u.dot(u);
  const double b = u.dot(v);
  const double c = v.dot(v);
  const double d = u.dot(w0);
  const double e = v.dot(w0);

  // a*c - b^2 == |u x v|^2 (Lagrange); the cross product form avoids the
  // cancellation that 1 - b^2 suffers for nearly parallel rays.
  const double denom = u.cross(v).squaredNorm();
  if (denom / (a * c) < parallel_tolerance) return std::nullopt;

  ClosestPoints out;
  out.s = (b * e - c * d) / denom;
  out.t = (a * e - b * d) / denom;
  const Vec3 p_left = left.origin + out.s * u;
  const Vec3 p_right = right.origin + out.t * v;
  out.midpoint = 0.5 * (p_left + p_right);
  out.gap = (p_left - p_right).norm();
  return out;
}

DepthEstimate estimate_depth(const GazeSample& sample, const GeometryConfig& config) {
  DepthEstimate est;
  est.timestamp = sample.timestamp;

  const auto cp = ray_closest_points(sample.left, sample.right, config.parallel_tolerance);
  if (!cp) {
    est.depth = std::numeric_limits<double>::infinity();
    est.vergence = 0.0;
    est.ray_gap = std::numeric_limits<double>::quiet_NaN();
    est.validity = Validity::Parallel;
    return est;
  }

  est.depth = cp->midpoint.z();
  est.vergence = 1.0 / est.depth;
  est.ray_gap = cp->gap;

  if (cp->s <= 0.0 || cp->t <= 0.0) {
    est.validity = Validity::Divergent;
  } else if (cp->gap > config.max_ray_gap) {
    est.validity = Validity::ExcessiveGap;
  } else if (est.depth < config.min_depth || est.depth > config.max_depth) {
    est.validity = Validity::OutOfRange;
  } else {
    est.validity = Validity::Valid;
  }
  return est;
}

double depth_to_diopters(double depth) {
  if (!(depth > 0.0)) {
    throw Error(ErrorCode::Domain, fmt::format("depth must be positive, got {}", depth));
  }
  return 1.0 / depth;
}

double diopters_to_depth(double diopters) {
  if (!(diopters > 0.0)) {
    throw Error(ErrorCode::Domain, fmt::format("vergence must be positive, got {}", diopters));
  }
  return 1.0 / diopters;
}

GazeSample fixation_sample(double timestamp, const Vec3& target, double ipd) {
  const Vec3 left_eye(-0.5 * ipd, 0.0, 0.0);
  const Vec3 right_eye(0.5 * ipd, 0.0, 0.0);
  return GazeSample{timestamp, Ray::toward(left_eye, target), Ray::toward(right_eye, target)};
}

}  // namespace gazedepth
