#pragma once

#include <optional>
#include <string_view>

#include <Eigen/Core>

namespace gazedepth {

/// Head frame: x right, y up, z forward, origin midway between the eyes.
using Vec3 = Eigen::Vector3d;

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();

  /// Unit ray from `origin` through `target`.
  static Ray toward(const Vec3& origin, const Vec3& target);
};

/// One binocular tracker reading. The left eye sits on the -x side.
struct GazeSample {
  double timestamp = 0.0;
  Ray left;
  Ray right;
};

struct GeometryConfig {
  double ipd = 0.063;
  double min_depth = 0.05;
  double max_depth = 10.0;
  /// Threshold on the squared sine of the angle between the two directions.
  double parallel_tolerance = 1e-6;
  /// Largest accepted closest-approach distance between the rays, meters.
  double max_ray_gap = 0.03;

  /// Throws Error(BadConfig) when the invariants do not hold.
  void validate() const;
};

enum class Validity { Valid, Parallel, Divergent, ExcessiveGap, OutOfRange };

std::string_view to_string(Validity v) noexcept;
std::optional<Validity> validity_from_string(std::string_view s) noexcept;

/// Raw focal depth for one sample. Only `Valid` estimates carry meaningful
/// depth and vergence; everything else must be gated by the consumer.
struct DepthEstimate {
  double timestamp = 0.0;
  double depth = 0.0;     // meters, z of the vergence point
  double vergence = 0.0;  // diopters
  Validity validity = Validity::Parallel;
  double ray_gap = 0.0;   // meters

  bool valid() const noexcept { return validity == Validity::Valid; }
};

struct ClosestPoints {
  double s = 0.0;  // distance along the left ray
  double t = 0.0;  // distance along the right ray
  Vec3 midpoint = Vec3::Zero();
  double gap = 0.0;
};

/// Closest points between two (generally skew) lines, solved from the 2x2
/// normal equations. Returns nullopt when the directions are parallel to
/// within `parallel_tolerance` (squared sine of the enclosed angle).
std::optional<ClosestPoints> ray_closest_points(const Ray& left, const Ray& right,
                                                double parallel_tolerance);

/// Triangulates the vergence point. Never throws on degenerate geometry;
/// degeneracy is reported through `validity`.
DepthEstimate estimate_depth(const GazeSample& sample, const GeometryConfig& config = {});

/// 1/depth. Throws Error(Domain) for depth <= 0.
double depth_to_diopters(double depth);
/// 1/diopters. Throws Error(Domain) for diopters <= 0.
double diopters_to_depth(double diopters);

/// Noiseless sample with both eyes (at +-ipd/2 on the x axis) fixating `target`.
GazeSample fixation_sample(double timestamp, const Vec3& target, double ipd);

}  // namespace gazedepth
