#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gazedepth/filtering.hpp"
#include "gazedepth/gaze_source.hpp"
#include "gazedepth/geometry.hpp"

namespace gazedepth {

struct CalibrationPoint {
  double measured_vergence = 0.0;  // settled filtered reading, diopters
  double true_vergence = 0.0;      // 1 / known target depth
};

/// Per-user affine correction in diopter space: corrected = gain * v + bias.
struct CalibrationModel {
  double gain = 1.0;
  double bias = 0.0;
  double residual_rms = 0.0;
  std::size_t n_points = 0;

  static CalibrationModel identity() { return {}; }
};

/// Ordinary least squares for (gain, bias).
/// Throws InsufficientData with fewer than two distinct target vergences and
/// DegenerateFit when the slope is not positive (or undefined).
CalibrationModel fit_calibration(std::span<const CalibrationPoint> points);

double apply_calibration(const CalibrationModel& model, double vergence);
/// Corrects the vergence of a filtered sample and keeps depth = 1/vergence.
FilteredDepth apply_calibration(const CalibrationModel& model, const FilteredDepth& sample);

enum class Aggregate { Mean, Median };

struct CalibrationSessionConfig {
  /// Seconds of Settled readings averaged per target.
  double dwell = 1.0;
  /// Seconds allowed for the eye and filter to converge before collecting.
  double settle = 3.0;
  /// Extra seconds after `settle` to wait for a Settled reading.
  double timeout = 5.0;
  Aggregate aggregate = Aggregate::Mean;
};

/// Scripted procedure: present each target, wait `settle`, average the
/// Settled filtered vergence over `dwell`, then fit. The filter is reset at
/// every target so readings never mix targets.
/// Throws InsufficientData for fewer than two distinct depths and
/// TimeoutNoSettle when a target never produces a Settled reading.
CalibrationModel run_calibration_session(std::span<const double> target_depths,
                                         const CalibrationSessionConfig& session,
                                         GazeSource& source,
                                         const GeometryConfig& geometry,
                                         const FilterConfig& filter);

/// Collected points of the last session, exposed for reporting.
std::vector<CalibrationPoint> collect_calibration_points(std::span<const double> target_depths,
                                                         const CalibrationSessionConfig& session,
                                                         GazeSource& source,
                                                         const GeometryConfig& geometry,
                                                         const FilterConfig& filter);

// Key-value text file:
//   gain=<double>
//   bias=<double>
//   residual_rms=<double>
//   n_points=<int>
//   created_at=<ISO-8601 UTC>
void write_calibration(std::ostream& out, const CalibrationModel& model,
                       const std::string& created_at);
void save_calibration(const std::filesystem::path& path, const CalibrationModel& model,
                      const std::string& created_at);
CalibrationModel read_calibration(std::istream& in);
CalibrationModel load_calibration(const std::filesystem::path& path);

}  // namespace gazedepth
