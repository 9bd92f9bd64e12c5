#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gazedepth/pipeline.hpp"
#include "gazedepth/simulator.hpp"

namespace gazedepth {

inline constexpr double kHistogramBinWidth = 0.05;  // meters

/// Counts of settled filtered depth for one fixation target. Bin i covers
/// [bin_min + i * width, bin_min + (i + 1) * width); values outside the range
/// land in the edge bins so totals always match the settled sample count.
struct DepthHistogram {
  double target_depth = 0.0;
  std::vector<std::size_t> counts;
  std::size_t total = 0;
};

struct ExperimentReport {
  std::string kind;  // "static" or "step"
  double bin_min = 0.0;
  double bin_max = 0.0;
  double bin_width = kHistogramBinWidth;
  std::vector<DepthHistogram> histograms;

  std::size_t settled_samples = 0;
  std::size_t valid_raw_samples = 0;
  /// Fraction of settled samples whose vergence is nearest (in diopters) to
  /// the target actually being fixated; with two targets this is the
  /// midpoint-threshold classification accuracy.
  double separability = 0.0;

  std::size_t jump_count = 0;
  std::size_t switch_count = 0;
  std::size_t false_switch_count = 0;
  std::size_t missed_switch_count = 0;
  double switch_latency_mean = 0.0;
  double switch_latency_p95 = 0.0;

  double rmse_raw = 0.0;       // meters, valid raw estimates vs ground truth
  double rmse_filtered = 0.0;  // meters, settled filtered output vs ground truth

  std::size_t bin_count() const;
  double bin_center(std::size_t i) const { return bin_min + (static_cast<double>(i) + 0.5) * bin_width; }
};

/// Static-fixation run: for each depth, a static fixation of `samples_per_depth`
/// samples goes through the full pipeline; settled readings are binned and
/// classified. Depth i uses seed noise.seed + i.
ExperimentReport run_static_experiment(std::span<const double> depths, const NoiseModel& noise,
                                       const ConfigBundle& bundle,
                                       std::size_t samples_per_depth = 5000);

struct StepExperiment {
  double far_depth = 2.0;
  double near_depth = 0.5;
  double period = 2.0;
  double duration = 60.0;
};

/// Jumping-target run: the target jumps between two depths every `period`.
/// Errors are measured against the lagged ground truth (the simulated eye's
/// own vergence). A switch is matched to the latest jump if it is the first
/// switch in that jump's direction before the next jump; every other switch
/// counts as false.
ExperimentReport run_step_experiment(const StepExperiment& params, const NoiseModel& noise,
                                     const ConfigBundle& bundle);

/// Same metrics over an existing trace (e.g. read from disk).
ExperimentReport evaluate_step_trace(std::span<const TraceRecord> trace, const ConfigBundle& bundle);

/// Key-value lines followed by one line per non-empty histogram bin.
void write_report_text(std::ostream& out, const ExperimentReport& report);
/// Machine-readable JSON object.
std::string report_to_json(const ExperimentReport& report);
/// ASCII bar chart of the histograms, one row per populated bin.
void write_histogram_chart(std::ostream& out, const ExperimentReport& report, std::size_t width = 50);

}  // namespace gazedepth
