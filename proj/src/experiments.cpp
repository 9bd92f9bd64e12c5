#include "gazedepth/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "gazedepth/error.hpp"
#include "number_format.hpp"

namespace gazedepth {
namespace {

// Nearest target in diopter space; ties go to the farther target.
std::size_t nearest_target(double vergence, std::span<const double> target_vergences) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < target_vergences.size(); ++i) {
    const double d_best = std::abs(vergence - target_vergences[best]);
    const double d_i = std::abs(vergence - target_vergences[i]);
    if (d_i < d_best || (d_i == d_best && target_vergences[i] < target_vergences[best])) best = i;
  }
  return best;
}

class Accumulator {
 public:
  Accumulator(const ConfigBundle& bundle, std::vector<double> targets) : targets_(std::move(targets)) {
    report_.bin_min = bundle.geometry.min_depth;
    report_.bin_max = bundle.geometry.max_depth;
    for (double d : targets_) {
      target_vergences_.push_back(depth_to_diopters(d));
      report_.histograms.push_back(DepthHistogram{d, std::vector<std::size_t>(report_.bin_count(), 0), 0});
    }
  }

  void add_raw(const DepthEstimate& raw, double truth_depth) {
    if (!raw.valid()) return;
    ++report_.valid_raw_samples;
    const double e = raw.depth - truth_depth;
    raw_ss_ += e * e;
  }

  void add_settled(std::size_t target_index, double vergence, double truth_depth) {
    const double depth = 1.0 / vergence;
    auto& h = report_.histograms[target_index];
    const double pos = std::floor((depth - report_.bin_min) / report_.bin_width);
    const double last = static_cast<double>(h.counts.size() - 1);
    const auto bin = static_cast<std::size_t>(std::clamp(std::isfinite(pos) ? pos : last, 0.0, last));
    ++h.counts[bin];
    ++h.total;
    ++report_.settled_samples;
    if (nearest_target(vergence, target_vergences_) == target_index) ++correct_;
    const double e = depth - truth_depth;
    filtered_ss_ += e * e;
  }

  std::size_t index_of(double depth) const {
    const auto it = std::find(targets_.begin(), targets_.end(), depth);
    return static_cast<std::size_t>(it - targets_.begin());
  }

  ExperimentReport finish() {
    if (report_.settled_samples > 0) {
      report_.separability =
          static_cast<double>(correct_) / static_cast<double>(report_.settled_samples);
      report_.rmse_filtered = std::sqrt(filtered_ss_ / static_cast<double>(report_.settled_samples));
    }
    if (report_.valid_raw_samples > 0) {
      report_.rmse_raw = std::sqrt(raw_ss_ / static_cast<double>(report_.valid_raw_samples));
    }
    return report_;
  }

  ExperimentReport& report() { return report_; }

 private:
  std::vector<double> targets_;
  std::vector<double> target_vergences_;
  ExperimentReport report_;
  std::size_t correct_ = 0;
  double raw_ss_ = 0.0;
  double filtered_ss_ = 0.0;
};

double percentile_nearest_rank(std::vector<double> values, double p) {
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(values.size())));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

}  // namespace

std::size_t ExperimentReport::bin_count() const {
  return static_cast<std::size_t>(std::ceil((bin_max - bin_min) / bin_width - 1e-9));
}

ExperimentReport run_static_experiment(std::span<const double> depths, const NoiseModel& noise,
                                       const ConfigBundle& bundle, std::size_t samples_per_depth) {
  std::set<double> distinct(depths.begin(), depths.end());
  if (distinct.size() < 2) {
    throw Error(ErrorCode::InsufficientData, "static experiment needs at least two depths");
  }
  if (samples_per_depth == 0) throw Error(ErrorCode::BadConfig, "samples_per_depth must be positive");

  Accumulator acc(bundle, std::vector<double>(depths.begin(), depths.end()));
  for (std::size_t i = 0; i < depths.size(); ++i) {
    NoiseModel n = noise;
    n.seed = noise.seed + i;
    Scenario scenario = Scenario::fixed(depths[i], 1.0, bundle.sample_rate);
    scenario.duration = static_cast<double>(samples_per_depth) / bundle.sample_rate;
    const auto trace = generate_trace(scenario, n, bundle.eye);

    Pipeline pipeline(bundle);
    for (const auto& rec : trace) {
      const auto tick = pipeline.process(rec.sample);
      acc.add_raw(tick.raw, rec.true_depth);
      if (tick.corrected.quality == Quality::Settled && std::isfinite(tick.corrected.vergence)) {
        acc.add_settled(i, tick.corrected.vergence, rec.true_depth);
      }
    }
  }
  auto report = acc.finish();
  report.kind = "static";
  return report;
}

ExperimentReport evaluate_step_trace(std::span<const TraceRecord> trace, const ConfigBundle& bundle) {
  std::vector<double> targets;
  for (const auto& rec : trace) {
    if (std::find(targets.begin(), targets.end(), rec.true_depth) == targets.end()) {
      targets.push_back(rec.true_depth);
    }
  }
  if (targets.empty()) throw Error(ErrorCode::InsufficientData, "empty trace");

  Accumulator acc(bundle, targets);
  Pipeline pipeline(bundle);

  std::vector<double> jump_times;
  std::vector<bool> jump_nearer;
  struct Switch {
    double t;
    bool nearer;
  };
  std::vector<Switch> switches;

  double lagged_vergence = 1.0 / trace.front().true_depth;
  for (std::size_t k = 0; k < trace.size(); ++k) {
    const auto& rec = trace[k];
    if (k > 0) {
      const double dt = rec.sample.timestamp - trace[k - 1].sample.timestamp;
      const double target = 1.0 / rec.true_depth;
      lagged_vergence = bundle.eye.tau > 0.0 && dt > 0.0
                            ? vergence_dynamics_step(lagged_vergence, target, dt, bundle.eye.tau)
                            : target;
      if (rec.true_depth != trace[k - 1].true_depth) {
        jump_times.push_back(rec.sample.timestamp);
        jump_nearer.push_back(rec.true_depth < trace[k - 1].true_depth);
      }
    }
    const double truth_depth = 1.0 / lagged_vergence;

    const auto tick = pipeline.process(rec.sample);
    acc.add_raw(tick.raw, truth_depth);
    if (tick.corrected.quality == Quality::Settled && std::isfinite(tick.corrected.vergence)) {
      acc.add_settled(acc.index_of(rec.true_depth), tick.corrected.vergence, truth_depth);
    }
    for (const auto& e : tick.events) {
      if (e.is_switch()) switches.push_back({e.t, e.kind == EventKind::ActivateDetail});
    }
  }

  auto report = acc.finish();
  report.kind = "step";
  report.jump_count = jump_times.size();
  report.switch_count = switches.size();

  std::vector<double> latencies;
  std::size_t next_switch = 0;
  std::size_t false_switches = 0;
  // Switches before the first jump have nothing to answer.
  while (next_switch < switches.size() &&
         (jump_times.empty() || switches[next_switch].t < jump_times.front())) {
    ++false_switches;
    ++next_switch;
  }
  for (std::size_t j = 0; j < jump_times.size(); ++j) {
    const double end = j + 1 < jump_times.size() ? jump_times[j + 1]
                                                 : std::numeric_limits<double>::infinity();
    bool matched = false;
    for (; next_switch < switches.size() && switches[next_switch].t < end; ++next_switch) {
      const auto& s = switches[next_switch];
      if (!matched && s.nearer == jump_nearer[j]) {
        matched = true;
        latencies.push_back(s.t - jump_times[j]);
      } else {
        ++false_switches;
      }
    }
    if (!matched) ++report.missed_switch_count;
  }
  report.false_switch_count = false_switches;

  if (!latencies.empty()) {
    double sum = 0.0;
    for (double l : latencies) sum += l;
    report.switch_latency_mean = sum / static_cast<double>(latencies.size());
    report.switch_latency_p95 = percentile_nearest_rank(latencies, 0.95);
  }
  return report;
}

ExperimentReport run_step_experiment(const StepExperiment& params, const NoiseModel& noise,
                                     const ConfigBundle& bundle) {
  const auto scenario = Scenario::step(params.far_depth, params.near_depth, params.period,
                                       params.duration, bundle.sample_rate);
  const auto trace = generate_trace(scenario, noise, bundle.eye);
  return evaluate_step_trace(trace, bundle);
}

void write_report_text(std::ostream& out, const ExperimentReport& r) {
  using detail::format_double;
  out << "kind=" << r.kind << '\n'
      << "settled_samples=" << r.settled_samples << '\n'
      << "valid_raw_samples=" << r.valid_raw_samples << '\n'
      << "separability=" << format_double(r.separability) << '\n'
      << "rmse_raw=" << format_double(r.rmse_raw) << '\n'
      << "rmse_filtered=" << format_double(r.rmse_filtered) << '\n'
      << "jump_count=" << r.jump_count << '\n'
      << "switch_count=" << r.switch_count << '\n'
      << "false_switch_count=" << r.false_switch_count << '\n'
      << "missed_switch_count=" << r.missed_switch_count << '\n'
      << "switch_latency_mean=" << format_double(r.switch_latency_mean) << '\n'
      << "switch_latency_p95=" << format_double(r.switch_latency_p95) << '\n'
      << "bin_width=" << format_double(r.bin_width) << '\n'
      << "bin_min=" << format_double(r.bin_min) << '\n'
      << "bin_max=" << format_double(r.bin_max) << '\n';
  for (const auto& h : r.histograms) {
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
      if (h.counts[i] == 0) continue;
      out << fmt::format("bin target={} lo={:.2f} hi={:.2f} count={}\n", format_double(h.target_depth),
                         r.bin_min + static_cast<double>(i) * r.bin_width,
                         r.bin_min + static_cast<double>(i + 1) * r.bin_width, h.counts[i]);
    }
  }
}

std::string report_to_json(const ExperimentReport& r) {
  nlohmann::ordered_json j;
  j["kind"] = r.kind;
  j["settled_samples"] = r.settled_samples;
  j["valid_raw_samples"] = r.valid_raw_samples;
  j["separability"] = r.separability;
  j["rmse_raw"] = r.rmse_raw;
  j["rmse_filtered"] = r.rmse_filtered;
  j["jump_count"] = r.jump_count;
  j["switch_count"] = r.switch_count;
  j["false_switch_count"] = r.false_switch_count;
  j["missed_switch_count"] = r.missed_switch_count;
  j["switch_latency_mean"] = r.switch_latency_mean;
  j["switch_latency_p95"] = r.switch_latency_p95;
  j["bin_width"] = r.bin_width;
  j["bin_min"] = r.bin_min;
  j["bin_max"] = r.bin_max;
  auto& hs = j["histograms"] = nlohmann::ordered_json::array();
  for (const auto& h : r.histograms) {
    hs.push_back({{"target_depth", h.target_depth}, {"total", h.total}, {"counts", h.counts}});
  }
  return j.dump();
}

void write_histogram_chart(std::ostream& out, const ExperimentReport& r, std::size_t width) {
  for (const auto& h : r.histograms) {
    const auto peak = std::max_element(h.counts.begin(), h.counts.end());
    out << fmt::format("target {} m ({} settled samples)\n", detail::format_double(h.target_depth), h.total);
    if (peak == h.counts.end() || *peak == 0) continue;
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
      if (h.counts[i] == 0) continue;
      const auto len = std::max<std::size_t>(1, h.counts[i] * width / *peak);
      out << fmt::format("  {:5.2f} m |{} {}\n", r.bin_center(i), std::string(len, '#'), h.counts[i]);
    }
  }
}

}  // namespace gazedepth
