#include "gazedepth/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "gazedepth/error.hpp"
#include "number_format.hpp"

namespace gazedepth {

CalibrationModel fit_calibration(std::span<const CalibrationPoint> points) {
  std::set<double> distinct;
  for (const auto& p : points) {
    if (!(std::isfinite(p.measured_vergence) && std::isfinite(p.true_vergence) &&
          p.measured_vergence > 0.0 && p.true_vergence > 0.0)) {
      throw Error(ErrorCode::Domain, "calibration points must be finite and positive");
    }
    distinct.insert(p.true_vergence);
  }
  if (distinct.size() < 2) {
    throw Error(ErrorCode::InsufficientData,
                fmt::format("need at least 2 distinct target depths, got {}", distinct.size()));
  }

  const double n = static_cast<double>(points.size());
  double mean_m = 0.0;
  double mean_t = 0.0;
  for (const auto& p : points) {
    mean_m += p.measured_vergence;
    mean_t += p.true_vergence;
  }
  mean_m /= n;
  mean_t /= n;

  double sxx = 0.0;
  double sxy = 0.0;
  for (const auto& p : points) {
    const double dm = p.measured_vergence - mean_m;
    sxx += dm * dm;
    sxy += dm * (p.true_vergence - mean_t);
  }
  if (sxx == 0.0) {
    throw Error(ErrorCode::DegenerateFit, "measured vergence does not vary across targets");
  }

  CalibrationModel model;
  model.gain = sxy / sxx;
  if (!(model.gain > 0.0)) {
    throw Error(ErrorCode::DegenerateFit,
                fmt::format("fitted gain {} is not positive; wrong targets fixated?", model.gain));
  }
  model.bias = mean_t - model.gain * mean_m;
  model.n_points = points.size();

  double ss = 0.0;
  for (const auto& p : points) {
    const double r = apply_calibration(model, p.measured_vergence) - p.true_vergence;
    ss += r * r;
  }
  model.residual_rms = std::sqrt(ss / n);
  return model;
}

double apply_calibration(const CalibrationModel& model, double vergence) {
  return model.gain * vergence + model.bias;
}

FilteredDepth apply_calibration(const CalibrationModel& model, const FilteredDepth& sample) {
  FilteredDepth out = sample;
  out.vergence = apply_calibration(model, sample.vergence);
  out.depth = 1.0 / out.vergence;
  return out;
}

std::vector<CalibrationPoint> collect_calibration_points(std::span<const double> target_depths,
                                                         const CalibrationSessionConfig& session,
                                                         GazeSource& source,
                                                         const GeometryConfig& geometry,
                                                         const FilterConfig& filter_config) {
  std::set<double> distinct;
  for (double d : target_depths) distinct.insert(depth_to_diopters(d));
  if (distinct.size() < 2) {
    throw Error(ErrorCode::InsufficientData,
                fmt::format("need at least 2 distinct target depths, got {}", distinct.size()));
  }

  DepthFilter filter(filter_config);
  std::vector<CalibrationPoint> points;
  points.reserve(target_depths.size());

  for (double depth : target_depths) {
    source.present_target(depth);
    filter.reset();

    std::vector<double> readings;
    std::optional<double> start;
    std::optional<double> collect_start;
    for (;;) {
      const GazeSample sample = source.next();
      const FilteredDepth f = filter.push(estimate_depth(sample, geometry));
      if (!start) start = sample.timestamp;
      const double elapsed = sample.timestamp - *start;

      if (collect_start && sample.timestamp - *collect_start >= session.dwell) break;
      if (elapsed >= session.settle && f.quality == Quality::Settled && std::isfinite(f.vergence)) {
        if (!collect_start) collect_start = sample.timestamp;
        readings.push_back(f.vergence);
      }
      if (!collect_start && elapsed > session.settle + session.timeout) {
        throw Error(ErrorCode::TimeoutNoSettle,
                    fmt::format("target at {} m never produced a settled reading", depth));
      }
    }

    double value = 0.0;
    if (session.aggregate == Aggregate::Median) {
      const auto mid = readings.begin() + static_cast<std::ptrdiff_t>(readings.size() / 2);
      std::nth_element(readings.begin(), mid, readings.end());
      value = *mid;
      if (readings.size() % 2 == 0) value = 0.5 * (value + *std::max_element(readings.begin(), mid));
    } else {
      for (double r : readings) value += r;
      value /= static_cast<double>(readings.size());
    }
    points.push_back(CalibrationPoint{value, depth_to_diopters(depth)});
  }
  return points;
}

CalibrationModel run_calibration_session(std::span<const double> target_depths,
                                         const CalibrationSessionConfig& session,
                                         GazeSource& source,
                                         const GeometryConfig& geometry,
                                         const FilterConfig& filter) {
  const auto points = collect_calibration_points(target_depths, session, source, geometry, filter);
  return fit_calibration(points);
}

void write_calibration(std::ostream& out, const CalibrationModel& model,
                       const std::string& created_at) {
  out << "gain=" << detail::format_double(model.gain) << '\n'
      << "bias=" << detail::format_double(model.bias) << '\n'
      << "residual_rms=" << detail::format_double(model.residual_rms) << '\n'
      << "n_points=" << model.n_points << '\n'
      << "created_at=" << created_at << '\n';
}

void save_calibration(const std::filesystem::path& path, const CalibrationModel& model,
                      const std::string& created_at) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, fmt::format("cannot open {} for writing", path.string()));
  write_calibration(out, model, created_at);
  if (!out) throw Error(ErrorCode::Io, fmt::format("write failed: {}", path.string()));
}

CalibrationModel read_calibration(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw Error(ErrorCode::Parse, fmt::format("line {}: expected key=value", lineno));
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }

  auto number = [&](const char* key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw Error(ErrorCode::Parse, fmt::format("missing key '{}'", key));
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(it->second, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != it->second.size() || !std::isfinite(v)) {
      throw Error(ErrorCode::Parse, fmt::format("key '{}': not a number: '{}'", key, it->second));
    }
    return v;
  };

  CalibrationModel model;
  model.gain = number("gain");
  model.bias = number("bias");
  model.residual_rms = number("residual_rms");
  const double n = number("n_points");
  if (n < 0 || n != std::floor(n)) throw Error(ErrorCode::Parse, "n_points must be a count");
  model.n_points = static_cast<std::size_t>(n);
  if (!(model.gain > 0.0)) {
    throw Error(ErrorCode::DegenerateFit, "stored calibration has a non-positive gain");
  }
  return model;
}

CalibrationModel load_calibration(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, fmt::format("cannot open {}", path.string()));
  return read_calibration(in);
}

}  // namespace gazedepth
