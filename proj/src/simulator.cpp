#include "gazedepth/simulator.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <string>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "gazedepth/error.hpp"
#include "number_format.hpp"

namespace gazedepth {
namespace {

// Rotates a unit direction by small yaw (about +y, toward +x) and pitch
// (about -x, toward +y) increments.
Vec3 perturb(const Vec3& dir, double dyaw, double dpitch) {
  if (dyaw == 0.0 && dpitch == 0.0) return dir;
  const double yaw = std::atan2(dir.x(), dir.z()) + dyaw;
  const double pitch = std::atan2(dir.y(), std::hypot(dir.x(), dir.z())) + dpitch;
  return Vec3(std::cos(pitch) * std::sin(yaw), std::sin(pitch), std::cos(pitch) * std::cos(yaw));
}

std::vector<double> parse_numbers(std::string_view text) {
  std::vector<double> out;
  while (true) {
    const auto comma = text.find(',');
    const std::string_view part = text.substr(0, comma);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc() || ptr != part.data() + part.size() || part.empty()) {
      throw Error(ErrorCode::Parse, fmt::format("not a number: '{}'", part));
    }
    out.push_back(v);
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return out;
}

}  // namespace

Scenario Scenario::fixed(double depth, double duration, double sample_rate) {
  return Scenario{Kind::Static, depth, depth, 1.0, duration, sample_rate};
}

Scenario Scenario::step(double far_depth, double near_depth, double period, double duration,
                        double sample_rate) {
  return Scenario{Kind::Step, far_depth, near_depth, period, duration, sample_rate};
}

Scenario Scenario::sweep(double start_depth, double end_depth, double sweep_time, double duration,
                         double sample_rate) {
  return Scenario{Kind::Sweep, start_depth, end_depth, sweep_time, duration, sample_rate};
}

void Scenario::validate() const {
  if (!(depth_a > 0.0 && depth_b > 0.0)) throw Error(ErrorCode::BadConfig, "scenario depths must be positive");
  if (!(period > 0.0)) throw Error(ErrorCode::BadConfig, "scenario period must be positive");
  if (!(duration > 0.0)) throw Error(ErrorCode::BadConfig, "scenario duration must be positive");
  if (!(sample_rate > 0.0)) throw Error(ErrorCode::BadConfig, "sample rate must be positive");
}

double Scenario::target_depth(double t) const {
  switch (kind) {
    case Kind::Static:
      return depth_a;
    case Kind::Step: {
      const auto phase = static_cast<long long>(std::floor(t / period));
      return phase % 2 == 0 ? depth_a : depth_b;
    }
    case Kind::Sweep: {
      if (t >= period) return depth_b;
      const double u = std::max(0.0, t / period);
      return depth_a + (depth_b - depth_a) * u;
    }
  }
  return depth_a;
}

std::size_t Scenario::sample_count() const {
  return static_cast<std::size_t>(std::llround(duration * sample_rate));
}

Scenario parse_scenario(std::string_view text, double duration, double sample_rate) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw Error(ErrorCode::Parse, fmt::format("scenario '{}' has no ':'", text));
  }
  const std::string_view kind = text.substr(0, colon);
  const auto args = parse_numbers(text.substr(colon + 1));

  Scenario s;
  if (kind == "static" && args.size() == 1) {
    s = Scenario::fixed(args[0], duration, sample_rate);
  } else if (kind == "step" && args.size() == 3) {
    s = Scenario::step(args[0], args[1], args[2], duration, sample_rate);
  } else if (kind == "sweep" && args.size() == 3) {
    s = Scenario::sweep(args[0], args[1], args[2], duration, sample_rate);
  } else {
    throw Error(ErrorCode::Parse,
                fmt::format("bad scenario '{}'; expected static:D, step:FAR,NEAR,PERIOD "
                            "or sweep:START,END,TIME", text));
  }
  try {
    s.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::Parse, e.what());
  }
  return s;
}

NoiseModel NoiseModel::none(std::uint64_t seed) {
  NoiseModel n;
  n.angular_sigma = 0.0;
  n.outlier_prob = 0.0;
  n.outlier_sigma = 0.0;
  n.blink_prob_per_s = 0.0;
  n.blink_duration = 0.0;
  n.seed = seed;
  return n;
}

void NoiseModel::validate() const {
  if (!(angular_sigma >= 0.0 && outlier_sigma >= 0.0)) {
    throw Error(ErrorCode::BadConfig, "noise sigmas must be non-negative");
  }
  if (!(outlier_prob >= 0.0 && outlier_prob <= 1.0)) {
    throw Error(ErrorCode::BadConfig, "outlier_prob must lie in [0, 1]");
  }
  if (!(blink_prob_per_s >= 0.0 && blink_duration >= 0.0)) {
    throw Error(ErrorCode::BadConfig, "blink parameters must be non-negative");
  }
}

double inward_bias_for_diopters(double ipd, double diopters) {
  return std::atan(0.5 * ipd * diopters);
}

double vergence_dynamics_step(double current, double target, double dt, double tau) {
  if (!(dt > 0.0) || !(tau > 0.0)) {
    throw Error(ErrorCode::Domain, fmt::format("need dt > 0 and tau > 0, got dt={} tau={}", dt, tau));
  }
  return current + (target - current) * -std::expm1(-dt / tau);
}

EyeSimulator::EyeSimulator(const NoiseModel& noise, const EyeModel& eye, double sample_rate,
                           double initial_depth)
    : noise_(noise),
      eye_(eye),
      sample_rate_(sample_rate),
      target_depth_(initial_depth),
      eye_vergence_(depth_to_diopters(initial_depth)),
      rng_(noise.seed) {
  noise_.validate();
  if (!(sample_rate > 0.0)) throw Error(ErrorCode::BadConfig, "sample rate must be positive");
  if (!(eye.ipd > 0.0) || !(eye.tau >= 0.0)) throw Error(ErrorCode::BadConfig, "bad eye model");
}

void EyeSimulator::set_target_depth(double depth) {
  depth_to_diopters(depth);  // validates
  target_depth_ = depth;
}

void EyeSimulator::set_noise(const NoiseModel& noise) {
  noise.validate();
  const auto seed = noise_.seed;
  noise_ = noise;
  noise_.seed = seed;
}

TraceRecord EyeSimulator::step() {
  const double dt = 1.0 / sample_rate_;
  const double t = static_cast<double>(index_) / sample_rate_;
  const double target_vergence = 1.0 / target_depth_;

  if (index_ > 0) {
    eye_vergence_ = eye_.tau > 0.0
                        ? vergence_dynamics_step(eye_vergence_, target_vergence, dt, eye_.tau)
                        : target_vergence;
  }

  const Vec3 left_eye(-0.5 * eye_.ipd, 0.0, 0.0);
  const Vec3 right_eye(0.5 * eye_.ipd, 0.0, 0.0);
  const double apparent = eye_.distortion.apply(eye_vergence_);
  Vec3 left_dir = Vec3::UnitZ();
  Vec3 right_dir = Vec3::UnitZ();
  if (apparent > 0.0) {
    const Vec3 fixation(0.0, 0.0, 1.0 / apparent);
    left_dir = (fixation - left_eye).normalized();
    right_dir = (fixation - right_eye).normalized();
  }

  // Fixed consumption pattern per sample keeps streams position independent.
  const double n_ly = normal_(rng_);
  const double n_lp = normal_(rng_);
  const double n_ry = normal_(rng_);
  const double n_rp = normal_(rng_);
  const double u_outlier = uniform_(rng_);
  const double u_eye = uniform_(rng_);
  const double n_oy = normal_(rng_);
  const double n_op = normal_(rng_);
  const double u_blink = uniform_(rng_);

  const double sigma = noise_.angular_sigma;
  left_dir = perturb(left_dir, eye_.inward_bias + sigma * n_ly, sigma * n_lp);
  right_dir = perturb(right_dir, -eye_.inward_bias + sigma * n_ry, sigma * n_rp);

  if (u_outlier < noise_.outlier_prob) {
    Vec3& hit = u_eye < 0.5 ? left_dir : right_dir;
    hit = perturb(hit, noise_.outlier_sigma * n_oy, noise_.outlier_sigma * n_op);
  }

  bool blink = t < blink_until_;
  if (!blink && index_ > 0 && u_blink < noise_.blink_prob_per_s * dt) {
    blink_until_ = t + noise_.blink_duration;
    blink = true;
  }
  if (blink) {
    left_dir = held_left_;
    right_dir = held_right_;
  } else {
    held_left_ = left_dir;
    held_right_ = right_dir;
  }

  ++index_;
  TraceRecord rec;
  rec.sample = GazeSample{t, Ray{left_eye, left_dir}, Ray{right_eye, right_dir}};
  rec.true_depth = target_depth_;
  rec.true_target = Vec3(0.0, 0.0, target_depth_);
  rec.blink = blink;
  return rec;
}

std::vector<TraceRecord> generate_trace(const Scenario& scenario, const NoiseModel& noise,
                                        const EyeModel& eye) {
  scenario.validate();
  EyeSimulator sim(noise, eye, scenario.sample_rate, scenario.target_depth(0.0));
  const std::size_t n = scenario.sample_count();
  std::vector<TraceRecord> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    sim.set_target_depth(scenario.target_depth(scenario.sample_time(k)));
    out.push_back(sim.step());
  }
  return out;
}

std::vector<TraceRecord> generate_trace(const Scenario& scenario, const NoiseModel& noise,
                                        double ipd) {
  EyeModel eye;
  eye.ipd = ipd;
  return generate_trace(scenario, noise, eye);
}

std::string trace_record_to_json(const TraceRecord& r) {
  using detail::format_double;
  const auto& l = r.sample.left;
  const auto& rt = r.sample.right;
  return fmt::format(
      R"({{"t":{},"lox":{},"loy":{},"loz":{},"ldx":{},"ldy":{},"ldz":{},)"
      R"("rox":{},"roy":{},"roz":{},"rdx":{},"rdy":{},"rdz":{},"true_depth":{},"blink":{}}})",
      format_double(r.sample.timestamp), format_double(l.origin.x()), format_double(l.origin.y()),
      format_double(l.origin.z()), format_double(l.direction.x()), format_double(l.direction.y()),
      format_double(l.direction.z()), format_double(rt.origin.x()), format_double(rt.origin.y()),
      format_double(rt.origin.z()), format_double(rt.direction.x()),
      format_double(rt.direction.y()), format_double(rt.direction.z()),
      format_double(r.true_depth), r.blink ? "true" : "false");
}

void write_trace(std::ostream& out, std::span<const TraceRecord> records) {
  for (const auto& r : records) out << trace_record_to_json(r) << '\n';
  if (!out) throw Error(ErrorCode::Io, "trace write failed");
}

void write_trace(const std::filesystem::path& path, std::span<const TraceRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, fmt::format("cannot open {} for writing", path.string()));
  write_trace(out, records);
}

std::vector<TraceRecord> read_trace(std::istream& in) {
  std::vector<TraceRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    try {
      const auto j = nlohmann::json::parse(line);
      auto num = [&](const char* key) {
        const auto& v = j.at(key);
        if (!v.is_number()) throw Error(ErrorCode::Parse, fmt::format("'{}' is not a number", key));
        return v.get<double>();
      };
      TraceRecord r;
      r.sample.timestamp = num("t");
      r.sample.left.origin = Vec3(num("lox"), num("loy"), num("loz"));
      r.sample.left.direction = Vec3(num("ldx"), num("ldy"), num("ldz"));
      r.sample.right.origin = Vec3(num("rox"), num("roy"), num("roz"));
      r.sample.right.direction = Vec3(num("rdx"), num("rdy"), num("rdz"));
      r.true_depth = num("true_depth");
      r.true_target = Vec3(0.0, 0.0, r.true_depth);
      const auto& blink = j.at("blink");
      if (!blink.is_boolean()) throw Error(ErrorCode::Parse, "'blink' is not a boolean");
      r.blink = blink.get<bool>();
      out.push_back(r);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::Parse, fmt::format("line {}: {}", lineno, e.what()));
    } catch (const Error& e) {
      throw Error(ErrorCode::Parse, fmt::format("line {}: {}", lineno, e.what()));
    }
  }
  if (in.bad()) throw Error(ErrorCode::Io, "trace read failed");
  return out;
}

std::vector<TraceRecord> read_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, fmt::format("cannot open {}", path.string()));
  return read_trace(in);
}

}  // namespace gazedepth
