#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "gazedepth/gaze_source.hpp"
#include "gazedepth/geometry.hpp"

namespace gazedepth {

/// Scripted fixation-depth trajectory.
///   Static: depth_a throughout.
///   Step:   starts at depth_a (far), jumps to depth_b (near) after `period`,
///           and keeps alternating every `period` seconds.
///   Sweep:  linear in depth from depth_a to depth_b over `period` seconds,
///           then holds depth_b.
struct Scenario {
  enum class Kind { Static, Step, Sweep };

  Kind kind = Kind::Static;
  double depth_a = 1.0;
  double depth_b = 1.0;
  double period = 1.0;
  double duration = 1.0;       // seconds
  double sample_rate = 120.0;  // Hz

  static Scenario fixed(double depth, double duration, double sample_rate = 120.0);
  static Scenario step(double far_depth, double near_depth, double period, double duration,
                       double sample_rate = 120.0);
  static Scenario sweep(double start_depth, double end_depth, double sweep_time, double duration,
                        double sample_rate = 120.0);

  void validate() const;
  double target_depth(double t) const;
  std::size_t sample_count() const;
  double sample_time(std::size_t k) const { return static_cast<double>(k) / sample_rate; }
};

/// Parses "static:D", "step:FAR,NEAR,PERIOD" or "sweep:START,END,TIME".
/// Throws Error(Parse) on malformed input.
Scenario parse_scenario(std::string_view text, double duration, double sample_rate = 120.0);

struct NoiseModel {
  double angular_sigma = 0.0035;  // rad, per axis per eye
  double outlier_prob = 0.01;
  double outlier_sigma = 0.05;    // rad
  double blink_prob_per_s = 0.2;
  double blink_duration = 0.12;   // s
  std::uint64_t seed = 0;

  static NoiseModel none(std::uint64_t seed = 0);
  void validate() const;
};

/// Affine distortion of the eye's vergence as the tracker sees it:
/// apparent = scale * true + offset (diopters). Models per-user shifts.
struct VergenceDistortion {
  double scale = 1.0;
  double offset = 0.0;

  /// The distortion that a calibration with this gain/bias undoes.
  static VergenceDistortion inverse_of(double gain, double bias) {
    return {1.0 / gain, -bias / gain};
  }
  double apply(double vergence) const { return scale * vergence + offset; }
};

struct EyeModel {
  double ipd = 0.063;
  /// First-order vergence lag, seconds. 0 means the eyes jump instantly.
  double tau = 0.18;
  /// Extra inward (converging) rotation per eye, radians.
  double inward_bias = 0.0;
  VergenceDistortion distortion;
};

/// Inward rotation per eye that raises the measured vergence by roughly
/// `diopters` at any fixation depth.
double inward_bias_for_diopters(double ipd, double diopters);

struct TraceRecord {
  GazeSample sample;
  double true_depth = 0.0;
  Vec3 true_target = Vec3::Zero();
  bool blink = false;
};

/// Exact first-order lag update: current + (target - current)(1 - e^{-dt/tau}).
/// Throws Error(Domain) unless dt > 0 and tau > 0.
double vergence_dynamics_step(double current, double target, double dt, double tau);

/// Stateful synthetic binocular eye. Each call to step() advances one sample
/// period: the eye's vergence lags toward the target, exact rays are cast at
/// the lagged fixation point, then fixational noise, outliers and blinks are
/// applied. The random stream is consumed in a fixed pattern per sample, so a
/// trace is a prefix of any longer trace with the same seed.
class EyeSimulator final : public GazeSource {
 public:
  EyeSimulator(const NoiseModel& noise, const EyeModel& eye, double sample_rate,
               double initial_depth);

  void set_target_depth(double depth);
  double target_depth() const noexcept { return target_depth_; }
  /// Changes noise magnitudes without touching the random stream.
  void set_noise(const NoiseModel& noise);
  const NoiseModel& noise() const noexcept { return noise_; }
  const EyeModel& eye() const noexcept { return eye_; }
  /// Current (lagged) eye vergence in diopters, before distortion.
  double eye_vergence() const noexcept { return eye_vergence_; }
  std::size_t samples_emitted() const noexcept { return index_; }

  TraceRecord step();

  void present_target(double depth) override { set_target_depth(depth); }
  GazeSample next() override { return step().sample; }
  double sample_rate() const override { return sample_rate_; }

 private:
  NoiseModel noise_;
  EyeModel eye_;
  double sample_rate_;
  double target_depth_;
  double eye_vergence_;
  std::size_t index_ = 0;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  double blink_until_ = -1.0;
  Vec3 held_left_ = Vec3::UnitZ();
  Vec3 held_right_ = Vec3::UnitZ();
};

std::vector<TraceRecord> generate_trace(const Scenario& scenario, const NoiseModel& noise,
                                        const EyeModel& eye);
std::vector<TraceRecord> generate_trace(const Scenario& scenario, const NoiseModel& noise,
                                        double ipd);

// Trace file: JSON Lines, one record per line with keys
//   t, lox, loy, loz, ldx, ldy, ldz, rox, roy, roz, rdx, rdy, rdz, true_depth, blink
// Numbers are written with 17 significant digits so a read/write cycle is exact.
std::string trace_record_to_json(const TraceRecord& record);
void write_trace(std::ostream& out, std::span<const TraceRecord> records);
void write_trace(const std::filesystem::path& path, std::span<const TraceRecord> records);
/// Throws Error(Parse) naming the 1-based line number of the first bad line.
std::vector<TraceRecord> read_trace(std::istream& in);
std::vector<TraceRecord> read_trace(const std::filesystem::path& path);

}  // namespace gazedepth
