// Acceptance gate: one PASS/FAIL line per primary criterion. Exit status is
// non-zero if any criterion fails.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <mutex>
#include <random>
#include <sstream>
#include <streambuf>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>

#include "gazedepth/calibration.hpp"
#include "gazedepth/cli.hpp"
#include "gazedepth/experiments.hpp"
#include "gazedepth/geometry.hpp"
#include "gazedepth/simulator.hpp"
#include "interaction_properties.hpp"

using namespace gazedepth;
namespace fs = std::filesystem;
namespace ip = interaction_properties;

namespace {

struct Verdict {
  bool pass;
  std::string detail;
};

struct Criterion {
  std::string name;
  double limit_s;  // 0 means no runtime limit
  std::function<Verdict()> check;
};

constexpr std::size_t kStreams = 1000;
const std::vector<double> kPaperDepths{0.5, 2.0};

// --- geometry -------------------------------------------------------------

Verdict geometry_exactness() {
  GeometryConfig config;
  config.max_depth = 20.0;  // keep d = 10 m away from the range edge
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> lateral(-0.5, 0.5);
  double worst = 0.0;
  std::size_t n = 0;
  for (int i = 0; i <= 200; ++i) {
    const double d = 0.1 * std::pow(100.0, i / 200.0);  // 0.1 .. 10 m, log spaced
    for (int j = 0; j <= 6; ++j) {
      const double ipd = 0.05 + 0.005 * j;
      config.ipd = ipd;
      std::vector<Vec3> targets{Vec3(0, 0, d)};
      for (int k = 0; k < 8; ++k) targets.emplace_back(lateral(rng) * d, lateral(rng) * d, d);
      for (const auto& target : targets) {
        const auto e = estimate_depth(fixation_sample(0.0, target, ipd), config);
        if (e.validity != Validity::Valid) {
          return {false, fmt::format("target ({}, {}, {}) ipd {} classified {}", target.x(), target.y(),
                                     target.z(), ipd, to_string(e.validity))};
        }
        worst = std::max(worst, std::abs(e.depth - d) / d);
        ++n;
      }
    }
  }
  return {worst < 1e-9, fmt::format("{} fixations, max relative error {:.2e} (< 1e-9)", n, worst)};
}

// --- static separability ----------------------------------------------------------------

Verdict static_separability() {
  const ConfigBundle bundle;
  double worst = 1.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    NoiseModel noise;
    noise.seed = seed * 100;
    worst = std::min(worst, run_static_experiment(kPaperDepths, noise, bundle, 5000).separability);
  }
  const double clean = run_static_experiment(kPaperDepths, NoiseModel::none(), bundle, 5000).separability;
  return {worst >= 0.95 && clean == 1.0,
          fmt::format("default noise min over 5 seeds {:.4f} (>= 0.95), zero noise {} (= 1)", worst, clean)};
}

// --- depth error ----------------------------------------------------------------

double raw_depth_std(double depth, std::uint64_t seed) {
  NoiseModel noise;
  noise.seed = seed;
  const auto trace = generate_trace(Scenario::fixed(depth, 5000 / 120.0), noise, 0.063);
  std::vector<double> d;
  for (const auto& r : trace) {
    const auto e = estimate_depth(r.sample);
    if (e.valid()) d.push_back(e.depth);
  }
  double mean = 0;
  for (double x : d) mean += x;
  mean /= static_cast<double>(d.size());
  double ss = 0;
  for (double x : d) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(d.size() - 1));
}

Verdict spread_grows_with_distance() {
  double min_ratio = std::numeric_limits<double>::infinity();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    min_ratio = std::min(min_ratio, raw_depth_std(2.0, seed) / raw_depth_std(0.5, seed));
  }
  return {min_ratio > 1.0,
          fmt::format("std(raw @ 2 m) / std(raw @ 0.5 m) min over 5 seeds {:.2f} (> 1)", min_ratio)};
}

Verdict outliers_eliminated() {
  const ConfigBundle bundle;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    NoiseModel clean;
    clean.seed = seed;
    clean.outlier_prob = 0.0;
    NoiseModel dirty = clean;
    dirty.outlier_prob = 0.05;
    const double a = run_step_experiment(StepExperiment{}, clean, bundle).rmse_filtered;
    const double b = run_step_experiment(StepExperiment{}, dirty, bundle).rmse_filtered;
    worst = std::max(worst, b / a);
  }
  return {worst <= 2.0,
          fmt::format("rmse_filtered(5% outliers) / rmse_filtered(none), max over 5 paired seeds {:.3f} (<= 2)",
                      worst)};
}

Verdict filter_beats_raw() {
  const ConfigBundle bundle;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    NoiseModel noise;
    noise.seed = seed;
    const auto r = run_step_experiment(StepExperiment{}, noise, bundle);
    worst = std::max(worst, r.rmse_filtered / r.rmse_raw);
  }
  return {worst < 1.0,
          fmt::format("rmse_filtered / rmse_raw on the step scenario, max over 5 seeds {:.3f} (< 1)", worst)};
}

// --- state machine ----------------------------------------------------------

Verdict from_outcome(const ip::Outcome& o) {
  if (!o.failure.empty()) return {false, o.failure};
  return {o.streams >= kStreams, fmt::format("{} randomized streams, {} switches, no violation", o.streams, o.switches)};
}

Verdict hand_traces() {
  const std::string a = ip::hand_trace_activate(120.0);
  const std::string b = ip::hand_trace_band_oscillation();
  const std::string c = ip::hand_trace_constant_far();
  if (!a.empty()) return {false, "activate trace: " + a};
  if (!b.empty()) return {false, "band oscillation trace: " + b};
  if (!c.empty()) return {false, "constant far trace: " + c};
  return {true, "single ActivateDetail dwell after 1.40 D; 1.15/1.35 D oscillation silent; constant 0.5 D silent"};
}

// --- calibration ------------------------------------------------------------

const std::vector<double> kCalTargets{0.5, 1.0, 2.0};

CalibrationModel session_fit(const EyeModel& eye, const NoiseModel& noise) {
  EyeSimulator sim(noise, eye, 120.0, 2.0);
  return run_calibration_session(kCalTargets, CalibrationSessionConfig{}, sim, GeometryConfig{}, FilterConfig{});
}

// Largest error of the fitted correction against the true one over the
// calibrated vergence range [0.5, 2] D (affine, so the endpoints suffice).
double map_error(const CalibrationModel& m, double gain, double bias) {
  return std::max(std::abs((m.gain - gain) * 0.5 + m.bias - bias), std::abs((m.gain - gain) * 2.0 + m.bias - bias));
}

Verdict calibration_noiseless() {
  EyeModel eye;
  eye.distortion = VergenceDistortion::inverse_of(1.1, 0.2);
  eye.tau = 0.0;
  const auto m = session_fit(eye, NoiseModel::none());
  const double err = std::max(std::abs(m.gain - 1.1), std::abs(m.bias - 0.2));
  eye.tau = EyeModel{}.tau;
  const auto lagged = session_fit(eye, NoiseModel::none());
  const double lag_err = std::max(std::abs(lagged.gain - 1.1), std::abs(lagged.bias - 0.2));
  return {err <= 1e-9, fmt::format("gain 1.1 / bias 0.2 D via session, lag-free eye: max error {:.2e} (<= 1e-9); "
                                   "with the default 0.18 s lag after 3 s settle: {:.2e}",
                                   err, lag_err)};
}

Verdict calibration_noisy() {
  EyeModel eye;
  eye.distortion = VergenceDistortion::inverse_of(1.1, 0.2);
  double worst = 0.0, worst_bias = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    NoiseModel noise;
    noise.seed = seed;
    const auto m = session_fit(eye, noise);
    worst = std::max(worst, map_error(m, 1.1, 0.2));
    worst_bias = std::max(worst_bias, std::abs(m.bias - 0.2));
  }
  return {worst <= 0.05, fmt::format("default noise, 20 seeds: max correction error over 0.5-2 D {:.4f} D (<= 0.05); "
                                     "max intercept deviation {:.4f} D",
                                     worst, worst_bias)};
}

Verdict calibration_grid_oracle() {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> gain(0.8, 1.6), bias(-0.3, 0.3), truth(0.8, 3.0);
  std::normal_distribution<double> noise(0.0, 0.03);
  double worst_gap = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const double g = gain(rng), b = bias(rng);
    std::vector<CalibrationPoint> pts;
    for (int i = 0; i < 6; ++i) {
      const double v = truth(rng);
      pts.push_back({(v - b) / g + noise(rng), v});
    }
    auto objective = [&](double gg, double bb) {
      double ss = 0;
      for (const auto& p : pts) ss += std::pow(gg * p.measured_vergence + bb - p.true_vergence, 2);
      return ss;
    };
    double best = std::numeric_limits<double>::infinity(), best_g = 0, best_b = 0;
    for (int i = 0; i <= 1500; ++i) {
      for (int j = 0; j <= 2000; ++j) {
        const double gg = 0.5 + i * 1e-3, bb = -1.0 + j * 1e-3;
        const double v = objective(gg, bb);
        if (v < best) best = v, best_g = gg, best_b = bb;
      }
    }
    const auto m = fit_calibration(pts);
    if (objective(m.gain, m.bias) > best + 1e-12) return {false, "closed form worse than the grid"};
    if (std::abs(m.gain - best_g) > 2e-3 || std::abs(m.bias - best_b) > 5e-3) {
      return {false, fmt::format("grid minimizer ({}, {}) far from OLS ({}, {})", best_g, best_b, m.gain, m.bias)};
    }
    worst_gap = std::max(worst_gap, best - objective(m.gain, m.bias));
  }
  return {true, fmt::format("5 random sets: OLS objective never above the 1e-3 grid minimum (max gap {:.2e})", worst_gap)};
}

// --- determinism ------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

/// Thread-safe sink that lets the caller wait for a substring.
class WatchedBuffer : public std::streambuf {
 public:
  std::string wait_for(const std::string& needle, std::chrono::milliseconds timeout) {
    std::unique_lock lock(mutex_);
    cv_.wait_for(lock, timeout, [&] { return text_.find(needle) != std::string::npos; });
    return text_;
  }

 protected:
  int_type overflow(int_type ch) override {
    if (ch != traits_type::eof()) {
      std::lock_guard lock(mutex_);
      text_.push_back(static_cast<char>(ch));
      cv_.notify_all();
    }
    return ch;
  }
  std::streamsize xsputn(const char* s, std::streamsize n) override {
    std::lock_guard lock(mutex_);
    text_.append(s, static_cast<std::size_t>(n));
    cv_.notify_all();
    return n;
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::string text_;
};

// Runs `serve` for one idle client and returns the first `lines` messages.
std::string serve_transcript(std::size_t lines) {
  WatchedBuffer log_buf;
  std::ostream log(&log_buf);
  std::ostringstream out;
  int code = -1;
  std::thread server([&] {
    code = cli_main({"serve", "--port", "0", "--tick-rate", "2000", "--max-sessions", "1", "--seed", "5"}, out, log);
  });
  const std::string text = log_buf.wait_for("\n", std::chrono::seconds(5));
  const auto colon = text.rfind(':', text.find('\n'));
  std::string transcript;
  if (colon != std::string::npos) {
    const int port = std::atoi(text.c_str() + colon + 1);
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0) {
      char chunk[4096];
      while (static_cast<std::size_t>(std::count(transcript.begin(), transcript.end(), '\n')) < lines) {
        pollfd pfd{fd, POLLIN, 0};
        if (::poll(&pfd, 1, 5000) <= 0) break;
        const ssize_t got = ::recv(fd, chunk, sizeof chunk, 0);
        if (got <= 0) break;
        transcript.append(chunk, static_cast<std::size_t>(got));
      }
    }
    ::close(fd);
  }
  server.join();
  std::size_t pos = 0;
  for (std::size_t i = 0; i < lines && pos != std::string::npos; ++i) pos = transcript.find('\n', pos + 1);
  if (code != 0 || pos == std::string::npos) return "serve failed";
  return transcript.substr(0, pos + 1);
}

struct RunOutput {
  int code;
  std::string stdout_text;
  std::vector<std::string> files;
};

Verdict end_to_end_determinism() {
  const fs::path dir = fs::temp_directory_path() / fmt::format("gazedepth_acceptance_{}", ::getpid());
  fs::create_directories(dir);
  auto f = [&](const std::string& name) { return (dir / name).string(); };
  ::setenv("SOURCE_DATE_EPOCH", "1767225600", 1);

  struct Command {
    std::string name;
    std::vector<std::string> args;
    std::vector<std::string> outputs;
  };
  const std::vector<Command> commands{
      {"simulate", {"simulate", "--scenario", "step:2,0.5,2", "--duration", "20", "--seed", "7", "--out", f("trace.jsonl")},
       {"trace.jsonl"}},
      {"estimate", {"estimate", f("trace.jsonl"), "--out", f("depth.jsonl"), "--events", f("events.jsonl"),
                    "--hover", "poster"},
       {"depth.jsonl", "events.jsonl"}},
      {"eval-static", {"eval-static", "--depths", "0.5,2.0", "--samples", "2000", "--seed", "7", "--out", f("static.json")},
       {"static.json"}},
      {"eval-step", {"eval-step", "--duration", "30", "--seed", "7", "--out", f("step.json")}, {"step.json"}},
      {"calibrate", {"calibrate", "--seed", "7", "--vergence-bias", "0.3", "--out", f("cal.txt")}, {"cal.txt"}},
  };

  std::vector<std::string> checked;
  std::string failure;
  std::vector<std::vector<RunOutput>> runs(2);
  for (int round = 0; round < 2 && failure.empty(); ++round) {
    for (const auto& c : commands) {
      std::ostringstream out, err;
      RunOutput r{cli_main(c.args, out, err), out.str(), {}};
      for (const auto& o : c.outputs) r.files.push_back(slurp(f(o)));
      if (r.code != 0) {
        failure = fmt::format("{} exited {}: {}", c.name, r.code, err.str());
        break;
      }
      runs[round].push_back(std::move(r));
    }
  }
  if (failure.empty()) {
    for (std::size_t i = 0; i < commands.size(); ++i) {
      const auto& a = runs[0][i];
      const auto& b = runs[1][i];
      if (a.stdout_text != b.stdout_text || a.files != b.files) {
        failure = commands[i].name + " output differs between runs";
        break;
      }
      checked.push_back(commands[i].name);
    }
  }
  ::unsetenv("SOURCE_DATE_EPOCH");
  fs::remove_all(dir);
  if (!failure.empty()) return {false, failure};

  const std::string s1 = serve_transcript(600);
  const std::string s2 = serve_transcript(600);
  if (s1 == "serve failed" || s1 != s2) return {false, "serve transcripts differ or serve failed"};
  checked.push_back("serve");
  return {true, fmt::format("byte-identical stdout and files across two runs: {}", fmt::join(checked, ", "))};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"geometry exactness", 1.0, geometry_exactness},
      {"static targets separable", 10.0, static_separability},
      {"raw spread grows with distance", 0.0, spread_grows_with_distance},
      {"outliers eliminated by the filter", 0.0, outliers_eliminated},
      {"filtered beats raw on steps", 0.0, filter_beats_raw},
      {"state machine: no chatter", 0.0, [] { return from_outcome(ip::no_chatter(101, kStreams)); }},
      {"state machine: hysteresis safety", 0.0, [] { return from_outcome(ip::hysteresis_safety(202, kStreams)); }},
      {"state machine: dwell commit", 0.0, [] { return from_outcome(ip::dwell_commit(303, kStreams)); }},
      {"state machine: alternation", 0.0, [] { return from_outcome(ip::alternation(404, kStreams)); }},
      {"state machine: degraded freeze", 0.0, [] { return from_outcome(ip::degraded_freeze(505, kStreams)); }},
      {"state machine: hand traces", 0.0, hand_traces},
      {"calibration recovery, noiseless", 0.0, calibration_noiseless},
      {"calibration recovery, default noise", 0.0, calibration_noisy},
      {"calibration OLS matches grid oracle", 0.0, calibration_grid_oracle},
      {"end-to-end determinism", 0.0, end_to_end_determinism},
  };
  // Shared budgets: depth error checks 30 s, state machine 30 s, calibration 10 s.
  struct Budget {
    std::size_t first, last;
    double limit_s;
    const char* label;
  };
  const std::vector<Budget> budgets{{2, 4, 30.0, "depth error checks"}, {5, 10, 30.0, "state machine"},
                                    {11, 13, 10.0, "calibration"}};

  std::vector<double> elapsed;
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = {false, fmt::format("threw: {}", e.what())};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    elapsed.push_back(secs);
    if (c.limit_s > 0.0 && secs >= c.limit_s) {
      v.pass = false;
      v.detail += fmt::format("; runtime {:.2f} s exceeds {} s", secs, c.limit_s);
    }
    failures += v.pass ? 0 : 1;
    std::cout << fmt::format("{} {}: {} [{:.2f} s]\n", v.pass ? "PASS" : "FAIL", c.name, v.detail, secs) << std::flush;
  }
  for (const auto& b : budgets) {
    double total = 0;
    for (std::size_t i = b.first; i <= b.last; ++i) total += elapsed[i];
    const bool ok = total < b.limit_s;
    failures += ok ? 0 : 1;
    std::cout << fmt::format("{} runtime budget, {}: {:.2f} s (< {} s)\n", ok ? "PASS" : "FAIL", b.label, total,
                             b.limit_s);
  }
  std::cout << (failures == 0 ? "acceptance: all criteria passed\n"
                              : fmt::format("acceptance: {} criteria failed\n", failures));
  return failures == 0 ? 0 : 1;
}
