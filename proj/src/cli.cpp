#include "gazedepth/cli.hpp"

#include <csignal>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "gazedepth/calibration.hpp"
#include "gazedepth/error.hpp"
#include "gazedepth/experiments.hpp"
#include "gazedepth/pipeline.hpp"
#include "gazedepth/session.hpp"
#include "gazedepth/simulator.hpp"
#include "number_format.hpp"

namespace gazedepth {
namespace {

struct CommonOptions {
  std::uint64_t seed = 1;
  double ipd = 0.063;
  double noise_sigma = NoiseModel{}.angular_sigma;
  double outlier_prob = NoiseModel{}.outlier_prob;
  double blink_rate = NoiseModel{}.blink_prob_per_s;
  double tau = EyeModel{}.tau;
  double rate = 120.0;
  std::size_t window = FilterConfig{}.window;
  double alpha = FilterConfig{}.ema_alpha;
  double dwell = 0.15;
  double hysteresis = 0.2;
  std::vector<double> layers{2.0, 0.5};
  double distortion_gain = 1.0;
  double distortion_bias = 0.0;
  double vergence_bias = 0.0;
  std::string calibration;
  std::string out;
};

void add_sim_flags(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--ipd", o.ipd, "Interpupillary distance, meters");
  cmd->add_option("--noise-sigma", o.noise_sigma, "Fixational angular noise per axis per eye, radians");
  cmd->add_option("--outlier-prob", o.outlier_prob, "Per-sample outlier probability");
  cmd->add_option("--blink-rate", o.blink_rate, "Blinks per second");
  cmd->add_option("--tau", o.tau, "Vergence lag time constant, seconds (0 = instant)");
  cmd->add_option("--rate", o.rate, "Sample rate, Hz");
  cmd->add_option("--distortion-gain", o.distortion_gain,
                  "Simulate a user whose readings need this calibration gain");
  cmd->add_option("--distortion-bias", o.distortion_bias,
                  "Simulate a user whose readings need this calibration bias, diopters");
  cmd->add_option("--vergence-bias", o.vergence_bias,
                  "Inward gaze-angle bias expressed as its vergence offset, diopters");
}

void add_pipeline_flags(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--window", o.window, "Filter window, samples (odd, >= 3)");
  cmd->add_option("--alpha", o.alpha, "EMA smoothing factor in (0, 1]");
  cmd->add_option("--dwell", o.dwell, "Layer switch dwell, seconds");
  cmd->add_option("--hysteresis", o.hysteresis, "Hysteresis fraction of the layer half-separation");
  cmd->add_option("--layers", o.layers, "Layer depths far to near, meters")->delimiter(',');
  cmd->add_option("--calibration", o.calibration, "Calibration file to apply");
}

NoiseModel noise_of(const CommonOptions& o) {
  NoiseModel n;
  n.angular_sigma = o.noise_sigma;
  n.outlier_prob = o.outlier_prob;
  n.blink_prob_per_s = o.blink_rate;
  n.seed = o.seed;
  n.validate();
  return n;
}

ConfigBundle bundle_of(const CommonOptions& o) {
  ConfigBundle b;
  b.geometry.ipd = o.ipd;
  b.geometry.validate();
  b.filter.window = o.window;
  b.filter.ema_alpha = o.alpha;
  b.filter.validate();
  b.layer_depths = o.layers;
  b.dwell = o.dwell;
  b.hysteresis_fraction = o.hysteresis;
  b.layer_config();  // validates
  b.sample_rate = o.rate;
  b.eye.ipd = o.ipd;
  b.eye.tau = o.tau;
  if (!(o.distortion_gain > 0.0)) throw Error(ErrorCode::BadConfig, "--distortion-gain must be positive");
  b.eye.distortion = VergenceDistortion::inverse_of(o.distortion_gain, o.distortion_bias);
  b.eye.inward_bias = inward_bias_for_diopters(o.ipd, o.vergence_bias);
  if (!o.calibration.empty()) b.calibration = load_calibration(o.calibration);
  return b;
}

/// Writes to --out when given, else to the command's stdout.
class Output {
 public:
  Output(const std::string& path, std::ostream& fallback) {
    if (path.empty()) {
      stream_ = &fallback;
    } else {
      file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
      if (!*file_) throw Error(ErrorCode::Io, fmt::format("cannot open {} for writing", path));
      stream_ = file_.get();
    }
  }
  std::ostream& stream() { return *stream_; }
  void close() {
    if (file_) {
      file_->close();
      if (!*file_) throw Error(ErrorCode::Io, "write failed");
    }
  }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* stream_ = nullptr;
};

std::string json_number(double v) { return std::isfinite(v) ? detail::format_double(v) : "null"; }

std::string depth_line(const TraceRecord& rec, const PipelineTick& tick) {
  return fmt::format(
      R"({{"t":{},"depth":{},"vergence":{},"validity":"{}","ray_gap":{},)"
      R"("filtered_depth":{},"filtered_vergence":{},"quality":"{}","rejected":{},"true_depth":{}}})",
      json_number(tick.raw.timestamp), json_number(tick.raw.depth), json_number(tick.raw.vergence),
      to_string(tick.raw.validity), json_number(tick.raw.ray_gap), json_number(tick.corrected.depth),
      json_number(tick.corrected.vergence), to_string(tick.corrected.quality),
      tick.corrected.rejected ? "true" : "false", json_number(rec.true_depth));
}

std::optional<std::size_t> load_profile(const std::string& path) {
  if (path.empty() || !std::filesystem::exists(path)) return std::nullopt;
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, fmt::format("cannot open profile {}", path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.rfind("switch_count=", 0) == 0) {
      try {
        return static_cast<std::size_t>(std::stoull(line.substr(13)));
      } catch (const std::exception&) {
        throw Error(ErrorCode::Parse, fmt::format("{}: line {}: bad switch_count", path, lineno));
      }
    }
  }
  return std::nullopt;
}

void save_profile(const std::string& path, std::size_t switch_count) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, fmt::format("cannot write profile {}", path));
  out << "switch_count=" << switch_count << '\n';
}

std::string created_at_stamp(const std::string& flag) {
  if (!flag.empty()) return flag;
  std::time_t now = std::time(nullptr);
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) {
    try {
      now = static_cast<std::time_t>(std::stoll(epoch));
    } catch (const std::exception&) {
      throw Error(ErrorCode::BadConfig, "SOURCE_DATE_EPOCH is not an integer");
    }
  }
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::atomic<bool> g_stop{false};
extern "C" void handle_stop_signal(int) { g_stop = true; }

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Binocular gaze to focal depth and layer-switch events"};
  app.require_subcommand(1);

  CommonOptions o;

  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic gaze trace (JSON Lines)");
  std::string scenario_text;
  double duration = 10.0;
  simulate->add_option("--scenario", scenario_text,
                       "static:D | step:FAR,NEAR,PERIOD | sweep:START,END,TIME")->required();
  simulate->add_option("--duration", duration, "Seconds");
  simulate->add_option("--out", o.out, "Trace file (default stdout)");
  add_sim_flags(simulate, o);

  auto* estimate = app.add_subcommand("estimate", "Run a trace through the pipeline");
  std::string trace_in;
  std::string events_out;
  std::string profile;
  std::optional<std::string> hover_object;
  estimate->add_option("trace", trace_in, "Input trace file")->required();
  estimate->add_option("--out", o.out, "Depth JSONL output (default stdout)");
  estimate->add_option("--events", events_out, "Interaction event log (JSONL)");
  estimate->add_option("--hover", hover_object, "Object id hovered for the whole trace");
  estimate->add_option("--profile", profile, "User profile file holding the switch count");
  estimate->add_option("--ipd", o.ipd, "Interpupillary distance, meters");
  estimate->add_option("--rate", o.rate, "Sample rate, Hz");
  add_pipeline_flags(estimate, o);

  auto* eval_static = app.add_subcommand("eval-static", "Static-fixation separability experiment");
  std::vector<double> depths{0.5, 2.0};
  std::size_t samples = 5000;
  eval_static->add_option("--depths", depths, "Target depths, meters")->delimiter(',');
  eval_static->add_option("--samples", samples, "Samples per depth");
  eval_static->add_option("--out", o.out, "JSON report file");
  add_sim_flags(eval_static, o);
  add_pipeline_flags(eval_static, o);

  auto* eval_step = app.add_subcommand("eval-step", "Jumping-target tracking experiment");
  StepExperiment step_params;
  std::string step_trace;
  eval_step->add_option("--far", step_params.far_depth, "Far depth, meters");
  eval_step->add_option("--near", step_params.near_depth, "Near depth, meters");
  eval_step->add_option("--period", step_params.period, "Seconds between jumps");
  eval_step->add_option("--duration", step_params.duration, "Seconds");
  eval_step->add_option("--trace", step_trace, "Evaluate this trace instead of simulating");
  eval_step->add_option("--out", o.out, "JSON report file");
  add_sim_flags(eval_step, o);
  add_pipeline_flags(eval_step, o);

  auto* calibrate = app.add_subcommand("calibrate", "Run a simulated calibration session");
  std::vector<double> cal_depths{0.5, 1.0, 2.0};
  CalibrationSessionConfig session;
  std::string aggregate = "mean";
  std::string created_at;
  calibrate->add_option("--depths", cal_depths, "Target depths, meters")->delimiter(',');
  calibrate->add_option("--target-dwell", session.dwell, "Seconds of settled readings per target");
  calibrate->add_option("--settle", session.settle, "Seconds allowed to converge per target");
  calibrate->add_option("--aggregate", aggregate, "mean or median")
      ->check(CLI::IsMember({"mean", "median"}));
  calibrate->add_option("--created-at", created_at,
                        "Timestamp stored in the file (default SOURCE_DATE_EPOCH or now)");
  calibrate->add_option("--out", o.out, "Calibration file")->required();
  calibrate->add_option("--window", o.window, "Filter window, samples (odd, >= 3)");
  calibrate->add_option("--alpha", o.alpha, "EMA smoothing factor in (0, 1]");
  add_sim_flags(calibrate, o);

  auto* serve = app.add_subcommand("serve", "Host the playground session service");
  ServeOptions serve_options;
  std::size_t max_sessions = 0;
  serve->add_option("--port", serve_options.port, "TCP port");
  serve->add_option("--host", serve_options.host, "Listen address");
  serve->add_option("--tick-rate", serve_options.tick_rate, "Ticks per second (default --rate)");
  serve->add_option("--max-sessions", max_sessions, "Exit after this many sessions");
  add_sim_flags(serve, o);
  add_pipeline_flags(serve, o);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  if (*simulate) {
    Scenario scenario;
    try {
      scenario = parse_scenario(scenario_text, duration, o.rate);
    } catch (const Error& e) {
      throw Error(ErrorCode::BadConfig, fmt::format("--scenario: {}", e.what()));
    }
    const auto bundle = bundle_of(o);
    const auto trace = generate_trace(scenario, noise_of(o), bundle.eye);
    Output dest(o.out, out);
    write_trace(dest.stream(), trace);
    dest.close();
    return kExitOk;
  }

  if (*estimate) {
    const auto bundle = bundle_of(o);
    const auto trace = read_trace(std::filesystem::path(trace_in));
    Pipeline pipeline(bundle);
    if (auto count = load_profile(profile)) pipeline.interaction().switch_count = *count;
    std::vector<InteractionEvent> events;
    Output dest(o.out, out);
    const std::optional<std::string_view> hover =
        hover_object ? std::optional<std::string_view>(*hover_object) : std::nullopt;
    for (const auto& rec : trace) {
      const auto tick = pipeline.process(rec.sample, hover);
      dest.stream() << depth_line(rec, tick) << '\n';
      events.insert(events.end(), tick.events.begin(), tick.events.end());
    }
    dest.close();
    if (!events_out.empty()) {
      std::ofstream ev(events_out, std::ios::binary);
      if (!ev) throw Error(ErrorCode::Io, fmt::format("cannot open {} for writing", events_out));
      write_event_log(ev, events);
    }
    save_profile(profile, pipeline.interaction().switch_count);
    return kExitOk;
  }

  if (*eval_static || *eval_step) {
    const auto bundle = bundle_of(o);
    ExperimentReport report;
    if (*eval_static) {
      report = run_static_experiment(depths, noise_of(o), bundle, samples);
    } else if (!step_trace.empty()) {
      const auto trace = read_trace(std::filesystem::path(step_trace));
      report = evaluate_step_trace(trace, bundle);
    } else {
      report = run_step_experiment(step_params, noise_of(o), bundle);
    }
    write_report_text(out, report);
    write_histogram_chart(out, report);
    if (!o.out.empty()) {
      Output dest(o.out, out);
      dest.stream() << report_to_json(report) << '\n';
      dest.close();
    }
    return kExitOk;
  }

  if (*calibrate) {
    session.aggregate = aggregate == "median" ? Aggregate::Median : Aggregate::Mean;
    const auto bundle = bundle_of(o);
    EyeSimulator sim(noise_of(o), bundle.eye, bundle.sample_rate, cal_depths.front());
    const auto points = collect_calibration_points(cal_depths, session, sim, bundle.geometry, bundle.filter);
    const auto model = fit_calibration(points);
    const std::string stamp = created_at_stamp(created_at);
    save_calibration(o.out, model, stamp);
    for (const auto& p : points) {
      out << fmt::format("point true={} measured={}\n", detail::format_double(p.true_vergence),
                         detail::format_double(p.measured_vergence));
    }
    write_calibration(out, model, stamp);
    return kExitOk;
  }

  if (*serve) {
    const auto bundle = bundle_of(o);
    serve_options.max_sessions = max_sessions;
    serve_options.stop = &g_stop;
    serve_options.log = &err;
    g_stop = false;
    std::signal(SIGINT, handle_stop_signal);
    std::signal(SIGTERM, handle_stop_signal);
    serve_session(serve_options, bundle, noise_of(o));
    return kExitOk;
  }
  return kExitUsage;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return run(args, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    switch (e.code()) {
      case ErrorCode::BadConfig:
      case ErrorCode::BadDepths:
      case ErrorCode::Domain:
        return kExitUsage;
      default:
        return kExitData;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cli_main(args, std::cout, std::cerr);
}

}  // namespace gazedepth
