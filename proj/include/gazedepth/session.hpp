#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "gazedepth/calibration.hpp"
#include "gazedepth/pipeline.hpp"
#include "gazedepth/simulator.hpp"

namespace gazedepth {

/// Live controls of a playground session, echoed in every frame.
struct SessionControls {
  double target_vergence = 0.5;
  std::string scenario = "manual";
  double noise_sigma = 0.0;
  double outlier_prob = 0.0;
  double blink_prob_per_s = 0.0;
  std::optional<std::string> hover;
};

/// Transport-free playground session: a simulated eye driven by client
/// control messages feeding one Pipeline. Every outgoing message is a single
/// JSON line carrying a monotone `seq`. The socket server owns one engine per
/// connection and calls handle() between ticks.
class SessionEngine {
 public:
  SessionEngine(const ConfigBundle& bundle, const NoiseModel& noise);

  /// Applies one client message; returns the reply messages (possibly none).
  /// Malformed input yields an error message and leaves the session intact.
  std::vector<std::string> handle(std::string_view line);

  /// Advances one sample period; returns one `event` message per interaction
  /// event followed by the `frame` message.
  std::vector<std::string> tick();

  const Pipeline& pipeline() const noexcept { return pipeline_; }
  const SessionControls& controls() const noexcept { return controls_; }
  const EyeSimulator& simulator() const noexcept { return sim_; }
  std::uint64_t ticks() const noexcept { return ticks_; }
  std::size_t pending_calibration_points() const noexcept { return cal_points_.size(); }

 private:
  std::string error(std::string_view code, std::string_view message);
  std::string finish(nlohmann::ordered_json message);

  ConfigBundle bundle_;
  EyeSimulator sim_;
  Pipeline pipeline_;
  SessionControls controls_;
  std::optional<Scenario> scenario_;
  std::uint64_t scenario_start_ = 0;
  std::uint64_t ticks_ = 0;
  std::uint64_t seq_ = 0;
  std::optional<PipelineTick> last_;
  std::vector<CalibrationPoint> cal_points_;
};

struct ServeOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 8765;
  /// Ticks per second; 0 means the bundle's sample rate.
  double tick_rate = 0.0;
  /// Stop accepting and end the current session once set.
  const std::atomic<bool>* stop = nullptr;
  /// Called with the bound port once listening (useful with port 0).
  std::function<void(std::uint16_t)> on_listening;
  /// Return after this many sessions; 0 means serve forever.
  std::size_t max_sessions = 0;
  std::ostream* log = nullptr;
};

/// Accepts one client at a time. A connection that opens with an HTTP
/// upgrade request is spoken to as a WebSocket (one message per text frame);
/// anything else is newline-delimited text over raw TCP. Throws Error(Io)
/// when the port cannot be bound.
void serve_session(const ServeOptions& options, const ConfigBundle& bundle, const NoiseModel& noise);

/// Sec-WebSocket-Accept value for a client key.
std::string websocket_accept_key(std::string_view client_key);

}  // namespace gazedepth
