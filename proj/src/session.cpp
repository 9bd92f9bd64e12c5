#include "gazedepth/session.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "gazedepth/error.hpp"

namespace gazedepth {
namespace {

using Json = nlohmann::ordered_json;

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json event_json(const InteractionEvent& e) { return Json::parse(event_to_json(e)); }

Json optional_json(const std::optional<std::string>& s) { return s ? Json(*s) : Json(nullptr); }

std::optional<double> number_field(const Json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) return std::nullopt;
  if (!it->is_number()) throw Error(ErrorCode::Parse, fmt::format("field '{}' must be a number", key));
  return it->get<double>();
}

}  // namespace

SessionEngine::SessionEngine(const ConfigBundle& bundle, const NoiseModel& noise)
    : bundle_(bundle),
      sim_(noise, bundle.eye, bundle.sample_rate, bundle.layer_depths.front()),
      pipeline_(bundle) {
  controls_.target_vergence = 1.0 / bundle.layer_depths.front();
  controls_.noise_sigma = noise.angular_sigma;
  controls_.outlier_prob = noise.outlier_prob;
  controls_.blink_prob_per_s = noise.blink_prob_per_s;
}

std::string SessionEngine::finish(Json message) {
  Json out;
  out["type"] = message["type"];
  out["seq"] = seq_++;
  for (auto& [key, value] : message.items()) {
    if (key != "type") out[key] = value;
  }
  return out.dump();
}

std::string SessionEngine::error(std::string_view code, std::string_view message) {
  return finish(Json{{"type", "error"}, {"code", code}, {"message", message}});
}

std::vector<std::string> SessionEngine::handle(std::string_view line) {
  Json msg;
  try {
    msg = Json::parse(line);
  } catch (const Json::exception& e) {
    return {error("bad_json", e.what())};
  }
  if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
    return {error("bad_type", "message needs a string 'type' field")};
  }
  const std::string type = msg["type"].get<std::string>();

  try {
    if (type == "set_target") {
      const auto v = number_field(msg, "vergence");
      if (!v || !(*v > 0.0) || !std::isfinite(*v)) {
        return {error("bad_field", "set_target needs a positive 'vergence' in diopters")};
      }
      if (msg.contains("hover")) {
        const auto& h = msg["hover"];
        if (!h.is_null() && !h.is_string()) return {error("bad_field", "'hover' must be a string or null")};
        controls_.hover = h.is_null() ? std::nullopt : std::optional<std::string>(h.get<std::string>());
      }
      scenario_.reset();
      controls_.scenario = "manual";
      controls_.target_vergence = *v;
      sim_.set_target_depth(1.0 / *v);
      return {};
    }
    if (type == "set_scenario") {
      if (!msg.contains("scenario") || !msg["scenario"].is_string()) {
        return {error("bad_field", "set_scenario needs a 'scenario' string")};
      }
      const std::string text = msg["scenario"].get<std::string>();
      if (text == "manual") {
        scenario_.reset();
      } else {
        try {
          scenario_ = parse_scenario(text, 1e9, bundle_.sample_rate);
        } catch (const Error& e) {
          return {error("bad_field", e.what())};
        }
        scenario_start_ = ticks_;
      }
      controls_.scenario = text;
      return {};
    }
    if (type == "set_noise") {
      NoiseModel n = sim_.noise();
      const auto sigma = number_field(msg, "sigma");
      const auto outlier = number_field(msg, "outlier_prob");
      const auto blink = number_field(msg, "blink_prob_per_s");
      if (!sigma && !outlier && !blink) {
        return {error("bad_field", "set_noise needs 'sigma', 'outlier_prob' or 'blink_prob_per_s'")};
      }
      if (sigma) n.angular_sigma = *sigma;
      if (outlier) n.outlier_prob = *outlier;
      if (blink) n.blink_prob_per_s = *blink;
      if (n.blink_prob_per_s > 0.0 && n.blink_duration == 0.0) n.blink_duration = NoiseModel{}.blink_duration;
      try {
        sim_.set_noise(n);
      } catch (const Error& e) {
        return {error("bad_field", e.what())};
      }
      controls_.noise_sigma = n.angular_sigma;
      controls_.outlier_prob = n.outlier_prob;
      controls_.blink_prob_per_s = n.blink_prob_per_s;
      return {};
    }
    if (type == "reset") {
      pipeline_.reset();
      cal_points_.clear();
      last_.reset();
      return {};
    }
    if (type == "calibrate_point") {
      const auto depth = number_field(msg, "depth");
      if (!depth || !(*depth > 0.0)) return {error("bad_field", "calibrate_point needs a positive 'depth'")};
      if (!last_ || last_->filtered.quality != Quality::Settled || !std::isfinite(last_->filtered.vergence)) {
        return {error("not_settled", "no settled reading to record yet")};
      }
      cal_points_.push_back(CalibrationPoint{last_->filtered.vergence, 1.0 / *depth});
      return {finish(Json{{"type", "calibration_result"},
                          {"status", "point"},
                          {"n_points", cal_points_.size()},
                          {"measured_vergence", last_->filtered.vergence},
                          {"true_vergence", 1.0 / *depth}})};
    }
    if (type == "calibrate_fit") {
      CalibrationModel model;
      try {
        model = fit_calibration(cal_points_);
      } catch (const Error& e) {
        return {error(to_string(e.code()), e.what())};
      }
      pipeline_.set_calibration(model);
      cal_points_.clear();
      return {finish(Json{{"type", "calibration_result"},
                          {"status", "fit"},
                          {"n_points", model.n_points},
                          {"gain", model.gain},
                          {"bias", model.bias},
                          {"residual_rms", model.residual_rms}})};
    }
  } catch (const Error& e) {
    return {error("bad_field", e.what())};
  }
  return {error("bad_type", fmt::format("unknown message type '{}'", type))};
}

std::vector<std::string> SessionEngine::tick() {
  if (scenario_) {
    const double t = static_cast<double>(ticks_ - scenario_start_) / bundle_.sample_rate;
    const double depth = scenario_->target_depth(t);
    sim_.set_target_depth(depth);
    controls_.target_vergence = 1.0 / depth;
  }

  const TraceRecord rec = sim_.step();
  const std::optional<std::string_view> hover =
      controls_.hover ? std::optional<std::string_view>(*controls_.hover) : std::nullopt;
  last_ = pipeline_.process(rec.sample, hover);
  const auto& p = *last_;
  const auto& state = pipeline_.interaction();
  const auto& layers = pipeline_.layers().layers;

  std::vector<std::string> out;
  Json events = Json::array();
  for (const auto& e : p.events) {
    events.push_back(event_json(e));
    out.push_back(finish(Json{{"type", "event"}, {"tick", ticks_}, {"event", event_json(e)}}));
  }

  Json calibration = nullptr;
  if (const auto& c = pipeline_.calibration()) {
    calibration = Json{{"gain", c->gain}, {"bias", c->bias}, {"residual_rms", c->residual_rms}};
  }

  Json frame{
      {"type", "frame"},
      {"tick", ticks_},
      {"t", rec.sample.timestamp},
      {"true_depth", rec.true_depth},
      {"raw_depth", number_or_null(p.raw.depth)},
      {"raw_validity", to_string(p.raw.validity)},
      {"filtered_depth", number_or_null(p.corrected.depth)},
      {"filtered_vergence", number_or_null(p.corrected.vergence)},
      {"quality", to_string(p.corrected.quality)},
      {"rejected", p.corrected.rejected},
      {"current_layer", layers[state.current_layer].id},
      {"pending_layer", state.pending ? Json(layers[state.pending->target_layer].id) : Json(nullptr)},
      {"switch_count", state.switch_count},
      {"cue_opacity", cue_opacity(state.switch_count, pipeline_.n_familiar())},
      {"cue_visible", state.cue_visible},
      {"events", events},
      {"controls",
       Json{{"target_vergence", controls_.target_vergence},
            {"scenario", controls_.scenario},
            {"noise_sigma", controls_.noise_sigma},
            {"outlier_prob", controls_.outlier_prob},
            {"blink_prob_per_s", controls_.blink_prob_per_s},
            {"hover", optional_json(controls_.hover)}}},
      {"calibration", calibration},
  };
  out.push_back(finish(std::move(frame)));
  ++ticks_;
  return out;
}

// --- transport -------------------------------------------------------------

std::string websocket_accept_key(std::string_view client_key) {
  static constexpr std::string_view kGuid = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
  std::string joined(client_key);
  joined += kGuid;
  std::array<unsigned char, SHA_DIGEST_LENGTH> digest{};
  SHA1(reinterpret_cast<const unsigned char*>(joined.data()), joined.size(), digest.data());
  std::array<unsigned char, 4 * ((SHA_DIGEST_LENGTH + 2) / 3) + 1> encoded{};
  const int n = EVP_EncodeBlock(encoded.data(), digest.data(), SHA_DIGEST_LENGTH);
  return std::string(reinterpret_cast<const char*>(encoded.data()), static_cast<std::size_t>(n));
}

namespace {

class Socket {
 public:
  explicit Socket(int fd) : fd_(fd) {}
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() {
    if (fd_ >= 0) ::close(fd_);
  }
  int fd() const { return fd_; }

 private:
  int fd_;
};

bool send_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n <= 0) return false;
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

/// One client connection. The reader thread fills `inbox`; the tick loop
/// drains it and writes replies, so the session state has a single owner.
class Connection {
 public:
  explicit Connection(int fd) : fd_(fd) {}

  // Decides the transport: an HTTP upgrade request within the first 200 ms
  // makes this a WebSocket, anything else (or silence) raw newline text.
  bool open() {
    pollfd pfd{fd_, POLLIN, 0};
    if (::poll(&pfd, 1, 200) > 0 && (pfd.revents & POLLIN)) {
      std::array<char, 4> head{};
      const ssize_t n = ::recv(fd_, head.data(), head.size(), MSG_PEEK);
      if (n == 4 && std::string_view(head.data(), 4) == "GET ") return handshake();
    }
    return true;
  }

  bool send(const std::string& message) {
    std::lock_guard lock(write_mutex_);
    if (!websocket_) return send_all(fd_, message + "\n");
    return send_all(fd_, frame(0x1, message));
  }

  void read_loop() {
    if (websocket_) {
      read_websocket();
    } else {
      read_lines();
    }
    closed_ = true;
  }

  bool closed() const { return closed_; }

  std::vector<std::string> take_inbox() {
    std::lock_guard lock(inbox_mutex_);
    std::vector<std::string> out(inbox_.begin(), inbox_.end());
    inbox_.clear();
    return out;
  }

 private:
  static std::string frame(unsigned char opcode, std::string_view payload) {
    std::string out;
    out.push_back(static_cast<char>(0x80 | opcode));
    const std::size_t len = payload.size();
    if (len < 126) {
      out.push_back(static_cast<char>(len));
    } else if (len <= 0xFFFF) {
      out.push_back(static_cast<char>(126));
      out.push_back(static_cast<char>((len >> 8) & 0xFF));
      out.push_back(static_cast<char>(len & 0xFF));
    } else {
      out.push_back(static_cast<char>(127));
      for (int shift = 56; shift >= 0; shift -= 8) out.push_back(static_cast<char>((len >> shift) & 0xFF));
    }
    out.append(payload);
    return out;
  }

  void push_lines(std::string_view text) {
    std::lock_guard lock(inbox_mutex_);
    while (!text.empty()) {
      const auto nl = text.find('\n');
      std::string_view line = text.substr(0, nl);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (!line.empty()) inbox_.emplace_back(line);
      if (nl == std::string_view::npos) break;
      text.remove_prefix(nl + 1);
    }
  }

  // Reads into `buffer_` until it holds at least `n` bytes.
  bool fill(std::size_t n) {
    std::array<char, 4096> chunk{};
    while (buffer_.size() < n) {
      const ssize_t got = ::recv(fd_, chunk.data(), chunk.size(), 0);
      if (got <= 0) return false;
      buffer_.append(chunk.data(), static_cast<std::size_t>(got));
    }
    return true;
  }

  bool handshake() {
    std::size_t end;
    while ((end = buffer_.find("\r\n\r\n")) == std::string::npos) {
      if (buffer_.size() > 16384 || !fill(buffer_.size() + 1)) return false;
    }
    const std::string request = buffer_.substr(0, end + 2);
    buffer_.erase(0, end + 4);

    std::string key;
    std::size_t pos = 0;
    while (pos < request.size()) {
      const auto eol = request.find("\r\n", pos);
      std::string line = request.substr(pos, eol - pos);
      pos = eol == std::string::npos ? request.size() : eol + 2;
      const auto colon = line.find(':');
      if (colon == std::string::npos) continue;
      std::string name = line.substr(0, colon);
      std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
      if (name == "sec-websocket-key") {
        key = line.substr(colon + 1);
        key.erase(0, key.find_first_not_of(" \t"));
        key.erase(key.find_last_not_of(" \t") + 1);
      }
    }
    if (key.empty()) {
      send_all(fd_, "HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
      return false;
    }
    websocket_ = true;
    return send_all(fd_, "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\n"
                         "Connection: Upgrade\r\nSec-WebSocket-Accept: " +
                             websocket_accept_key(key) + "\r\n\r\n");
  }

  void read_lines() {
    std::string pending;
    std::array<char, 4096> chunk{};
    for (;;) {
      const ssize_t got = ::recv(fd_, chunk.data(), chunk.size(), 0);
      if (got <= 0) return;
      pending.append(chunk.data(), static_cast<std::size_t>(got));
      const auto last_nl = pending.rfind('\n');
      if (last_nl == std::string::npos) continue;
      push_lines(std::string_view(pending).substr(0, last_nl + 1));
      pending.erase(0, last_nl + 1);
    }
  }

  void read_websocket() {
    std::string message;
    for (;;) {
      if (!fill(2)) return;
      const auto b0 = static_cast<unsigned char>(buffer_[0]);
      const auto b1 = static_cast<unsigned char>(buffer_[1]);
      const bool fin = b0 & 0x80;
      const unsigned opcode = b0 & 0x0F;
      const bool masked = b1 & 0x80;
      std::uint64_t len = b1 & 0x7F;
      std::size_t header = 2;
      if (len == 126) {
        if (!fill(4)) return;
        len = (static_cast<std::uint64_t>(static_cast<unsigned char>(buffer_[2])) << 8) |
              static_cast<unsigned char>(buffer_[3]);
        header = 4;
      } else if (len == 127) {
        if (!fill(10)) return;
        len = 0;
        for (int i = 0; i < 8; ++i) len = (len << 8) | static_cast<unsigned char>(buffer_[2 + i]);
        header = 10;
      }
      if (len > (1u << 20)) return;
      const std::size_t mask_at = header;
      if (masked) header += 4;
      if (!fill(header + len)) return;

      std::string payload = buffer_.substr(header, len);
      if (masked) {
        for (std::size_t i = 0; i < payload.size(); ++i) payload[i] ^= buffer_[mask_at + (i % 4)];
      }
      buffer_.erase(0, header + len);

      if (opcode == 0x8) {
        std::lock_guard lock(write_mutex_);
        send_all(fd_, frame(0x8, ""));
        return;
      }
      if (opcode == 0x9) {
        std::lock_guard lock(write_mutex_);
        send_all(fd_, frame(0xA, payload));
        continue;
      }
      if (opcode == 0xA) continue;
      message += payload;
      if (fin) {
        push_lines(message);
        message.clear();
      }
    }
  }

  int fd_;
  bool websocket_ = false;
  std::atomic<bool> closed_ = false;
  std::string buffer_;
  std::mutex write_mutex_;
  std::mutex inbox_mutex_;
  std::deque<std::string> inbox_;
};

bool stop_requested(const ServeOptions& options) {
  return options.stop && options.stop->load();
}

void run_connection(int fd, const ServeOptions& options, const ConfigBundle& bundle,
                    const NoiseModel& noise) {
  Connection conn(fd);
  if (!conn.open()) return;

  SessionEngine engine(bundle, noise);
  std::thread reader([&conn] { conn.read_loop(); });

  const double rate = options.tick_rate > 0.0 ? options.tick_rate : bundle.sample_rate;
  const auto period = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(1.0 / rate));
  auto next = std::chrono::steady_clock::now();
  bool alive = true;
  while (alive && !conn.closed() && !stop_requested(options)) {
    for (const auto& line : conn.take_inbox()) {
      for (const auto& reply : engine.handle(line)) alive = alive && conn.send(reply);
    }
    for (const auto& out : engine.tick()) alive = alive && conn.send(out);
    next += period;
    std::this_thread::sleep_until(next);
  }

  ::shutdown(fd, SHUT_RDWR);
  reader.join();
}

}  // namespace

void serve_session(const ServeOptions& options, const ConfigBundle& bundle, const NoiseModel& noise) {
  // Fail early on a bad bundle rather than on the first connection.
  { SessionEngine probe(bundle, noise); }

  Socket listener(::socket(AF_INET, SOCK_STREAM, 0));
  if (listener.fd() < 0) throw Error(ErrorCode::Io, "cannot create socket");
  int yes = 1;
  ::setsockopt(listener.fd(), SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(options.port);
  if (::inet_pton(AF_INET, options.host.c_str(), &addr.sin_addr) != 1) {
    throw Error(ErrorCode::Io, fmt::format("bad listen address '{}'", options.host));
  }
  if (::bind(listener.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    throw Error(ErrorCode::Io, fmt::format("cannot bind {}:{}: {}", options.host, options.port,
                                           std::strerror(errno)));
  }
  if (::listen(listener.fd(), 4) != 0) throw Error(ErrorCode::Io, "listen failed");

  socklen_t len = sizeof addr;
  ::getsockname(listener.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
  const std::uint16_t bound = ntohs(addr.sin_port);
  if (options.log) *options.log << fmt::format("listening on {}:{}\n", options.host, bound) << std::flush;
  if (options.on_listening) options.on_listening(bound);

  std::size_t sessions = 0;
  while (!stop_requested(options)) {
    pollfd pfd{listener.fd(), POLLIN, 0};
    if (::poll(&pfd, 1, 100) <= 0) continue;
    Socket client(::accept(listener.fd(), nullptr, nullptr));
    if (client.fd() < 0) continue;
    int nodelay = 1;
    ::setsockopt(client.fd(), IPPROTO_TCP, TCP_NODELAY, &nodelay, sizeof nodelay);
    if (options.log) *options.log << "session started\n" << std::flush;
    run_connection(client.fd(), options, bundle, noise);
    if (options.log) *options.log << "session ended\n" << std::flush;
    if (options.max_sessions != 0 && ++sessions >= options.max_sessions) break;
  }
}

}  // namespace gazedepth
