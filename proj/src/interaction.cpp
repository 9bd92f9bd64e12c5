#include "gazedepth/interaction.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "gazedepth/error.hpp"
#include "number_format.hpp"

namespace gazedepth {
namespace {

// Sample clocks are k / rate, so a dwell of exactly N periods can land a few
// ulps short.
constexpr double kDwellEpsilon = 1e-9;

std::string json_string_or_null(const std::optional<std::string>& s) {
  return s ? nlohmann::json(*s).dump() : std::string("null");
}

std::optional<std::string> optional_string(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  return v.get<std::string>();
}

}  // namespace

LayerConfig configure_layers(std::vector<Layer> layers, double dwell, double hysteresis_fraction) {
  if (layers.size() < 2) throw Error(ErrorCode::BadDepths, "need at least two layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!(layers[i].depth > 0.0) || !std::isfinite(layers[i].depth)) {
      throw Error(ErrorCode::BadDepths, fmt::format("layer depth {} is not positive", layers[i].depth));
    }
    if (i > 0 && !(layers[i].depth < layers[i - 1].depth)) {
      throw Error(ErrorCode::BadDepths, "layer depths must be strictly decreasing (far to near)");
    }
  }
  if (!(dwell >= 0.0)) throw Error(ErrorCode::BadConfig, "dwell must be non-negative");
  if (!(hysteresis_fraction >= 0.0 && hysteresis_fraction < 1.0)) {
    throw Error(ErrorCode::BadConfig, "hysteresis_fraction must lie in [0, 1)");
  }

  LayerConfig config;
  config.dwell = dwell;
  config.hysteresis_fraction = hysteresis_fraction;
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    const double far_v = 1.0 / layers[i].depth;
    const double near_v = 1.0 / layers[i + 1].depth;
    const double mid = 0.5 * (far_v + near_v);
    const double band = hysteresis_fraction * (near_v - far_v) / 2.0;
    config.boundaries.push_back(Boundary{mid + band, mid - band});
  }
  config.layers = std::move(layers);
  return config;
}

LayerConfig configure_layers(std::span<const double> depths, double dwell,
                             double hysteresis_fraction) {
  std::vector<Layer> layers;
  for (std::size_t i = 0; i < depths.size(); ++i) {
    std::string id = i == 0 ? "portal"
                   : i + 1 == depths.size() ? "detail"
                                            : fmt::format("layer-{}", i);
    layers.push_back(Layer{std::move(id), depths[i]});
  }
  return configure_layers(std::move(layers), dwell, hysteresis_fraction);
}

std::string_view to_string(EventKind kind) noexcept {
  switch (kind) {
    case EventKind::HoverEnter: return "HoverEnter";
    case EventKind::HoverExit: return "HoverExit";
    case EventKind::ActivateDetail: return "ActivateDetail";
    case EventKind::ExitDetail: return "ExitDetail";
    case EventKind::CueShown: return "CueShown";
    case EventKind::CueHidden: return "CueHidden";
  }
  return "HoverEnter";
}

std::optional<EventKind> event_kind_from_string(std::string_view s) noexcept {
  for (auto k : {EventKind::HoverEnter, EventKind::HoverExit, EventKind::ActivateDetail,
                 EventKind::ExitDetail, EventKind::CueShown, EventKind::CueHidden}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

double cue_opacity(std::size_t switch_count, std::size_t n_familiar) {
  if (n_familiar == 0) throw Error(ErrorCode::BadConfig, "n_familiar must be at least 1");
  return std::max(0.0, 1.0 - static_cast<double>(switch_count) / static_cast<double>(n_familiar));
}

std::vector<InteractionEvent> step(InteractionState& state, const LayerConfig& config,
                                   const FilteredDepth& input,
                                   std::optional<std::string_view> hover,
                                   std::size_t n_familiar) {
  if (state.last_timestamp && input.timestamp < *state.last_timestamp) {
    throw Error(ErrorCode::StreamOrder, fmt::format("timestamp {} precedes previous {}",
                                                    input.timestamp, *state.last_timestamp));
  }
  state.last_timestamp = input.timestamp;
  state.last_quality = input.quality;

  std::vector<InteractionEvent> events;
  const double now = input.timestamp;

  // Hover is supplied by the host scene.
  const std::optional<std::string> hovered = hover ? std::optional<std::string>(*hover) : std::nullopt;
  if (hovered != state.hover_target) {
    if (state.hover_target) {
      events.push_back({now, EventKind::HoverExit, std::nullopt, std::nullopt, state.hover_target});
    }
    if (hovered) {
      events.push_back({now, EventKind::HoverEnter, std::nullopt, std::nullopt, hovered});
    }
    state.hover_target = hovered;
  }

  if (input.quality != Quality::Settled || !std::isfinite(input.vergence)) {
    state.pending.reset();
  } else {
    const std::size_t current = state.current_layer;
    std::optional<std::size_t> target;
    if (current + 1 < config.layers.size() &&
        input.vergence >= config.boundaries[current].activate_vergence) {
      target = current + 1;
    } else if (current > 0 && input.vergence <= config.boundaries[current - 1].exit_vergence) {
      target = current - 1;
    }

    if (!target) {
      state.pending.reset();
    } else {
      if (!state.pending || state.pending->target_layer != *target) {
        state.pending = PendingSwitch{*target, now};
      }
      if (now - state.pending->since >= config.dwell - kDwellEpsilon) {
        const bool nearer = *target > current;
        events.push_back({now, nearer ? EventKind::ActivateDetail : EventKind::ExitDetail,
                          config.layers[current].id, config.layers[*target].id,
                          state.hover_target});
        state.current_layer = *target;
        ++state.switch_count;
        state.pending.reset();
      }
    }
  }

  const bool want_cue = state.hover_target && cue_opacity(state.switch_count, n_familiar) > 0.0;
  if (state.cue_visible && (!want_cue || state.cue_object != state.hover_target)) {
    events.push_back({now, EventKind::CueHidden, std::nullopt, std::nullopt, state.cue_object});
    state.cue_visible = false;
    state.cue_object.reset();
  }
  if (want_cue && !state.cue_visible) {
    events.push_back({now, EventKind::CueShown, std::nullopt, std::nullopt, state.hover_target});
    state.cue_visible = true;
    state.cue_object = state.hover_target;
  }
  return events;
}

std::string event_to_json(const InteractionEvent& e) {
  return fmt::format(R"({{"t":{},"kind":"{}","layer_from":{},"layer_to":{},"object":{}}})",
                     detail::format_double(e.t), to_string(e.kind), json_string_or_null(e.layer_from),
                     json_string_or_null(e.layer_to), json_string_or_null(e.object));
}

InteractionEvent event_from_json(std::string_view line) {
  try {
    const auto j = nlohmann::json::parse(line);
    InteractionEvent e;
    e.t = j.at("t").get<double>();
    const auto kind = event_kind_from_string(j.at("kind").get<std::string>());
    if (!kind) throw Error(ErrorCode::Parse, "unknown event kind");
    e.kind = *kind;
    e.layer_from = optional_string(j, "layer_from");
    e.layer_to = optional_string(j, "layer_to");
    e.object = optional_string(j, "object");
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::Parse, ex.what());
  }
}

void write_event_log(std::ostream& out, std::span<const InteractionEvent> events) {
  for (const auto& e : events) out << event_to_json(e) << '\n';
}

}  // namespace gazedepth
