#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gazedepth/filtering.hpp"

namespace gazedepth {

struct Layer {
  std::string id;
  double depth = 0.0;  // meters
};

/// Thresholds between layer i (farther) and layer i + 1 (nearer).
struct Boundary {
  double activate_vergence = 0.0;  // cross upward to move nearer
  double exit_vergence = 0.0;      // cross downward to move farther
};

/// Layers ordered far to near: index 0 is the portal layer, the last one is
/// the detail layer. `boundaries[i]` sits between layers i and i + 1.
struct LayerConfig {
  std::vector<Layer> layers;
  std::vector<Boundary> boundaries;
  double dwell = 0.15;
  double hysteresis_fraction = 0.2;
};

/// Boundary midpoint is the diopter mean of the two layers; the hysteresis
/// band spans `hysteresis_fraction` of their half-separation on each side.
/// Throws BadDepths unless there are >= 2 positive, strictly decreasing depths.
LayerConfig configure_layers(std::vector<Layer> layers, double dwell = 0.15,
                             double hysteresis_fraction = 0.2);
/// Same, with ids "portal", "layer-1", ..., "detail".
LayerConfig configure_layers(std::span<const double> depths, double dwell = 0.15,
                             double hysteresis_fraction = 0.2);

enum class EventKind { HoverEnter, HoverExit, ActivateDetail, ExitDetail, CueShown, CueHidden };

std::string_view to_string(EventKind kind) noexcept;
std::optional<EventKind> event_kind_from_string(std::string_view s) noexcept;

struct InteractionEvent {
  double t = 0.0;
  EventKind kind = EventKind::HoverEnter;
  std::optional<std::string> layer_from;
  std::optional<std::string> layer_to;
  std::optional<std::string> object;

  bool is_switch() const noexcept {
    return kind == EventKind::ActivateDetail || kind == EventKind::ExitDetail;
  }
  friend bool operator==(const InteractionEvent&, const InteractionEvent&) = default;
};

struct PendingSwitch {
  std::size_t target_layer = 0;
  double since = 0.0;  // time of the first sample past the threshold
};

struct InteractionState {
  std::size_t current_layer = 0;
  std::optional<PendingSwitch> pending;
  std::optional<std::string> hover_target;
  std::size_t switch_count = 0;
  Quality last_quality = Quality::Warmup;
  bool cue_visible = false;
  std::optional<std::string> cue_object;
  std::optional<double> last_timestamp;
};

inline constexpr std::size_t kDefaultFamiliarSwitches = 20;

/// Linear fade of the visual cue over successful switches:
/// max(0, 1 - switch_count / n_familiar). Throws BadConfig for n_familiar 0.
double cue_opacity(std::size_t switch_count,
                   std::size_t n_familiar = kDefaultFamiliarSwitches);

/// Advances the depth-switch state machine by one filtered (and calibrated)
/// sample. Switches commit only after the vergence has stayed past a
/// threshold for `dwell` seconds, and never while the input is Warmup or
/// Degraded. At most one boundary is crossed per commit.
/// Throws StreamOrder when timestamps decrease.
std::vector<InteractionEvent> step(InteractionState& state, const LayerConfig& config,
                                   const FilteredDepth& input,
                                   std::optional<std::string_view> hover = std::nullopt,
                                   std::size_t n_familiar = kDefaultFamiliarSwitches);

// Event log: JSON Lines, one object per event with keys in this order:
//   {"t":<number>,"kind":<string>,"layer_from":<string|null>,
//    "layer_to":<string|null>,"object":<string|null>}
std::string event_to_json(const InteractionEvent& event);
InteractionEvent event_from_json(std::string_view line);
void write_event_log(std::ostream& out, std::span<const InteractionEvent> events);

}  // namespace gazedepth
