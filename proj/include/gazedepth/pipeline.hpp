#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "gazedepth/calibration.hpp"
#include "gazedepth/filtering.hpp"
#include "gazedepth/geometry.hpp"
#include "gazedepth/interaction.hpp"
#include "gazedepth/simulator.hpp"

namespace gazedepth {

/// Everything needed to run the chain geometry -> filter -> calibration ->
/// state machine, plus the simulated user feeding it.
struct ConfigBundle {
  GeometryConfig geometry;
  FilterConfig filter;
  std::vector<double> layer_depths{2.0, 0.5};
  double dwell = 0.15;
  double hysteresis_fraction = 0.2;
  std::size_t n_familiar = kDefaultFamiliarSwitches;
  std::optional<CalibrationModel> calibration;
  EyeModel eye;
  double sample_rate = 120.0;

  LayerConfig layer_config() const {
    return configure_layers(layer_depths, dwell, hysteresis_fraction);
  }
};

struct PipelineTick {
  DepthEstimate raw;
  FilteredDepth filtered;   // straight from the filter
  FilteredDepth corrected;  // after the calibration model, fed to the state machine
  std::vector<InteractionEvent> events;
};

class Pipeline {
 public:
  explicit Pipeline(const ConfigBundle& bundle);

  PipelineTick process(const GazeSample& sample,
                       std::optional<std::string_view> hover = std::nullopt);

  /// Clears the filter and the state machine (back to the portal layer).
  /// The switch count survives unless `forget_familiarity` is set, since it
  /// tracks how used the person is to the technique.
  void reset(bool forget_familiarity = false);

  void set_calibration(std::optional<CalibrationModel> model) { calibration_ = std::move(model); }
  const std::optional<CalibrationModel>& calibration() const noexcept { return calibration_; }

  InteractionState& interaction() noexcept { return state_; }
  const InteractionState& interaction() const noexcept { return state_; }
  const LayerConfig& layers() const noexcept { return layers_; }
  const GeometryConfig& geometry() const noexcept { return geometry_; }
  std::size_t n_familiar() const noexcept { return n_familiar_; }

 private:
  GeometryConfig geometry_;
  DepthFilter filter_;
  LayerConfig layers_;
  std::size_t n_familiar_;
  std::optional<CalibrationModel> calibration_;
  InteractionState state_;
};

}  // namespace gazedepth
