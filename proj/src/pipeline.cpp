#include "gazedepth/pipeline.hpp"

#include "gazedepth/error.hpp"

namespace gazedepth {

Pipeline::Pipeline(const ConfigBundle& bundle)
    : geometry_(bundle.geometry),
      filter_(bundle.filter),
      layers_(bundle.layer_config()),
      n_familiar_(bundle.n_familiar),
      calibration_(bundle.calibration) {
  geometry_.validate();
  if (n_familiar_ == 0) throw Error(ErrorCode::BadConfig, "n_familiar must be at least 1");
}

PipelineTick Pipeline::process(const GazeSample& sample, std::optional<std::string_view> hover) {
  PipelineTick tick;
  tick.raw = estimate_depth(sample, geometry_);
  tick.filtered = filter_.push(tick.raw);
  tick.corrected = calibration_ ? apply_calibration(*calibration_, tick.filtered) : tick.filtered;
  tick.events = step(state_, layers_, tick.corrected, hover, n_familiar_);
  return tick;
}

void Pipeline::reset(bool forget_familiarity) {
  filter_.reset();
  const std::size_t count = state_.switch_count;
  state_ = InteractionState{};
  if (!forget_familiarity) state_.switch_count = count;
}

}  // namespace gazedepth
