#pragma once

#include "gazedepth/geometry.hpp"

namespace gazedepth {

/// Anything that can show the user a fixation target and report gaze: the
/// synthetic eye simulator, or a recorded/real tracker behind an adapter.
class GazeSource {
 public:
  virtual ~GazeSource() = default;

  /// Places the fixation target at `depth` meters straight ahead.
  virtual void present_target(double depth) = 0;
  /// Next tracker sample; timestamps are non-decreasing.
  virtual GazeSample next() = 0;
  virtual double sample_rate() const = 0;
};

}  // namespace gazedepth
