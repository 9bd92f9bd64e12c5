#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <string_view>

#include "gazedepth/geometry.hpp"

namespace gazedepth {

struct FilterConfig {
  std::size_t window = 11;          // odd, >= 3
  double hampel_k = 3.0;            // MAD multiplier
  double ema_alpha = 0.3;           // (0, 1]
  double min_valid_fraction = 0.5;  // (0, 1]

  void validate() const;
};

enum class Quality { Settled, Warmup, Degraded };

std::string_view to_string(Quality q) noexcept;
std::optional<Quality> quality_from_string(std::string_view s) noexcept;

/// De-noised output. `vergence` and `depth` are NaN until the first valid
/// sample has been accepted since the last reset.
struct FilteredDepth {
  double timestamp = 0.0;
  double vergence = 0.0;  // diopters
  double depth = 0.0;     // meters, 1/vergence
  Quality quality = Quality::Warmup;
  bool rejected = false;  // incoming sample was replaced by the window median
};

/// Streaming de-noiser in diopter space: validity gate, Hampel (median/MAD)
/// rejection over the last `window` samples, then an exponential moving
/// average. Single owner; one instance per gaze stream.
class DepthFilter {
 public:
  /// Scale factor turning a MAD into a Gaussian-consistent sigma.
  static constexpr double kMadScale = 1.4826;
  /// Lower bound on the Hampel scale, diopters. Applies whenever the window
  /// MAD collapses (for example a constant stream).
  static constexpr double kScaleFloor = 0.05;

  explicit DepthFilter(FilterConfig config = {});

  /// Throws Error(StreamOrder) when the timestamp goes backwards.
  FilteredDepth push(const DepthEstimate& estimate);
  void reset();

  const FilterConfig& config() const noexcept { return config_; }
  std::size_t samples_seen() const noexcept { return samples_seen_; }
  std::optional<double> ema() const noexcept { return ema_; }
  std::size_t buffered() const noexcept { return window_.size(); }

 private:
  struct Entry {
    double timestamp;
    double vergence;
    bool valid;
  };

  Quality current_quality() const;

  FilterConfig config_;
  std::deque<Entry> window_;
  std::optional<double> ema_;
  std::size_t samples_seen_ = 0;
  std::optional<double> last_timestamp_;
};

}  // namespace gazedepth
