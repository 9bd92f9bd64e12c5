#include "gazedepth/filtering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <fmt/format.h>

#include "gazedepth/error.hpp"

namespace gazedepth {
namespace {

double median_of(std::vector<double>& values) {
  const std::size_t n = values.size();
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(values.begin(), mid, values.end());
  double hi = *mid;
  if (n % 2 == 1) return hi;
  double lo = *std::max_element(values.begin(), mid);
  return 0.5 * (lo + hi);
}

}  // namespace

void FilterConfig::validate() const {
  if (window < 3 || window % 2 == 0) {
    throw Error(ErrorCode::BadConfig, fmt::format("window must be odd and >= 3, got {}", window));
  }
  if (!(hampel_k > 0.0)) throw Error(ErrorCode::BadConfig, "hampel_k must be positive");
  if (!(ema_alpha > 0.0 && ema_alpha <= 1.0)) {
    throw Error(ErrorCode::BadConfig, fmt::format("ema_alpha must lie in (0, 1], got {}", ema_alpha));
  }
  if (!(min_valid_fraction > 0.0 && min_valid_fraction <= 1.0)) {
    throw Error(ErrorCode::BadConfig, "min_valid_fraction must lie in (0, 1]");
  }
}

std::string_view to_string(Quality q) noexcept {
  switch (q) {
    case Quality::Settled: return "Settled";
    case Quality::Warmup: return "Warmup";
    case Quality::Degraded: return "Degraded";
  }
  return "Warmup";
}

std::optional<Quality> quality_from_string(std::string_view s) noexcept {
  for (auto q : {Quality::Settled, Quality::Warmup, Quality::Degraded}) {
    if (to_string(q) == s) return q;
  }
  return std::nullopt;
}

DepthFilter::DepthFilter(FilterConfig config) : config_(config) { config_.validate(); }

void DepthFilter::reset() {
  window_.clear();
  ema_.reset();
  samples_seen_ = 0;
  last_timestamp_.reset();
}

Quality DepthFilter::current_quality() const {
  if (samples_seen_ < config_.window) return Quality::Warmup;
  const auto valid = std::count_if(window_.begin(), window_.end(),
                                   [](const Entry& e) { return e.valid; });
  const double fraction = static_cast<double>(valid) / static_cast<double>(window_.size());
  return fraction < config_.min_valid_fraction ? Quality::Degraded : Quality::Settled;
}

FilteredDepth DepthFilter::push(const DepthEstimate& estimate) {
  if (last_timestamp_ && estimate.timestamp < *last_timestamp_) {
    throw Error(ErrorCode::StreamOrder,
                fmt::format("timestamp {} precedes previous {}", estimate.timestamp, *last_timestamp_));
  }
  last_timestamp_ = estimate.timestamp;
  ++samples_seen_;

  const bool valid = estimate.valid();
  window_.push_back(Entry{estimate.timestamp, estimate.vergence, valid});
  if (window_.size() > config_.window) window_.pop_front();

  FilteredDepth out;
  out.timestamp = estimate.timestamp;

  if (valid) {
    std::vector<double> values;
    values.reserve(window_.size());
    for (const auto& e : window_) {
      if (e.valid) values.push_back(e.vergence);
    }
    const double median = median_of(values);
    for (auto& v : values) v = std::abs(v - median);
    const double mad = median_of(values);
    const double scale = std::max(kMadScale * mad, kScaleFloor);

    double accepted = estimate.vergence;
    if (std::abs(estimate.vergence - median) > config_.hampel_k * scale) {
      accepted = median;
      out.rejected = true;
    }
    // ema + a*(x - ema): identical to a*x + (1-a)*ema but exact on a constant stream.
    ema_ = ema_ ? *ema_ + config_.ema_alpha * (accepted - *ema_) : accepted;
  }

  if (ema_) {
    out.vergence = *ema_;
    out.depth = 1.0 / *ema_;
  } else {
    out.vergence = std::numeric_limits<double>::quiet_NaN();
    out.depth = std::numeric_limits<double>::quiet_NaN();
  }
  out.quality = current_quality();
  return out;
}

}  // namespace gazedepth
