// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lem/data/candles.hpp"

namespace lem::data {

enum class SeasonalMode { kIntraday, kCalendar };

SeasonalMode parse_seasonal_mode(const std::string& s);
std::string to_string(SeasonalMode m);

struct FeatureSpec {
  std::size_t lookback{48};
  std::size_t horizon{12};
  std::size_t normalization_window{336};
  SeasonalMode seasonal{SeasonalMode::kIntraday};
  double frequency_tag{0.0};
  // Bar returns are multiplied by this before entering the feature block.
  double return_scale{100.0};

  std::size_t total_steps() const { return lookback + horizon; }
  void validate() const;
};

// Feature channel layout of every window.
enum Channel : std::size_t {
  kReturn = 0,
  kNormVolume = 1,
  kSeasonASin = 2,
  kSeasonACos = 3,
  kSeasonBSin = 4,
  kSeasonBCos = 5,
  kFrequencyTag = 6,
  kHorizonFlag = 7,
};
inline constexpr std::size_t kFeatureCount = 8;

struct NormalizedVolume {
  std::vector<double> value;
  std::vector<std::uint8_t> usable;
};

// volume[t] / mean(volume[t-s-W+1 .. t-s]) with s = L + N. Positions without
// a full history window, or whose window mean is zero, are unusable.
NormalizedVolume normalize_volumes(const CandleSeries& c, const FeatureSpec& spec);

// Two sin/cos pairs: (hour-of-day, day-of-week) or (day-of-week, month).
std::array<double, 4> seasonal_features(std::int64_t ts, SeasonalMode mode);

// Fixed-shape windows: features [count x T x D], targets [count x N].
struct WindowSet {
  std::size_t steps{0};
  std::size_t channels{0};
  std::size_t horizon{0};
  std::vector<double> features;
  std::vector<double> target_prices;
  std::vector<double> target_volumes;
  std::vector<std::string> asset_ids;
  std::vector<std::int64_t> start_ts;
  std::vector<double> frequency_tags;

  std::size_t size() const { return start_ts.size(); }
  bool empty() const { return start_ts.empty(); }
  std::size_t feature_stride() const { return steps * channels; }

  void append(const WindowSet& other);
  WindowSet subset(const std::vector<std::size_t>& indices) const;
  // Throws ValidationError on non-finite features or non-positive prices.
  void validate() const;
};

WindowSet make_window_set(std::size_t steps, std::size_t channels, std::size_t horizon);

WindowSet build_features(const CandleSeries& c, const FeatureSpec& spec);

}  // namespace lem::data
