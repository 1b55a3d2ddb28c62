// SPDX-License-Identifier: Apache-2.0

#include "lem/data/features.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "lem/util/errors.hpp"

namespace lem::data {

namespace {

constexpr std::int64_t kSecondsPerDay = 86400;

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) {
    --q;
  }
  return q;
}

}  // namespace

SeasonalMode parse_seasonal_mode(const std::string& s) {
  if (s == "intraday") {
    return SeasonalMode::kIntraday;
  }
  if (s == "calendar") {
    return SeasonalMode::kCalendar;
  }
  throw ValidationError(fmt::format("unknown seasonal_mode '{}'", s));
}

std::string to_string(SeasonalMode m) {
  return m == SeasonalMode::kIntraday ? "intraday" : "calendar";
}

void FeatureSpec::validate() const {
  if (lookback < 1) {
    throw ValidationError("features.lookback must be >= 1");
  }
  if (horizon < 2) {
    throw ValidationError("features.horizon must be >= 2");
  }
  if (normalization_window < 1) {
    throw ValidationError("features.normalization_window must be >= 1");
  }
  if (!(frequency_tag >= 0.0 && frequency_tag <= 1.0)) {
    throw ValidationError("frequency_tag must lie in [0, 1]");
  }
  if (!(return_scale > 0.0)) {
    throw ValidationError("features.return_scale must be positive");
  }
}

NormalizedVolume normalize_volumes(const CandleSeries& c, const FeatureSpec& spec) {
  const std::size_t n = c.size();
  const std::size_t s = spec.total_steps();
  const std::size_t w = spec.normalization_window;
  NormalizedVolume out;
  out.value.assign(n, 0.0);
  out.usable.assign(n, 0);
  const std::size_t first = s + w - 1;
  if (n <= first) {
    return out;
  }
  for (std::size_t t = first; t < n; ++t) {
    const std::size_t hi = t - s;
    double window_sum = 0.0;
    for (std::size_t k = hi + 1 - w; k <= hi; ++k) {
      window_sum += c.volume[k];
    }
    const double mean = window_sum / static_cast<double>(w);
    if (mean > 0.0) {
      out.value[t] = c.volume[t] / mean;
      out.usable[t] = 1;
    }
  }
  return out;
}

std::array<double, 4> seasonal_features(std::int64_t ts, SeasonalMode mode) {
  using namespace std::chrono;
  const double two_pi = 2.0 * std::numbers::pi;
  const std::int64_t days = floor_div(ts, kSecondsPerDay);
  const std::int64_t sec_of_day = ts - days * kSecondsPerDay;
  // 1970-01-01 was a Thursday; Monday is day 0.
  const std::int64_t dow = ((days + 3) % 7 + 7) % 7;
  const double dow_phase = two_pi * static_cast<double>(dow) / 7.0;
  if (mode == SeasonalMode::kIntraday) {
    const double hod_phase =
        two_pi * static_cast<double>(sec_of_day) / static_cast<double>(kSecondsPerDay);
    return {std::sin(hod_phase), std::cos(hod_phase), std::sin(dow_phase), std::cos(dow_phase)};
  }
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  const double month_phase = two_pi * static_cast<double>(unsigned(ymd.month()) - 1) / 12.0;
  return {std::sin(dow_phase), std::cos(dow_phase), std::sin(month_phase),
          std::cos(month_phase)};
}

WindowSet make_window_set(std::size_t steps, std::size_t channels, std::size_t horizon) {
  WindowSet w;
  w.steps = steps;
  w.channels = channels;
  w.horizon = horizon;
  return w;
}

void WindowSet::append(const WindowSet& other) {
  if (other.empty()) {
    return;
  }
  if (empty() && steps == 0) {
    steps = other.steps;
    channels = other.channels;
    horizon = other.horizon;
  }
  if (other.steps != steps || other.channels != channels || other.horizon != horizon) {
    throw ShapeError(fmt::format("window shape mismatch: T={} D={} N={} vs T={} D={} N={}",
                                 steps, channels, horizon, other.steps, other.channels,
                                 other.horizon));
  }
  features.insert(features.end(), other.features.begin(), other.features.end());
  target_prices.insert(target_prices.end(), other.target_prices.begin(),
                       other.target_prices.end());
  target_volumes.insert(target_volumes.end(), other.target_volumes.begin(),
                        other.target_volumes.end());
  asset_ids.insert(asset_ids.end(), other.asset_ids.begin(), other.asset_ids.end());
  start_ts.insert(start_ts.end(), other.start_ts.begin(), other.start_ts.end());
  frequency_tags.insert(frequency_tags.end(), other.frequency_tags.begin(),
                        other.frequency_tags.end());
}

WindowSet WindowSet::subset(const std::vector<std::size_t>& indices) const {
  WindowSet out = make_window_set(steps, channels, horizon);
  const std::size_t fs = feature_stride();
  out.features.reserve(indices.size() * fs);
  out.target_prices.reserve(indices.size() * horizon);
  out.target_volumes.reserve(indices.size() * horizon);
  for (std::size_t i : indices) {
    if (i >= size()) {
      throw std::out_of_range("window index out of range");
    }
    out.features.insert(out.features.end(), features.begin() + i * fs,
                        features.begin() + (i + 1) * fs);
    out.target_prices.insert(out.target_prices.end(), target_prices.begin() + i * horizon,
                             target_prices.begin() + (i + 1) * horizon);
    out.target_volumes.insert(out.target_volumes.end(), target_volumes.begin() + i * horizon,
                              target_volumes.begin() + (i + 1) * horizon);
    out.asset_ids.push_back(asset_ids[i]);
    out.start_ts.push_back(start_ts[i]);
    out.frequency_tags.push_back(frequency_tags[i]);
  }
  return out;
}

void WindowSet::validate() const {
  const std::size_t n = size();
  if (features.size() != n * feature_stride() || target_prices.size() != n * horizon ||
      target_volumes.size() != n * horizon || asset_ids.size() != n ||
      frequency_tags.size() != n) {
    throw ShapeError("window set arrays have inconsistent lengths");
  }
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (!std::isfinite(features[i])) {
      throw ValidationError(fmt::format("non-finite feature in window {}", i / feature_stride()));
    }
  }
  for (std::size_t i = 0; i < target_prices.size(); ++i) {
    if (!(target_prices[i] > 0.0) || !std::isfinite(target_prices[i])) {
      throw ValidationError(fmt::format("non-positive target price in window {}", i / horizon));
    }
    if (!(target_volumes[i] >= 0.0) || !std::isfinite(target_volumes[i])) {
      throw ValidationError(fmt::format("negative target volume in window {}", i / horizon));
    }
  }
}

WindowSet build_features(const CandleSeries& c, const FeatureSpec& spec) {
  spec.validate();
  const std::size_t T = spec.total_steps();
  const std::size_t L = spec.lookback;
  const std::size_t N = spec.horizon;
  const std::size_t D = kFeatureCount;
  WindowSet out = make_window_set(T, D, N);

  const auto vwap = bar_vwap(c);
  const auto norm = normalize_volumes(c, spec);
  const std::size_t n = c.size();

  std::vector<std::array<double, 4>> season(n);
  for (std::size_t t = 0; t < n; ++t) {
    season[t] = seasonal_features(c.timestamps[t], spec.seasonal);
  }

  // run_length[t]: number of consecutive usable positions ending at t.
  std::size_t run = 0;
  for (std::size_t t = 0; t < n; ++t) {
    run = norm.usable[t] ? run + 1 : 0;
    if (run < T) {
      continue;
    }
    const std::size_t start = t + 1 - T;
    const std::size_t base = out.features.size();
    out.features.resize(base + T * D);
    double* f = out.features.data() + base;
    for (std::size_t k = 0; k < T; ++k) {
      const std::size_t p = start + k;
      double* row = f + k * D;
      row[kReturn] = k == 0 ? 0.0 : (vwap[p] / vwap[p - 1] - 1.0) * spec.return_scale;
      row[kNormVolume] = norm.value[p];
      row[kSeasonASin] = season[p][0];
      row[kSeasonACos] = season[p][1];
      row[kSeasonBSin] = season[p][2];
      row[kSeasonBCos] = season[p][3];
      row[kFrequencyTag] = spec.frequency_tag;
      row[kHorizonFlag] = k >= L ? 1.0 : 0.0;
    }
    for (std::size_t h = 0; h < N; ++h) {
      out.target_prices.push_back(vwap[start + L + h]);
      out.target_volumes.push_back(norm.value[start + L + h]);
    }
    out.asset_ids.push_back(c.asset_id);
    out.start_ts.push_back(c.timestamps[start]);
    out.frequency_tags.push_back(spec.frequency_tag);
  }
  return out;
}

}  // namespace lem::data
