// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lem::data {

// OHLCV bars of one asset at one frequency, timestamps in epoch seconds.
struct CandleSeries {
  std::string asset_id;
  int frequency_minutes{1};
  std::vector<std::int64_t> timestamps;
  std::vector<double> open;
  std::vector<double> high;
  std::vector<double> low;
  std::vector<double> close;
  std::vector<double> volume;
  std::vector<double> quote_volume;

  std::size_t size() const { return timestamps.size(); }
  std::int64_t spacing_seconds() const { return std::int64_t{frequency_minutes} * 60; }
  void reserve(std::size_t n);
  void push_back(std::int64_t ts, double o, double h, double l, double c, double v, double qv);

  // Throws ValidationError / GapError on any broken invariant.
  void validate() const;
};

// Reads `timestamp,open,high,low,close,volume[,quote_volume]`. A missing
// quote_volume column is filled with volume * close.
CandleSeries load_candles(const std::filesystem::path& path, const std::string& asset_id,
                          int frequency_minutes);

void save_candles(const CandleSeries& c, const std::filesystem::path& path);

// quote_volume / volume per bar; zero-volume bars repeat the previous value
// and a leading zero-volume bar uses its close.
std::vector<double> bar_vwap(const CandleSeries& c);

}  // namespace lem::data
