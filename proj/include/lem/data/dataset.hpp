// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lem/data/features.hpp"

namespace lem::data {

struct Splits {
  WindowSet train;
  WindowSet validation;
  WindowSet test;
  std::vector<std::string> warnings;
};

// A window goes to the latest split whose date is <= its first timestamp.
Splits split_dataset(const WindowSet& windows, std::int64_t val_ts, std::int64_t test_ts);

// Accepts integer epoch seconds or an ISO date "YYYY-MM-DD" (UTC midnight).
std::int64_t parse_date(const std::string& s);
std::string format_date(std::int64_t ts);

struct AssetEntry {
  std::string asset_id;
  std::filesystem::path path;
  int frequency_minutes{1};
  double frequency_tag{0.0};
};

struct Manifest {
  std::vector<AssetEntry> assets;
  std::int64_t val_ts{0};
  std::int64_t test_ts{0};
};

// Relative asset paths resolve against the manifest's directory.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& m, const std::filesystem::path& path);

// Compact little-endian binary container for a WindowSet.
void write_windows(const WindowSet& w, const std::filesystem::path& path);
WindowSet read_windows(const std::filesystem::path& path);

enum class Regime { kIid, kTrending, kMeanReverting, kVolumeSeasonal };

Regime parse_regime(const std::string& s);
std::string to_string(Regime r);

struct SynthOptions {
  std::string asset_id{"SYN"};
  int frequency_minutes{15};
  // Monday 2020-01-06 00:00 UTC
  std::int64_t start_ts{1578268800};
  double start_price{100.0};
  double return_vol{0.002};
  double drift{0.0005};
  double reversion{0.7};
  double level_vol{0.0005};
  double base_volume{1000.0};
  double volume_noise{0.3};
  double seasonal_amplitude{2.0};
};

CandleSeries synth_market(std::uint64_t seed, std::size_t n_bars, Regime regime,
                          const SynthOptions& opt = {});

}  // namespace lem::data
