// SPDX-License-Identifier: Apache-2.0

#include "lem/data/dataset.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "lem/util/errors.hpp"
#include "lem/util/rng.hpp"

namespace lem::data {

static_assert(std::endian::native == std::endian::little,
              "window files are written in host byte order");

Splits split_dataset(const WindowSet& windows, std::int64_t val_ts, std::int64_t test_ts) {
  if (!(val_ts < test_ts)) {
    throw ValidationError(fmt::format("validation date {} must precede test date {}",
                                      format_date(val_ts), format_date(test_ts)));
  }
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> val_idx;
  std::vector<std::size_t> test_idx;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const std::int64_t ts = windows.start_ts[i];
    if (ts >= test_ts) {
      test_idx.push_back(i);
    } else if (ts >= val_ts) {
      val_idx.push_back(i);
    } else {
      train_idx.push_back(i);
    }
  }
  Splits s;
  s.train = windows.subset(train_idx);
  s.validation = windows.subset(val_idx);
  s.test = windows.subset(test_idx);
  if (s.train.empty()) {
    s.warnings.push_back("training split is empty");
  }
  if (s.validation.empty()) {
    s.warnings.push_back("validation split is empty");
  }
  if (s.test.empty()) {
    s.warnings.push_back("test split is empty");
  }
  return s;
}

std::int64_t parse_date(const std::string& s) {
  using namespace std::chrono;
  int y = 0;
  unsigned m = 0;
  unsigned d = 0;
  char tail = 0;
  if (std::sscanf(s.c_str(), "%d-%u-%u%c", &y, &m, &d, &tail) == 3) {
    const year_month_day ymd{year{y}, month{m}, day{d}};
    if (!ymd.ok()) {
      throw ValidationError(fmt::format("invalid date '{}'", s));
    }
    return sys_days{ymd}.time_since_epoch().count() * std::int64_t{86400};
  }
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos == s.size()) {
      return v;
    }
  } catch (const std::exception&) {
  }
  throw ValidationError(fmt::format("cannot parse date '{}'", s));
}

std::string format_date(std::int64_t ts) {
  using namespace std::chrono;
  const auto days = static_cast<int>(std::floor(static_cast<double>(ts) / 86400.0));
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  const std::int64_t rem = ts - std::int64_t{days} * 86400;
  if (rem == 0) {
    return fmt::format("{:04}-{:02}-{:02}", int(ymd.year()), unsigned(ymd.month()),
                       unsigned(ymd.day()));
  }
  return std::to_string(ts);
}

namespace {

std::int64_t json_date(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) {
    throw ValidationError(fmt::format("manifest is missing '{}'", key));
  }
  const auto& v = j.at(key);
  if (v.is_number_integer()) {
    return v.get<std::int64_t>();
  }
  if (v.is_string()) {
    return parse_date(v.get<std::string>());
  }
  throw ValidationError(fmt::format("manifest '{}' must be a date string or epoch seconds", key));
}

}  // namespace

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError(fmt::format("cannot open manifest {}", path.string()));
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
  }
  Manifest m;
  try {
    for (const auto& a : j.at("assets")) {
      AssetEntry e;
      e.asset_id = a.at("asset_id").get<std::string>();
      e.path = a.at("path").get<std::string>();
      if (e.path.is_relative()) {
        e.path = path.parent_path() / e.path;
      }
      e.frequency_minutes = a.value("frequency_minutes", 1);
      e.frequency_tag =
          a.value("frequency_tag", std::min(1.0, e.frequency_minutes / 1440.0));
      m.assets.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
  }
  if (m.assets.empty()) {
    throw ValidationError(fmt::format("{}: manifest lists no assets", path.string()));
  }
  m.val_ts = json_date(j, "val_date");
  m.test_ts = json_date(j, "test_date");
  return m;
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["assets"] = nlohmann::ordered_json::array();
  for (const auto& a : m.assets) {
    nlohmann::ordered_json e;
    e["asset_id"] = a.asset_id;
    e["path"] = a.path.string();
    e["frequency_minutes"] = a.frequency_minutes;
    e["frequency_tag"] = a.frequency_tag;
    j["assets"].push_back(e);
  }
  j["val_date"] = format_date(m.val_ts);
  j["test_date"] = format_date(m.test_ts);
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  }
  out << j.dump(2) << '\n';
}

namespace {

constexpr char kWindowMagic[8] = {'L', 'E', 'M', 'W', 'I', 'N', '0', '1'};

template <typename V>
void put(std::ofstream& out, const V& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
void put_vec(std::ofstream& out, const std::vector<V>& v) {
  put<std::uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(V)));
}

template <typename V>
V get(std::ifstream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) {
    throw ValidationError("truncated window file");
  }
  return v;
}

template <typename V>
std::vector<V> get_vec(std::ifstream& in) {
  const auto n = get<std::uint64_t>(in);
  if (n > (std::uint64_t{1} << 34)) {
    throw ValidationError("corrupt window file");
  }
  std::vector<V> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(V)));
  if (!in) {
    throw ValidationError("truncated window file");
  }
  return v;
}

}  // namespace

void write_windows(const WindowSet& w, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  }
  out.write(kWindowMagic, sizeof(kWindowMagic));
  put<std::uint64_t>(out, w.steps);
  put<std::uint64_t>(out, w.channels);
  put<std::uint64_t>(out, w.horizon);
  put_vec(out, w.features);
  put_vec(out, w.target_prices);
  put_vec(out, w.target_volumes);
  put_vec(out, w.start_ts);
  put_vec(out, w.frequency_tags);
  put<std::uint64_t>(out, w.asset_ids.size());
  for (const auto& id : w.asset_ids) {
    put<std::uint64_t>(out, id.size());
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
  }
  if (!out) {
    throw std::runtime_error(fmt::format("failed writing {}", path.string()));
  }
}

WindowSet read_windows(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ValidationError(fmt::format("cannot open window file {}", path.string()));
  }
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kWindowMagic, sizeof(magic)) != 0) {
    throw ValidationError(fmt::format("{} is not a window file", path.string()));
  }
  WindowSet w;
  w.steps = get<std::uint64_t>(in);
  w.channels = get<std::uint64_t>(in);
  w.horizon = get<std::uint64_t>(in);
  w.features = get_vec<double>(in);
  w.target_prices = get_vec<double>(in);
  w.target_volumes = get_vec<double>(in);
  w.start_ts = get_vec<std::int64_t>(in);
  w.frequency_tags = get_vec<double>(in);
  const auto n = get<std::uint64_t>(in);
  w.asset_ids.resize(n);
  for (auto& id : w.asset_ids) {
    const auto len = get<std::uint64_t>(in);
    if (len > 4096) {
      throw ValidationError("corrupt window file");
    }
    id.resize(len);
    in.read(id.data(), static_cast<std::streamsize>(len));
  }
  if (!in) {
    throw ValidationError("truncated window file");
  }
  w.validate();
  return w;
}

Regime parse_regime(const std::string& s) {
  if (s == "iid") return Regime::kIid;
  if (s == "trending") return Regime::kTrending;
  if (s == "mean_reverting") return Regime::kMeanReverting;
  if (s == "volume_seasonal") return Regime::kVolumeSeasonal;
  throw ValidationError(fmt::format("unknown regime '{}'", s));
}

std::string to_string(Regime r) {
  switch (r) {
    case Regime::kIid:
      return "iid";
    case Regime::kTrending:
      return "trending";
    case Regime::kMeanReverting:
      return "mean_reverting";
    case Regime::kVolumeSeasonal:
      return "volume_seasonal";
  }
  return "iid";
}

CandleSeries synth_market(std::uint64_t seed, std::size_t n_bars, Regime regime,
                          const SynthOptions& opt) {
  Rng rng(seed);
  CandleSeries c;
  c.asset_id = opt.asset_id;
  c.frequency_minutes = opt.frequency_minutes;
  c.reserve(n_bars);
  const std::int64_t step = std::int64_t{opt.frequency_minutes} * 60;

  double log_level = std::log(opt.start_price);
  double deviation = 0.0;
  double prev_close = opt.start_price;
  for (std::size_t i = 0; i < n_bars; ++i) {
    const std::int64_t ts = opt.start_ts + static_cast<std::int64_t>(i) * step;
    switch (regime) {
      case Regime::kIid:
      case Regime::kVolumeSeasonal:
        log_level += opt.return_vol * rng.normal();
        break;
      case Regime::kTrending:
        log_level += opt.drift + opt.return_vol * rng.normal();
        break;
      case Regime::kMeanReverting:
        log_level += opt.level_vol * rng.normal();
        deviation = opt.reversion * deviation + opt.return_vol * rng.normal();
        break;
    }
    const double vwap = std::exp(log_level + deviation);

    double volume_mean = opt.base_volume;
    if (regime == Regime::kVolumeSeasonal) {
      const double frac =
          static_cast<double>(((ts % 86400) + 86400) % 86400) / 86400.0;
      const double u = 2.0 * frac - 1.0;
      volume_mean *= 1.0 + opt.seasonal_amplitude * u * u;
    }
    const double noise = opt.volume_noise;
    const double volume = volume_mean * std::exp(noise * rng.normal() - 0.5 * noise * noise);

    const double open = prev_close;
    const double close = vwap * std::exp(0.25 * opt.return_vol * rng.normal());
    const double wick = 0.25 * opt.return_vol;
    const double high = std::max({open, close, vwap}) * (1.0 + wick * std::abs(rng.normal()));
    const double low = std::min({open, close, vwap}) * (1.0 - wick * std::abs(rng.normal()));
    c.push_back(ts, open, high, low, close, volume, volume * vwap);
    prev_close = close;
  }
  return c;
}

}  // namespace lem::data
