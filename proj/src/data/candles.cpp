// SPDX-License-Identifier: Apache-2.0

#include "lem/data/candles.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <string_view>

#include <fmt/format.h>
#include <fmt/os.h>

#include "lem/util/errors.hpp"

namespace lem::data {

namespace {

constexpr std::string_view kHeader6 = "timestamp,open,high,low,close,volume";
constexpr std::string_view kHeader7 = "timestamp,open,high,low,close,volume,quote_volume";

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) {
    s.remove_suffix(1);
  }
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
    s.remove_prefix(1);
  }
  return s;
}

template <typename V>
bool parse_field(std::string_view s, V& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') {
    s.remove_prefix(1);
  }
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && !s.empty();
}

std::string format_ts_span(std::int64_t from, std::int64_t to) {
  return from == to ? std::to_string(from) : fmt::format("{}..{}", from, to);
}

}  // namespace

void CandleSeries::reserve(std::size_t n) {
  timestamps.reserve(n);
  open.reserve(n);
  high.reserve(n);
  low.reserve(n);
  close.reserve(n);
  volume.reserve(n);
  quote_volume.reserve(n);
}

void CandleSeries::push_back(std::int64_t ts, double o, double h, double l, double c, double v,
                             double qv) {
  timestamps.push_back(ts);
  open.push_back(o);
  high.push_back(h);
  low.push_back(l);
  close.push_back(c);
  volume.push_back(v);
  quote_volume.push_back(qv);
}

void CandleSeries::validate() const {
  if (frequency_minutes <= 0) {
    throw ValidationError(fmt::format("{}: frequency_minutes must be positive", asset_id));
  }
  const std::size_t n = size();
  if (open.size() != n || high.size() != n || low.size() != n || close.size() != n ||
      volume.size() != n || quote_volume.size() != n) {
    throw ValidationError(fmt::format("{}: column lengths differ", asset_id));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const bool prices_ok = open[i] > 0 && high[i] > 0 && low[i] > 0 && close[i] > 0 &&
                           std::isfinite(open[i]) && std::isfinite(high[i]) &&
                           std::isfinite(low[i]) && std::isfinite(close[i]);
    if (!prices_ok) {
      throw ValidationError(fmt::format("{}: non-positive price at bar {}", asset_id, i));
    }
    if (!(volume[i] >= 0) || !(quote_volume[i] >= 0) || !std::isfinite(volume[i]) ||
        !std::isfinite(quote_volume[i])) {
      throw ValidationError(fmt::format("{}: negative volume at bar {}", asset_id, i));
    }
  }
  const std::int64_t step = spacing_seconds();
  std::vector<std::string> gaps;
  for (std::size_t i = 1; i < n; ++i) {
    const std::int64_t d = timestamps[i] - timestamps[i - 1];
    if (d <= 0) {
      throw ValidationError(
          fmt::format("{}: timestamps not increasing at bar {}", asset_id, i));
    }
    if (d % step != 0) {
      throw ValidationError(fmt::format("{}: irregular spacing {}s at bar {}", asset_id, d, i));
    }
    if (d != step) {
      gaps.push_back(format_ts_span(timestamps[i - 1] + step, timestamps[i] - step));
    }
  }
  if (!gaps.empty()) {
    std::string list;
    for (std::size_t i = 0; i < gaps.size(); ++i) {
      list += (i ? ", " : "") + gaps[i];
    }
    throw GapError(fmt::format("{}: missing bars {}", asset_id, list));
  }
}

CandleSeries load_candles(const std::filesystem::path& path, const std::string& asset_id,
                          int frequency_minutes) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError(fmt::format("cannot open candle file {}", path.string()));
  }
  const std::string source = path.string();
  std::string line;
  if (!std::getline(in, line)) {
    throw ParseError(source, 1, "empty file");
  }
  const std::string_view header = trim(line);
  bool has_quote = false;
  if (header == kHeader7) {
    has_quote = true;
  } else if (header != kHeader6) {
    throw ParseError(source, 1, fmt::format("unexpected header '{}'", header));
  }
  const std::size_t columns = has_quote ? 7 : 6;

  CandleSeries c;
  c.asset_id = asset_id;
  c.frequency_minutes = frequency_minutes;
  const std::int64_t step = std::int64_t{frequency_minutes} * 60;
  std::size_t line_no = 1;
  std::vector<std::string> gaps;
  std::string_view fields[7];
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view row = trim(line);
    if (row.empty()) {
      continue;
    }
    std::size_t count = 0;
    while (true) {
      const auto comma = row.find(',');
      if (count == 7) {
        throw ParseError(source, line_no, "too many fields");
      }
      fields[count++] = row.substr(0, comma);
      if (comma == std::string_view::npos) {
        break;
      }
      row.remove_prefix(comma + 1);
    }
    if (count != columns) {
      throw ParseError(source, line_no,
                       fmt::format("expected {} fields, found {}", columns, count));
    }
    std::int64_t ts = 0;
    if (!parse_field(fields[0], ts)) {
      throw ParseError(source, line_no, fmt::format("bad timestamp '{}'", fields[0]));
    }
    double v[6] = {0, 0, 0, 0, 0, 0};
    for (std::size_t k = 1; k < columns; ++k) {
      if (!parse_field(fields[k], v[k - 1]) || !std::isfinite(v[k - 1])) {
        throw ParseError(source, line_no, fmt::format("bad number '{}'", fields[k]));
      }
    }
    const double o = v[0], h = v[1], l = v[2], cl = v[3], vol = v[4];
    if (!(o > 0 && h > 0 && l > 0 && cl > 0)) {
      throw ParseError(source, line_no, "prices must be positive");
    }
    if (vol < 0) {
      throw ParseError(source, line_no, "volume must be nonnegative");
    }
    const double qv = has_quote ? v[5] : vol * cl;
    if (qv < 0) {
      throw ParseError(source, line_no, "quote_volume must be nonnegative");
    }
    if (c.size() > 0) {
      const std::int64_t prev = c.timestamps.back();
      const std::int64_t d = ts - prev;
      if (d <= 0) {
        throw ParseError(source, line_no,
                         fmt::format("timestamp {} does not increase on {}", ts, prev));
      }
      if (d % step != 0) {
        throw ParseError(source, line_no,
                         fmt::format("timestamp {} is off the {}-minute grid", ts,
                                     frequency_minutes));
      }
      if (d != step) {
        gaps.push_back(format_ts_span(prev + step, ts - step));
      }
    }
    c.push_back(ts, o, h, l, cl, vol, qv);
  }
  if (!gaps.empty()) {
    std::string list;
    for (std::size_t i = 0; i < gaps.size(); ++i) {
      list += (i ? ", " : "") + gaps[i];
    }
    throw GapError(fmt::format("{}: missing bars {}", source, list));
  }
  return c;
}

void save_candles(const CandleSeries& c, const std::filesystem::path& path) {
  auto out = fmt::output_file(path.string());
  out.print("{}\n", kHeader7);
  for (std::size_t i = 0; i < c.size(); ++i) {
    out.print("{},{},{},{},{},{},{}\n", c.timestamps[i], c.open[i], c.high[i], c.low[i],
              c.close[i], c.volume[i], c.quote_volume[i]);
  }
}

std::vector<double> bar_vwap(const CandleSeries& c) {
  std::vector<double> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (c.volume[i] > 0) {
      out[i] = c.quote_volume[i] / c.volume[i];
    } else {
      out[i] = i == 0 ? c.close[0] : out[i - 1];
    }
  }
  return out;
}

}  // namespace lem::data
