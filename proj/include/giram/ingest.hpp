#pragma once

// Check-in loading, filtering and temporal partitioning.
//
// The stream is cut into a base block holding the earliest half of all
// check-ins and `n_blocks` incremental blocks of equal event count. Inside a
// block, each user's check-ins are bucketed into fixed windows (one week by
// default) anchored at the block start; single-check-in buckets are dropped.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "giram/error.hpp"
#include "giram/random.hpp"

namespace giram {

inline constexpr std::int64_t kSecondsPerDay = 86400;
inline constexpr std::int64_t kSecondsPerWeek = 7 * kSecondsPerDay;
inline constexpr std::string_view kCheckinHeader = "user_id,poi_id,lat,lon,timestamp,category";
inline constexpr std::string_view kCategoryMapHeader = "raw,derived";

struct CheckIn {
  std::string user_id;
  std::string poi_id;
  double lat = 0.0;
  double lon = 0.0;
  std::int64_t timestamp = 0;  // epoch seconds, UTC
  std::string category;

  friend bool operator==(const CheckIn&, const CheckIn&) = default;
};

struct Trajectory {
  std::string user_id;
  std::vector<CheckIn> records;
};

struct TimeSpan {
  std::int64_t start = 0;
  std::int64_t end = 0;
};

struct DataBlock {
  std::size_t index = 0;  // 0 is the base block
  std::vector<CheckIn> checkins;
  std::vector<Trajectory> trajectories;
  TimeSpan time_span;
};

struct BoundingBox {
  double min_lat = 0.0;
  double max_lat = 0.0;
  double min_lon = 0.0;
  double max_lon = 0.0;
};

struct GridSpec {
  BoundingBox bbox;
  int rows = 100;
  int cols = 100;

  int cells() const { return rows * cols; }
};

struct CategoryMap {
  std::unordered_map<std::string, std::string> mapping;
};

inline void validate_checkin(const CheckIn& c) {
  if (!(c.lat >= -90.0 && c.lat <= 90.0)) {
    throw DataError("latitude out of range: " + std::to_string(c.lat));
  }
  if (!(c.lon >= -180.0 && c.lon <= 180.0)) {
    throw DataError("longitude out of range: " + std::to_string(c.lon));
  }
  if (c.timestamp <= 0) {
    throw DataError("timestamp must be positive: " + std::to_string(c.timestamp));
  }
}

namespace csv {

// Splits one CSV line. Double quotes delimit fields that contain commas;
// a doubled quote inside a quoted field is a literal quote.
inline std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (quoted) throw DataError("unterminated quoted field");
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string quote(std::string_view field) {
  if (field.find_first_of(",\"\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

inline void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

inline double parse_double(const std::string& s) {
  std::size_t pos = 0;
  double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("trailing characters");
  return v;
}

inline std::int64_t parse_int(const std::string& s) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw std::invalid_argument("not an integer");
  return v;
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace csv

inline std::vector<CheckIn> parse_checkins(std::istream& in) {
  std::vector<CheckIn> out;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) return out;
  ++line_no;
  csv::strip_cr(line);
  if (!line.empty() && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  if (line != kCheckinHeader) {
    throw DataError("line 1: expected header '" + std::string(kCheckinHeader) + "'");
  }
  while (std::getline(in, line)) {
    ++line_no;
    csv::strip_cr(line);
    if (line.empty()) continue;
    std::vector<std::string> f;
    try {
      f = csv::split(line);
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (f.size() != 6) {
      throw DataError("line " + std::to_string(line_no) + ": expected 6 fields, got " +
                      std::to_string(f.size()));
    }
    CheckIn c;
    c.user_id = std::move(f[0]);
    c.poi_id = std::move(f[1]);
    try {
      c.lat = csv::parse_double(f[2]);
      c.lon = csv::parse_double(f[3]);
      c.timestamp = csv::parse_int(f[4]);
    } catch (const std::exception&) {
      throw DataError("line " + std::to_string(line_no) + ": malformed numeric field");
    }
    c.category = std::move(f[5]);
    if (c.user_id.empty() || c.poi_id.empty()) {
      throw DataError("line " + std::to_string(line_no) + ": empty identifier");
    }
    try {
      validate_checkin(c);
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(std::move(c));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const CheckIn& a, const CheckIn& b) { return a.timestamp < b.timestamp; });
  return out;
}

/// Reads a check-in CSV; the result is sorted by timestamp (stable).
inline std::vector<CheckIn> load_checkins(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open check-in file: " + path);
  return parse_checkins(in);
}

inline void write_checkins(std::ostream& out, const std::vector<CheckIn>& checkins) {
  out << kCheckinHeader << '\n';
  for (const auto& c : checkins) {
    out << csv::quote(c.user_id) << ',' << csv::quote(c.poi_id) << ',' << csv::format_double(c.lat)
        << ',' << csv::format_double(c.lon) << ',' << c.timestamp << ',' << csv::quote(c.category)
        << '\n';
  }
}

inline void write_checkins(const std::string& path, const std::vector<CheckIn>& checkins) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write check-in file: " + path);
  write_checkins(out, checkins);
}

/// Drops check-ins of POIs seen fewer than `min_count` times, then check-ins of
/// users seen fewer than `min_count` times in what remains. One pass each.
inline std::vector<CheckIn> filter_sparse(const std::vector<CheckIn>& checkins, int min_count) {
  if (min_count < 1) throw ConfigError("min_count must be >= 1");
  std::unordered_map<std::string, int> poi_count;
  for (const auto& c : checkins) ++poi_count[c.poi_id];
  std::vector<CheckIn> kept;
  kept.reserve(checkins.size());
  for (const auto& c : checkins) {
    if (poi_count[c.poi_id] >= min_count) kept.push_back(c);
  }
  std::unordered_map<std::string, int> user_count;
  for (const auto& c : kept) ++user_count[c.user_id];
  std::vector<CheckIn> out;
  out.reserve(kept.size());
  for (auto& c : kept) {
    if (user_count[c.user_id] >= min_count) out.push_back(std::move(c));
  }
  return out;
}

namespace detail {

inline DataBlock make_block(std::size_t index, std::vector<CheckIn> events) {
  DataBlock b;
  b.index = index;
  b.checkins = std::move(events);
  if (!b.checkins.empty()) {
    b.time_span = {b.checkins.front().timestamp, b.checkins.back().timestamp};
  }
  return b;
}

}  // namespace detail

struct BlockPartition {
  DataBlock base;
  std::vector<DataBlock> incremental;  // indices 1..n_blocks
};

/// Base block = earliest floor(N/2) check-ins; the rest is cut into `n_blocks`
/// contiguous groups of equal count with the remainder going to the last one.
inline BlockPartition partition_blocks(const std::vector<CheckIn>& checkins, int n_blocks) {
  if (n_blocks < 1) throw ConfigError("n_blocks must be >= 1");
  if (checkins.size() < 2 * static_cast<std::size_t>(n_blocks)) {
    throw ConfigError("need at least " + std::to_string(2 * n_blocks) + " check-ins for " +
                      std::to_string(n_blocks) + " blocks, got " + std::to_string(checkins.size()));
  }
  if (!std::is_sorted(checkins.begin(), checkins.end(),
                      [](const CheckIn& a, const CheckIn& b) { return a.timestamp < b.timestamp; })) {
    throw DataError("partition_blocks requires time-sorted check-ins");
  }
  const std::size_t n = checkins.size();
  const std::size_t base_n = n / 2;
  const std::size_t incr_n = n - base_n;
  const std::size_t per_block = incr_n / static_cast<std::size_t>(n_blocks);

  BlockPartition out;
  out.base = detail::make_block(0, {checkins.begin(), checkins.begin() + static_cast<std::ptrdiff_t>(base_n)});
  std::size_t pos = base_n;
  for (int b = 0; b < n_blocks; ++b) {
    std::size_t len = (b + 1 == n_blocks) ? n - pos : per_block;
    auto first = checkins.begin() + static_cast<std::ptrdiff_t>(pos);
    out.incremental.push_back(
        detail::make_block(static_cast<std::size_t>(b + 1), {first, first + static_cast<std::ptrdiff_t>(len)}));
    pos += len;
  }
  return out;
}

/// Buckets each user's check-ins into windows of `interval` seconds anchored at
/// the block start. Buckets with a single check-in are discarded. Output is
/// ordered by user id, then window.
inline std::vector<Trajectory> build_trajectories(const DataBlock& block, std::int64_t interval) {
  if (interval <= 0) throw ConfigError("trajectory interval must be positive");
  std::map<std::pair<std::string, std::int64_t>, std::vector<CheckIn>> buckets;
  for (const auto& c : block.checkins) {
    std::int64_t w = (c.timestamp - block.time_span.start) / interval;
    buckets[{c.user_id, w}].push_back(c);
  }
  std::vector<Trajectory> out;
  for (auto& [key, recs] : buckets) {
    if (recs.size() < 2) continue;
    std::stable_sort(recs.begin(), recs.end(),
                     [](const CheckIn& a, const CheckIn& b) { return a.timestamp < b.timestamp; });
    out.push_back(Trajectory{key.first, std::move(recs)});
  }
  return out;
}

struct ValTestSplit {
  std::vector<Trajectory> val;
  std::vector<Trajectory> test;
};

/// Seeded shuffle, first ceil(n/2) trajectories to validation, rest to test.
inline ValTestSplit split_val_test(const std::vector<Trajectory>& trajectories, std::uint64_t seed) {
  std::vector<std::size_t> order(trajectories.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    std::swap(order[i - 1], order[j]);
  }
  ValTestSplit out;
  const std::size_t n_val = (order.size() + 1) / 2;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_val ? out.val : out.test).push_back(trajectories[order[i]]);
  }
  return out;
}

inline ValTestSplit split_val_test(const DataBlock& block, std::uint64_t seed) {
  if (block.trajectories.empty()) throw DataError("cannot split an empty block");
  return split_val_test(block.trajectories, seed);
}

/// Bounding box of all check-ins; a degenerate axis is widened slightly so the
/// grid always has positive extent.
inline BoundingBox bounding_box(const std::vector<CheckIn>& checkins) {
  if (checkins.empty()) throw DataError("bounding box of empty check-in set");
  BoundingBox b{checkins[0].lat, checkins[0].lat, checkins[0].lon, checkins[0].lon};
  for (const auto& c : checkins) {
    b.min_lat = std::min(b.min_lat, c.lat);
    b.max_lat = std::max(b.max_lat, c.lat);
    b.min_lon = std::min(b.min_lon, c.lon);
    b.max_lon = std::max(b.max_lon, c.lon);
  }
  if (b.max_lat <= b.min_lat) b.max_lat = b.min_lat + 1e-6;
  if (b.max_lon <= b.min_lon) b.max_lon = b.min_lon + 1e-6;
  return b;
}

inline GridSpec make_grid(const BoundingBox& bbox, int rows, int cols) {
  if (rows < 1 || cols < 1) throw ConfigError("grid rows and cols must be >= 1");
  if (!(bbox.min_lat < bbox.max_lat) || !(bbox.min_lon < bbox.max_lon)) {
    throw ConfigError("grid bounding box must have positive extent");
  }
  return GridSpec{bbox, rows, cols};
}

/// Uniform binning; latitude picks the row, longitude the column. The max
/// edge belongs to the last cell.
inline int assign_region(double lat, double lon, const GridSpec& grid) {
  const auto& b = grid.bbox;
  if (lat < b.min_lat || lat > b.max_lat || lon < b.min_lon || lon > b.max_lon) {
    throw DataError("coordinate outside grid bounding box");
  }
  auto bin = [](double v, double lo, double hi, int n) {
    int i = static_cast<int>(std::floor((v - lo) / (hi - lo) * n));
    return std::clamp(i, 0, n - 1);
  };
  int row = bin(lat, b.min_lat, b.max_lat, grid.rows);
  int col = bin(lon, b.min_lon, b.max_lon, grid.cols);
  return row * grid.cols + col;
}

inline std::string map_category(const std::string& raw, const CategoryMap& cmap) {
  auto it = cmap.mapping.find(raw);
  return it == cmap.mapping.end() ? raw : it->second;
}

inline CategoryMap parse_category_map(std::istream& in) {
  CategoryMap cmap;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) return cmap;
  ++line_no;
  csv::strip_cr(line);
  if (line != kCategoryMapHeader) throw DataError("line 1: expected header 'raw,derived'");
  while (std::getline(in, line)) {
    ++line_no;
    csv::strip_cr(line);
    if (line.empty()) continue;
    auto f = csv::split(line);
    if (f.size() != 2) {
      throw DataError("line " + std::to_string(line_no) + ": expected 2 fields");
    }
    cmap.mapping[f[0]] = f[1];
  }
  return cmap;
}

inline CategoryMap load_category_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open category map: " + path);
  return parse_category_map(in);
}

inline void write_category_map(const std::string& path, const CategoryMap& cmap) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write category map: " + path);
  std::map<std::string, std::string> sorted(cmap.mapping.begin(), cmap.mapping.end());
  out << kCategoryMapHeader << '\n';
  for (const auto& [raw, der] : sorted) out << csv::quote(raw) << ',' << csv::quote(der) << '\n';
}

}  // namespace giram
