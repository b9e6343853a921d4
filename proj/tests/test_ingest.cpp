#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "giram/ingest.hpp"

using namespace giram;

namespace {

CheckIn at(const std::string& user, const std::string& poi, std::int64_t ts, double lat = 40.7, double lon = -74.0) {
  return CheckIn{user, poi, lat, lon, ts, "Cafe"};
}

std::vector<CheckIn> parse(const std::string& text) {
  std::istringstream in(text);
  return parse_checkins(in);
}

constexpr std::int64_t kT0 = 1'600'000'000;

}  // namespace

TEST(LoadCheckins, HeaderOnlyGivesEmptyList) {
  EXPECT_TRUE(parse("user_id,poi_id,lat,lon,timestamp,category\n").empty());
}

TEST(LoadCheckins, OneRow) {
  const auto rows = parse("user_id,poi_id,lat,lon,timestamp,category\nu1,p9,40.5,-73.25,1600000000,Burger Joint\n");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].user_id, "u1");
  EXPECT_EQ(rows[0].poi_id, "p9");
  EXPECT_DOUBLE_EQ(rows[0].lat, 40.5);
  EXPECT_DOUBLE_EQ(rows[0].lon, -73.25);
  EXPECT_EQ(rows[0].timestamp, 1600000000);
  EXPECT_EQ(rows[0].category, "Burger Joint");
}

TEST(LoadCheckins, LatitudeOutOfRange) {
  EXPECT_THROW(parse("user_id,poi_id,lat,lon,timestamp,category\nu1,p1,91.0,0,1600000000,x\n"), DataError);
}

TEST(LoadCheckins, MalformedRows) {
  const std::string h = "user_id,poi_id,lat,lon,timestamp,category\n";
  EXPECT_THROW(parse("user,poi\n"), DataError);
  EXPECT_THROW(parse(h + "u1,p1,40,-74,1600000000\n"), DataError);
  EXPECT_THROW(parse(h + "u1,p1,abc,-74,1600000000,x\n"), DataError);
  EXPECT_THROW(parse(h + "u1,p1,40,-74,12.5,x\n"), DataError);
  EXPECT_THROW(parse(h + "u1,p1,40,-181,1600000000,x\n"), DataError);
  EXPECT_THROW(parse(h + "u1,p1,40,-74,0,x\n"), DataError);
  EXPECT_THROW(parse(h + ",p1,40,-74,1600000000,x\n"), DataError);
  EXPECT_THROW(parse(h + "u1,\"p1,40,-74,1600000000,x\n"), DataError);
}

TEST(LoadCheckins, QuotedFieldsCrlfAndSorting) {
  const auto rows = parse(
      "user_id,poi_id,lat,lon,timestamp,category\r\n"
      "u2,p1,40,-74,1600000500,\"Bar, \"\"Dive\"\"\"\r\n"
      "u1,p2,40,-74,1600000100,Cafe\r\n");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].user_id, "u1");
  EXPECT_EQ(rows[1].category, "Bar, \"Dive\"");
}

TEST(LoadCheckins, WriteThenParseRoundTrips) {
  std::vector<CheckIn> rows = {at("a", "p,1", kT0, 1.0 / 3.0, -2.0 / 7.0), at("b", "p\"2", kT0 + 5, -89.9, 179.9)};
  rows[1].category = "Food, Drink";
  std::ostringstream out;
  write_checkins(out, rows);
  std::istringstream in(out.str());
  EXPECT_EQ(parse_checkins(in), rows);
}

TEST(FilterSparse, DropsUserBelowThreshold) {
  std::vector<CheckIn> rows;
  for (int i = 0; i < 30; ++i) rows.push_back(at("heavy", "shared", kT0 + i));
  for (int i = 0; i < 9; ++i) rows.push_back(at("light", "shared", kT0 + 100 + i));
  const auto kept = filter_sparse(rows, 10);
  EXPECT_EQ(kept.size(), 30u);
  EXPECT_TRUE(std::none_of(kept.begin(), kept.end(), [](const CheckIn& c) { return c.user_id == "light"; }));
}

TEST(FilterSparse, EmptyInput) { EXPECT_TRUE(filter_sparse({}, 10).empty()); }

TEST(FilterSparse, ThreeUsersOnSharedPoiAllRetained) {
  std::vector<CheckIn> rows;
  for (int u = 0; u < 3; ++u)
    for (int i = 0; i < 12; ++i) rows.push_back(at("u" + std::to_string(u), "shared", kT0 + u * 100 + i));
  EXPECT_EQ(filter_sparse(rows, 10).size(), 36u);
}

TEST(FilterSparse, PoisFirstThenUsersSinglePass) {
  // u1 has 10 check-ins but 2 of them hit a rare POI; after the POI filter it
  // has 8 and is dropped. The single pass does not revisit the POI counts.
  std::vector<CheckIn> rows;
  for (int i = 0; i < 8; ++i) rows.push_back(at("u1", "common", kT0 + i));
  rows.push_back(at("u1", "rare", kT0 + 20));
  rows.push_back(at("u1", "rare", kT0 + 21));
  for (int i = 0; i < 10; ++i) rows.push_back(at("u2", "common", kT0 + 40 + i));
  const auto kept = filter_sparse(rows, 10);
  EXPECT_EQ(kept.size(), 10u);
  EXPECT_TRUE(std::all_of(kept.begin(), kept.end(), [](const CheckIn& c) { return c.user_id == "u2"; }));
  EXPECT_THROW(filter_sparse(rows, 0), ConfigError);
}

namespace {
std::vector<CheckIn> sequential(std::size_t n) {
  std::vector<CheckIn> rows;
  for (std::size_t i = 0; i < n; ++i) rows.push_back(at("u" + std::to_string(i % 3), "p", kT0 + static_cast<std::int64_t>(i) * 60));
  return rows;
}
}  // namespace

TEST(PartitionBlocks, HundredEventsFiveBlocks) {
  const auto p = partition_blocks(sequential(100), 5);
  EXPECT_EQ(p.base.checkins.size(), 50u);
  ASSERT_EQ(p.incremental.size(), 5u);
  for (std::size_t b = 0; b < 5; ++b) {
    EXPECT_EQ(p.incremental[b].checkins.size(), 10u);
    EXPECT_EQ(p.incremental[b].index, b + 1);
  }
}

TEST(PartitionBlocks, TenEventsOneBlock) {
  const auto p = partition_blocks(sequential(10), 1);
  EXPECT_EQ(p.base.checkins.size(), 5u);
  ASSERT_EQ(p.incremental.size(), 1u);
  EXPECT_EQ(p.incremental[0].checkins.size(), 5u);
}

TEST(PartitionBlocks, RemainderGoesToLastBlock) {
  // 106 events: base 53, incremental 53 = 10,10,10,10,13.
  const auto p = partition_blocks(sequential(106), 5);
  EXPECT_EQ(p.base.checkins.size(), 53u);
  std::vector<std::size_t> sizes;
  for (const auto& b : p.incremental) sizes.push_back(b.checkins.size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{10, 10, 10, 10, 13}));
}

TEST(PartitionBlocks, UnionEqualsInputAndBlocksAreContiguous) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 20 + rng() % 200;
    const int blocks = 1 + static_cast<int>(rng() % 6);
    auto rows = sequential(n);
    const auto p = partition_blocks(rows, blocks);
    std::vector<CheckIn> all = p.base.checkins;
    std::int64_t prev_end = p.base.time_span.end;
    for (const auto& b : p.incremental) {
      EXPECT_GE(b.time_span.start, prev_end);
      prev_end = b.time_span.end;
      all.insert(all.end(), b.checkins.begin(), b.checkins.end());
    }
    EXPECT_EQ(all, rows);
  }
}

TEST(PartitionBlocks, Errors) {
  EXPECT_THROW(partition_blocks(sequential(10), 0), ConfigError);
  EXPECT_THROW(partition_blocks(sequential(5), 3), ConfigError);
  auto rows = sequential(20);
  std::swap(rows[0], rows[5]);
  EXPECT_THROW(partition_blocks(rows, 2), DataError);
}

namespace {
DataBlock block_of(std::vector<CheckIn> rows) {
  DataBlock b;
  b.checkins = std::move(rows);
  b.time_span = {b.checkins.front().timestamp, b.checkins.back().timestamp};
  return b;
}
}  // namespace

TEST(BuildTrajectories, TwoCheckinsSameWeek) {
  const auto ts = build_trajectories(block_of({at("u", "a", kT0 + kSecondsPerDay), at("u", "b", kT0 + 3 * kSecondsPerDay)}),
                                     kSecondsPerWeek);
  ASSERT_EQ(ts.size(), 1u);
  EXPECT_EQ(ts[0].records.size(), 2u);
}

TEST(BuildTrajectories, SingletonDiscarded) {
  const auto b = block_of({at("u", "a", kT0), at("v", "a", kT0 + 10), at("v", "b", kT0 + 20)});
  const auto ts = build_trajectories(b, kSecondsPerWeek);
  ASSERT_EQ(ts.size(), 1u);
  EXPECT_EQ(ts[0].user_id, "v");
}

TEST(BuildTrajectories, DaysOneEightNine) {
  // Window anchored at the block start (day 0).
  const auto b = block_of({at("x", "s", kT0), at("u", "a", kT0 + 1 * kSecondsPerDay), at("u", "b", kT0 + 8 * kSecondsPerDay),
                           at("u", "c", kT0 + 9 * kSecondsPerDay)});
  const auto ts = build_trajectories(b, kSecondsPerWeek);
  ASSERT_EQ(ts.size(), 1u);
  EXPECT_EQ(ts[0].user_id, "u");
  ASSERT_EQ(ts[0].records.size(), 2u);
  EXPECT_EQ(ts[0].records[0].poi_id, "b");
  EXPECT_EQ(ts[0].records[1].poi_id, "c");
}

TEST(BuildTrajectories, LengthAtLeastTwoAndCountBounded) {
  std::mt19937_64 rng(11);
  std::vector<CheckIn> rows;
  for (int i = 0; i < 400; ++i) {
    rows.push_back(at("u" + std::to_string(rng() % 15), "p", kT0 + static_cast<std::int64_t>(rng() % (60 * kSecondsPerDay))));
  }
  std::sort(rows.begin(), rows.end(), [](const CheckIn& a, const CheckIn& b) { return a.timestamp < b.timestamp; });
  const auto ts = build_trajectories(block_of(rows), kSecondsPerWeek);
  std::size_t total = 0;
  for (const auto& t : ts) {
    EXPECT_GE(t.records.size(), 2u);
    EXPECT_TRUE(std::is_sorted(t.records.begin(), t.records.end(),
                               [](const CheckIn& a, const CheckIn& b) { return a.timestamp < b.timestamp; }));
    total += t.records.size();
  }
  EXPECT_LE(total, rows.size());
  EXPECT_THROW(build_trajectories(block_of(rows), 0), ConfigError);
}

namespace {
std::vector<Trajectory> n_trajectories(std::size_t n) {
  std::vector<Trajectory> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"u" + std::to_string(i), {at("u" + std::to_string(i), "a", kT0 + static_cast<std::int64_t>(i)),
                                             at("u" + std::to_string(i), "b", kT0 + static_cast<std::int64_t>(i) + 1)}});
  }
  return out;
}

std::string serialize(const std::vector<Trajectory>& ts) {
  std::ostringstream out;
  for (const auto& t : ts) write_checkins(out, t.records);
  return out.str();
}
}  // namespace

TEST(SplitValTest, TwoTrajectories) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = split_val_test(n_trajectories(2), seed);
    EXPECT_EQ(s.val.size(), 1u);
    EXPECT_EQ(s.test.size(), 1u);
  }
}

TEST(SplitValTest, SevenTrajectoriesOddRule) {
  const auto s = split_val_test(n_trajectories(7), 5);
  EXPECT_EQ(s.val.size(), 4u);
  EXPECT_EQ(s.test.size(), 3u);
}

TEST(SplitValTest, DeterministicPerSeed) {
  const auto ts = n_trajectories(31);
  const auto a = split_val_test(ts, 42);
  const auto b = split_val_test(ts, 42);
  EXPECT_EQ(serialize(a.val), serialize(b.val));
  EXPECT_EQ(serialize(a.test), serialize(b.test));
  const auto c = split_val_test(ts, 43);
  EXPECT_NE(serialize(a.val), serialize(c.val));
  EXPECT_THROW(split_val_test(DataBlock{}, 1), DataError);
}

TEST(AssignRegion, CornersAndMidpoint) {
  const GridSpec g{{0.0, 1.0, 0.0, 1.0}, 2, 2};
  EXPECT_EQ(assign_region(0.0, 0.0, g), 0);
  EXPECT_EQ(assign_region(1.0, 1.0, g), 3);
  EXPECT_EQ(assign_region(0.5, 0.5, g), 3);
  EXPECT_EQ(assign_region(0.25, 0.75, g), 1);
  EXPECT_THROW(assign_region(1.5, 0.5, g), DataError);
}

TEST(AssignRegion, RangeAndMonotoneInLatitude) {
  const GridSpec g = make_grid({40.0, 41.0, -74.5, -73.5}, 7, 5);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> lat(40.0, 41.0), lon(-74.5, -73.5);
  for (int i = 0; i < 500; ++i) {
    const double lo = lon(rng);
    const double a = lat(rng), b = lat(rng);
    const int ra = assign_region(std::min(a, b), lo, g);
    const int rb = assign_region(std::max(a, b), lo, g);
    EXPECT_GE(ra, 0);
    EXPECT_LT(rb, g.cells());
    EXPECT_EQ(ra % g.cols, rb % g.cols);
    EXPECT_LE(ra, rb);
  }
  EXPECT_THROW(make_grid({0, 1, 0, 1}, 0, 3), ConfigError);
  EXPECT_THROW(make_grid({1, 1, 0, 1}, 2, 3), ConfigError);
}

TEST(MapCategory, MappingAndFallback) {
  CategoryMap cmap;
  cmap.mapping["Burger Joint"] = "Food and Dining";
  EXPECT_EQ(map_category("Burger Joint", cmap), "Food and Dining");
  EXPECT_EQ(map_category("X", cmap), "X");
  EXPECT_EQ(map_category("Anything", CategoryMap{}), "Anything");
}

TEST(MapCategory, ParseCategoryMap) {
  std::istringstream in("raw,derived\nBurger Joint,Food and Dining\n\"Bar, Pub\",Nightlife\n");
  const auto cmap = parse_category_map(in);
  EXPECT_EQ(cmap.mapping.at("Bar, Pub"), "Nightlife");
  std::istringstream bad("raw,derived\nonly-one-field\n");
  EXPECT_THROW(parse_category_map(bad), DataError);
}

TEST(BoundingBox, DegenerateAxisIsWidened) {
  const auto b = bounding_box({at("u", "p", kT0, 40.0, -74.0), at("u", "q", kT0, 40.0, -73.0)});
  EXPECT_GT(b.max_lat, b.min_lat);
  EXPECT_EQ(b.min_lon, -74.0);
  EXPECT_THROW(bounding_box({}), DataError);
}
