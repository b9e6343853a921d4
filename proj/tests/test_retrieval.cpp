#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "giram/retrieval.hpp"
#include "oracles.hpp"

using namespace giram;

namespace {

struct Instance {
  UserMemory mem;
  std::vector<std::vector<double>> entry_keys;
  std::vector<std::map<std::uint32_t, double>> values;
  std::vector<Vector> queries;
  std::vector<std::vector<double>> raw_queries;
};

Instance random_instance(std::mt19937_64& rng, std::size_t entries, std::size_t keys, std::size_t key_dim,
                         std::size_t dim) {
  Instance in{UserMemory(entries, 4), {}, {}, {}, {}};
  for (std::size_t i = 0; i < entries; ++i) {
    in.entry_keys.push_back(oracle::random_key(rng, key_dim));
    in.values.push_back(oracle::random_value(rng, dim, 1 + i % 4));
    in.mem.insert_or_evict(oracle::to_eigen(in.entry_keys.back()), oracle::to_sparse(in.values.back(), dim),
                           static_cast<std::int64_t>(i));
  }
  for (std::size_t k = 0; k < keys; ++k) {
    in.raw_queries.push_back(oracle::random_key(rng, key_dim));
    in.queries.push_back(oracle::to_eigen(in.raw_queries.back()));
  }
  return in;
}

UserMemory toy_memory() {
  // Three entries along increasing angle from the x-axis, 4 POIs.
  UserMemory m(3, 4);
  m.insert_or_evict(Vector{{1.0, 0.0}}, {4, {{0, 0.6}, {1, 0.2}}}, 1);
  m.insert_or_evict(Vector{{1.0, 1.0}}, {4, {{1, 0.5}, {2, 0.4}}}, 2);
  m.insert_or_evict(Vector{{0.0, 1.0}}, {4, {{3, 0.9}}}, 3);
  return m;
}

}  // namespace

TEST(RankEntries, SingleSelfAndOracle) {
  UserMemory one(2, 2);
  one.insert_or_evict(Vector{{0.3, 0.1}}, {2, {}}, 1);
  EXPECT_EQ(rank_entries(one, Vector{{-1.0, 0.0}}), std::vector<std::size_t>{1});

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    auto in = random_instance(rng, 6, 1, 4, 5);
    const auto self = rank_entries(in.mem, oracle::to_eigen(in.entry_keys[trial % 6]));
    EXPECT_EQ(self[static_cast<std::size_t>(trial % 6)], 1u);
    const auto ranks = rank_entries(in.mem, in.queries[0]);
    std::vector<std::size_t> order(6);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
      return oracle::cosine(in.raw_queries[0], in.entry_keys[a]) > oracle::cosine(in.raw_queries[0], in.entry_keys[b]);
    });
    for (std::size_t r = 0; r < 6; ++r) EXPECT_EQ(ranks[order[r]], r + 1);
  }
  EXPECT_THROW(rank_entries(UserMemory(2, 2), Vector::Ones(2)), DataError);
}

TEST(RankEntries, TiesGoToEarlierEntry) {
  UserMemory m(3, 2);
  m.insert_or_evict(Vector{{1.0, 0.0}}, {2, {}}, 1);
  m.insert_or_evict(Vector{{2.0, 0.0}}, {2, {}}, 2);
  m.insert_or_evict(Vector{{0.0, 1.0}}, {2, {}}, 3);
  EXPECT_EQ(rank_entries(m, Vector{{1.0, 0.0}}), (std::vector<std::size_t>{1, 2, 3}));
}

TEST(RrfScores, DirectFormula) {
  const auto m = toy_memory();
  const std::vector<Vector> keys = {Vector{{1.0, -0.1}}};
  const Vector s = rrf_scores(m, keys, RrfConfig{});
  EXPECT_DOUBLE_EQ(s(0), 1.0 / 51.0);
  EXPECT_DOUBLE_EQ(s(1), 1.0 / 52.0);
  EXPECT_DOUBLE_EQ(s(2), 1.0 / 53.0);
  EXPECT_THROW(rrf_scores(m, std::vector<Vector>{}, RrfConfig{}), DataError);
  EXPECT_THROW(rrf_scores(m, keys, RrfConfig{0.0}), ConfigError);
}

TEST(RrfScores, DuplicatedKeysDoubleScores) {
  std::mt19937_64 rng(4);
  auto in = random_instance(rng, 5, 3, 4, 6);
  std::vector<Vector> twice = in.queries;
  twice.insert(twice.end(), in.queries.begin(), in.queries.end());
  const Vector s1 = rrf_scores(in.mem, in.queries, RrfConfig{});
  const Vector s2 = rrf_scores(in.mem, twice, RrfConfig{});
  EXPECT_LT((s2 - 2.0 * s1).cwiseAbs().maxCoeff(), 1e-15);
  // The softmax is not scale invariant, so the weights change; the order of
  // the weights does not.
  const Vector w1 = ad::softmax(s1), w2 = ad::softmax(s2);
  for (Eigen::Index i = 0; i < 5; ++i)
    for (Eigen::Index j = 0; j < 5; ++j) EXPECT_EQ(w1(i) < w1(j), w2(i) < w2(j));
}

TEST(RrfScores, NestedLoopOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + trial % 10, k = 1 + trial % 5;
    auto in = random_instance(rng, n, k, 3, 8);
    const Vector got = rrf_scores(in.mem, in.queries, RrfConfig{});
    const auto want = oracle::rrf(in.entry_keys, in.raw_queries, 50.0);
    for (std::size_t m = 0; m < n; ++m) EXPECT_NEAR(got(static_cast<Eigen::Index>(m)), want[m], 1e-12);
  }
}

TEST(RrfScores, PermutationInvarianceAndMonotonicity) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    auto in = random_instance(rng, 6, 4, 3, 5);
    auto shuffled = in.queries;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    EXPECT_LT((rrf_scores(in.mem, in.queries, RrfConfig{}) - rrf_scores(in.mem, shuffled, RrfConfig{}))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-15);
  }
  // Replacing one key by a copy of entry 2's key lifts entry 2 to rank 1 under
  // that key and strictly raises its score.
  auto in = random_instance(rng, 6, 3, 3, 5);
  const auto before_ranks = rank_entries(in.mem, in.queries[0]);
  if (before_ranks[2] > 1) {
    const double before = rrf_scores(in.mem, in.queries, RrfConfig{})(2);
    in.queries[0] = in.mem[2].key;
    EXPECT_GT(rrf_scores(in.mem, in.queries, RrfConfig{})(2), before);
  }
}

TEST(SustainedInterest, DegenerateCases) {
  UserMemory one(2, 3);
  one.insert_or_evict(Vector{{1.0, 2.0}}, {5, {{1, 0.3}, {4, 0.2}}}, 1);
  const std::vector<Vector> keys = {Vector{{0.0, 1.0}}, Vector{{1.0, 0.0}}};
  EXPECT_EQ(sustained_interest(one, keys, RrfConfig{}, 5), one[0].value.dense());
  EXPECT_EQ(sustained_interest(UserMemory(2, 3), keys, RrfConfig{}, 5), Vector::Zero(5));
}

TEST(SustainedInterest, HandComputedToy) {
  const auto m = toy_memory();
  // Query near the x-axis ranks the entries 1,2,3; the second query near the
  // y-axis ranks them 3,2,1.
  const std::vector<Vector> keys = {Vector{{1.0, 0.1}}, Vector{{0.1, 1.0}}, Vector{{1.0, 0.2}}};
  const double r0 = 1.0 / 51 + 1.0 / 53 + 1.0 / 51;
  const double r1 = 1.0 / 52 + 1.0 / 52 + 1.0 / 52;
  const double r2 = 1.0 / 53 + 1.0 / 51 + 1.0 / 53;
  const double z = std::exp(r0) + std::exp(r1) + std::exp(r2);
  const double w0 = std::exp(r0) / z, w1 = std::exp(r1) / z, w2 = std::exp(r2) / z;
  const Vector expected{{0.6 * w0, 0.2 * w0 + 0.5 * w1, 0.4 * w1, 0.9 * w2}};
  EXPECT_LT((sustained_interest(m, keys, RrfConfig{}, 4) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SustainedInterest, MatchesOracleAndBounds) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + trial % 10, k = 1 + trial % 5, dim = 12;
    auto in = random_instance(rng, n, k, 3, dim);
    const Vector got = sustained_interest(in.mem, in.queries, RrfConfig{}, dim);
    const auto want = oracle::sustained(oracle::rrf(in.entry_keys, in.raw_queries, 50.0), in.values, dim);
    const Vector weights = ad::softmax(rrf_scores(in.mem, in.queries, RrfConfig{}));
    EXPECT_NEAR(weights.sum(), 1.0, 1e-9);
    for (std::size_t p = 0; p < dim; ++p) {
      EXPECT_NEAR(got(static_cast<Eigen::Index>(p)), want[p], 1e-12);
      double cap = 0.0;
      for (const auto& v : in.values)
        if (auto it = v.find(static_cast<std::uint32_t>(p)); it != v.end()) cap = std::max(cap, it->second);
      EXPECT_GE(got(static_cast<Eigen::Index>(p)), 0.0);
      EXPECT_LE(got(static_cast<Eigen::Index>(p)), cap + 1e-15);
    }
  }
}

TEST(NearestInterest, PicksBestMatch) {
  const auto m = toy_memory();
  EXPECT_EQ(nearest_interest(m, Vector{{0.2, 1.0}}, 4), m[2].value.dense());
  EXPECT_EQ(nearest_interest(m, Vector{{1.0, 0.9}}, 4), m[1].value.dense());
  EXPECT_EQ(nearest_interest(UserMemory(1, 1), Vector{{1.0, 0.0}}, 4), Vector::Zero(4));
}

TEST(WeightedValues, DimensionMismatch) {
  const auto m = toy_memory();
  EXPECT_THROW(weighted_values(m, Vector::Ones(3), 5), ShapeError);
}
