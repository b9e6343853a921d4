#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "giram/eval.hpp"

using namespace giram;

namespace {
std::vector<PredictionRecord> ranks(std::initializer_list<std::size_t> rs) {
  std::vector<PredictionRecord> out;
  for (auto r : rs) out.push_back({r, 0, 0});
  return out;
}
}  // namespace

TEST(RankOfTruth, Examples) {
  EXPECT_EQ(rank_of_truth(Vector{{0.2, 0.5, 0.3}}, 2), 2u);
  EXPECT_EQ(rank_of_truth(Vector{{0.2, 0.5, 0.3}}, 1), 1u);
  EXPECT_EQ(rank_of_truth(Vector{{0.2, 0.5, 0.3}}, 0), 3u);
  EXPECT_THROW(rank_of_truth(Vector{{0.2, 0.5}}, 2), DataError);
}

TEST(RankOfTruth, TiesFavourLowerIndex) {
  const Vector s = Vector::Constant(4, 0.25);
  for (std::uint32_t i = 0; i < 4; ++i) EXPECT_EQ(rank_of_truth(s, i), i + 1);
}

TEST(RankOfTruth, MatchesSortOracle) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> v(0, 5);  // coarse values force ties
  for (int trial = 0; trial < 300; ++trial) {
    Vector s(1 + trial % 20);
    for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = v(rng);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(s.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return s(a) > s(b); });
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      EXPECT_EQ(rank_of_truth(s, static_cast<std::uint32_t>(order[pos])), pos + 1);
    }
  }
}

TEST(AccAtK, Examples) {
  const auto r = ranks({1, 3, 20});
  EXPECT_NEAR(acc_at_k(r, 5), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(acc_at_k(r, 20), 1.0, 1e-15);
  EXPECT_NEAR(acc_at_k(r, 1), 1.0 / 3.0, 1e-15);
  EXPECT_THROW(acc_at_k({}, 5), DataError);
}

TEST(AccAtK, MonotoneInK) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> r(1, 40);
  std::vector<PredictionRecord> recs;
  for (int i = 0; i < 200; ++i) recs.push_back({r(rng), 0, 0});
  double prev = 0.0;
  for (std::size_t k = 1; k <= 40; ++k) {
    const double a = acc_at_k(recs, k);
    EXPECT_GE(a, prev);
    prev = a;
  }
  EXPECT_EQ(prev, 1.0);
}

TEST(Mrr, Examples) {
  EXPECT_DOUBLE_EQ(mrr(ranks({1, 2})), 0.75);
  EXPECT_DOUBLE_EQ(mrr(ranks({4, 4})), 0.25);
  EXPECT_DOUBLE_EQ(mrr(ranks({1})), 1.0);
  EXPECT_THROW(mrr({}), DataError);
}

TEST(Summarize, Fields) {
  const auto m = summarize(ranks({1, 6, 11, 30}));
  EXPECT_DOUBLE_EQ(m.acc5, 0.25);
  EXPECT_DOUBLE_EQ(m.acc10, 0.5);
  EXPECT_DOUBLE_EQ(m.acc20, 0.75);
  EXPECT_DOUBLE_EQ(m.mrr, (1.0 + 1.0 / 6 + 1.0 / 11 + 1.0 / 30) / 4);
  EXPECT_EQ(m.n, 4u);
}
