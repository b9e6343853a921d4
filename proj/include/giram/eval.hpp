#pragma once

// Ranking metrics for next-POI prediction.

#include <cstdint>
#include <span>
#include <vector>

#include "giram/diffmath.hpp"
#include "giram/error.hpp"

namespace giram {

struct PredictionRecord {
  std::size_t rank = 1;  // 1-based
  std::uint64_t trajectory = 0;
  std::size_t position = 0;  // length of the prefix that was scored
};

/// 1 + #POIs scoring strictly higher + #equal-score POIs with a lower index.
inline std::size_t rank_of_truth(const Vector& scores, std::uint32_t truth) {
  if (truth >= static_cast<std::uint32_t>(scores.size())) throw DataError("ground-truth POI index out of range");
  const double t = scores(truth);
  std::size_t rank = 1;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const double s = scores(i);
    if (s > t || (s == t && i < static_cast<Eigen::Index>(truth))) ++rank;
  }
  return rank;
}

inline double acc_at_k(std::span<const PredictionRecord> records, std::size_t k) {
  if (records.empty()) throw DataError("acc_at_k: no prediction records");
  std::size_t hits = 0;
  for (const auto& r : records) hits += r.rank <= k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

inline double mrr(std::span<const PredictionRecord> records) {
  if (records.empty()) throw DataError("mrr: no prediction records");
  double total = 0.0;
  for (const auto& r : records) total += 1.0 / static_cast<double>(r.rank);
  return total / static_cast<double>(records.size());
}

struct Metrics {
  double acc5 = 0.0;
  double acc10 = 0.0;
  double acc20 = 0.0;
  double mrr = 0.0;
  std::size_t n = 0;
};

inline Metrics summarize(std::span<const PredictionRecord> records) {
  return {acc_at_k(records, 5), acc_at_k(records, 10), acc_at_k(records, 20), mrr(records), records.size()};
}

enum class EvalTargets { AllPrefixes, LastOnly };

}  // namespace giram
