#pragma once

// Multi-key retrieval over a user's interest memory.
//
// Every query key ranks all entries by cosine similarity. Ranks from the
// different keys are merged with reciprocal rank fusion, softmaxed, and used
// to weight the stored values.

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "giram/diffmath.hpp"
#include "giram/error.hpp"
#include "giram/memory.hpp"

namespace giram {

struct RrfConfig {
  double a = 50.0;

  void validate() const {
    if (!(a > 0.0)) throw ConfigError("RRF smoothing constant must be > 0");
  }
};

/// 1-based rank of each entry under `key`; earlier entries win ties.
inline std::vector<std::size_t> rank_entries(const UserMemory& mem, const Vector& key) {
  if (mem.empty()) throw DataError("rank_entries: empty memory");
  const std::size_t n = mem.size();
  std::vector<double> sim(n);
  for (std::size_t i = 0; i < n; ++i) sim[i] = cosine_similarity(key, mem[i].key);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
  std::vector<std::size_t> rank(n);
  for (std::size_t r = 0; r < n; ++r) rank[order[r]] = r + 1;
  return rank;
}

inline Vector rrf_scores(const UserMemory& mem, std::span<const Vector> keys, const RrfConfig& cfg) {
  cfg.validate();
  if (keys.empty()) throw DataError("rrf_scores: no query keys");
  Vector scores = Vector::Zero(static_cast<Eigen::Index>(mem.size()));
  for (const auto& k : keys) {
    const auto rank = rank_entries(mem, k);
    for (std::size_t m = 0; m < rank.size(); ++m) {
      scores(static_cast<Eigen::Index>(m)) += 1.0 / (static_cast<double>(rank[m]) + cfg.a);
    }
  }
  return scores;
}

/// Densified sum of entry values weighted by `weights`.
inline Vector weighted_values(const UserMemory& mem, const Vector& weights, std::size_t dim) {
  Vector out = Vector::Zero(static_cast<Eigen::Index>(dim));
  for (std::size_t m = 0; m < mem.size(); ++m) {
    const auto& v = mem[m].value;
    if (v.dim != dim) throw ShapeError("memory value dimension mismatch");
    const double w = weights(static_cast<Eigen::Index>(m));
    for (const auto& e : v.entries) out(e.index) += w * e.prob;
  }
  return out;
}

/// Sustained interest over `dim` POIs; the zero vector when memory is empty.
inline Vector sustained_interest(const UserMemory& mem, std::span<const Vector> keys, const RrfConfig& cfg,
                                 std::size_t dim) {
  if (mem.empty()) return Vector::Zero(static_cast<Eigen::Index>(dim));
  return weighted_values(mem, ad::softmax(rrf_scores(mem, keys, cfg)), dim);
}

/// Single-key ablation: the value of the entry nearest to `key`.
inline Vector nearest_interest(const UserMemory& mem, const Vector& key, std::size_t dim) {
  if (mem.empty()) return Vector::Zero(static_cast<Eigen::Index>(dim));
  const auto m = mem.find_best_match(key);
  Vector w = Vector::Zero(static_cast<Eigen::Index>(mem.size()));
  w(static_cast<Eigen::Index>(m->index)) = 1.0;
  return weighted_values(mem, w, dim);
}

}  // namespace giram
