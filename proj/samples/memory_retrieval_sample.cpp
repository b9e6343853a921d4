// Small walk-through of the interest memory: a few updates for one user, then
// sustained-interest retrieval with several query keys and fusion with a
// recent prediction.

#include <cstdio>
#include <vector>

#include "giram/fusion.hpp"
#include "giram/memory.hpp"
#include "giram/retrieval.hpp"

namespace {

void print_vector(const char* label, const giram::Vector& v) {
  std::printf("%-10s", label);
  for (Eigen::Index i = 0; i < v.size(); ++i) std::printf(" %.3f", v(i));
  std::printf("\n");
}

}  // namespace

int main() {
  using giram::Vector;
  constexpr std::size_t kPois = 6;

  giram::UserMemory mem(/*capacity=*/3, /*top_k=*/2);
  const double alpha = 0.6;
  const double delta = 0.95;

  // Morning coffee, lunch, gym, then morning coffee again (merged), then a new
  // evening habit that pushes out the oldest entry.
  struct Step {
    Vector key;
    Vector scores;
    std::int64_t ts;
  };
  const std::vector<Step> steps = {
      {Vector{{1.0, 0.0, 0.0}}, Vector{{3.0, 1.0, 0.0, 0.0, 0.0, 0.0}}, 100},
      {Vector{{0.0, 1.0, 0.0}}, Vector{{0.0, 0.0, 3.0, 1.0, 0.0, 0.0}}, 200},
      {Vector{{0.0, 0.0, 1.0}}, Vector{{0.0, 0.0, 0.0, 0.0, 3.0, 0.0}}, 300},
      {Vector{{0.99, 0.05, 0.0}}, Vector{{1.0, 3.0, 0.0, 0.0, 0.0, 0.0}}, 400},
      {Vector{{-1.0, 0.0, 0.2}}, Vector{{0.0, 0.0, 0.0, 0.0, 0.0, 4.0}}, 500},
  };
  for (const auto& s : steps) {
    const auto outcome = mem.apply_update(s.key, giram::topk_sparse(s.scores, mem.top_k()), alpha, delta, s.ts);
    std::printf("t=%lld  %-8s  entries=%zu\n", static_cast<long long>(s.ts), giram::to_string(outcome), mem.size());
  }
  std::printf("\n");
  for (std::size_t i = 0; i < mem.size(); ++i) {
    std::printf("entry %zu  ts=%lld  ", i, static_cast<long long>(mem[i].timestamp));
    print_vector("value", mem[i].value.dense());
  }

  // Three query keys around "morning".
  const std::vector<Vector> keys = {Vector{{1.0, 0.1, 0.0}}, Vector{{0.9, 0.0, 0.1}}, Vector{{0.8, 0.3, 0.0}}};
  const giram::RrfConfig rrf;
  std::printf("\n");
  print_vector("rrf", giram::rrf_scores(mem, keys, rrf));
  const Vector sustained = giram::sustained_interest(mem, keys, rrf, kPois);
  print_vector("sustained", sustained);

  const Vector recent = giram::ad::softmax(Vector{{0.5, 0.5, 0.0, 0.0, 0.0, 2.0}});
  print_vector("recent", recent);
  const double beta = giram::adaptive_weight(0.4, 1.0, /*s_u=*/0.9, /*s_mean=*/0.7);
  std::printf("beta      %.3f\n", beta);
  print_vector("fused", giram::fuse(sustained, recent, beta));
  return 0;
}
