#pragma once

// Consistency scores, adaptive weights, and the two stages of the method:
// writing a finetuned block into memory (update) and answering queries by
// mixing retrieved sustained interest with the personalized model (deployment).

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "giram/backbone.hpp"
#include "giram/dataset.hpp"
#include "giram/error.hpp"
#include "giram/keyenc.hpp"
#include "giram/keygen.hpp"
#include "giram/memory.hpp"
#include "giram/random.hpp"
#include "giram/retrieval.hpp"

namespace giram {

class ConsistencyTable {
 public:
  ConsistencyTable() = default;

  /// Builds the table from defined scores; the mean is over these users only.
  explicit ConsistencyTable(std::map<std::string, double> scores) : scores_(std::move(scores)) {
    if (!scores_.empty()) {
      double total = 0.0;
      for (auto& [_, s] : scores_) {
        if (!std::isfinite(s)) throw NumericError("non-finite consistency score");
        s = std::clamp(s, -1.0, 1.0);
        total += s;
      }
      mean_ = std::clamp(total / static_cast<double>(scores_.size()), -1.0, 1.0);
    }
  }

  const std::map<std::string, double>& scores() const { return scores_; }
  std::optional<double> mean() const { return mean_; }
  bool empty() const { return scores_.empty(); }

  /// s_u, or the population mean for users without a defined score.
  std::optional<double> score(const std::string& user) const {
    auto it = scores_.find(user);
    return it == scores_.end() ? mean_ : std::optional<double>(it->second);
  }

  /// s_u - s_mean; zero when either side is undefined.
  double deviation(const std::string& user) const {
    const auto s = score(user);
    return (s && mean_) ? *s - *mean_ : 0.0;
  }

  friend bool operator==(const ConsistencyTable&, const ConsistencyTable&) = default;

 private:
  std::map<std::string, double> scores_;
  std::optional<double> mean_;
};

/// Cosine of each user's concatenated collective / personalized outputs.
/// Zero-norm concatenations are left undefined and fall back to the mean.
inline ConsistencyTable consistency_from_outputs(const std::map<std::string, std::pair<Vector, Vector>>& outputs) {
  std::map<std::string, double> scores;
  for (const auto& [user, xs] : outputs) {
    const auto& [xc, xp] = xs;
    if (xc.size() != xp.size()) throw ShapeError("consistency: output dimension mismatch");
    const double nc = xc.norm();
    const double np = xp.norm();
    if (nc == 0.0 || np == 0.0) continue;
    scores.emplace(user, xc.dot(xp) / (nc * np));
  }
  return ConsistencyTable(std::move(scores));
}

namespace fusion_detail {

inline Vector concat(const std::vector<Vector>& parts) {
  Eigen::Index n = 0;
  for (const auto& p : parts) n += p.size();
  Vector out(n);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.segment(off, p.size()) = p;
    off += p.size();
  }
  return out;
}

/// Trajectory indices grouped by user name, each group ordered by last
/// check-in time (stable on ties).
inline std::map<std::string, std::vector<std::size_t>> group_by_user(std::span<const EncodedTrajectory> trajs,
                                                                     const Index& users) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    if (trajs[i].visits.empty()) throw DataError("empty trajectory in block");
    groups[users.name(trajs[i].user)].push_back(i);
  }
  for (auto& [_, idx] : groups) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return trajs[a].last_timestamp() < trajs[b].last_timestamp();
    });
  }
  return groups;
}

}  // namespace fusion_detail

inline ConsistencyTable consistency_scores(const ModelPair& pair, std::span<const EncodedTrajectory> trajs,
                                           const Index& users) {
  std::map<std::string, std::pair<Vector, Vector>> outputs;
  for (const auto& [user, idx] : fusion_detail::group_by_user(trajs, users)) {
    std::vector<Vector> xc, xp;
    for (std::size_t i : idx) {
      xc.push_back(score_trajectory(*pair.collective, trajs[i]));
      xp.push_back(score_trajectory(*pair.personalized, trajs[i]));
    }
    outputs.emplace(user, std::make_pair(fusion_detail::concat(xc), fusion_detail::concat(xp)));
  }
  return consistency_from_outputs(outputs);
}

/// base + gamma * deviation, clamped into [0, 1].
inline double adaptive_weight(double base, double gamma, double deviation) {
  return std::clamp(base + gamma * deviation, 0.0, 1.0);
}

inline double adaptive_weight(double base, double gamma, double s_u, double s_mean) {
  return adaptive_weight(base, gamma, s_u - s_mean);
}

/// (1 - beta) sustained + beta recent; the recent interest alone when the
/// sustained vector is all zeros.
inline Vector fuse(const Vector& sustained, const Vector& recent, double beta) {
  if (sustained.size() != recent.size()) throw ShapeError("fuse: dimension mismatch");
  if (sustained.isZero(0.0)) return recent;
  return (1.0 - beta) * sustained + beta * recent;
}

enum class RetrievalMode { Generative, SingleKey };

struct FusionConfig {
  double alpha_base = 0.5;
  double beta_base = 0.5;
  double gamma = 0.5;
  double delta = 0.95;
  RetrievalMode retrieval = RetrievalMode::Generative;
  bool adaptive_weights = true;

  void validate() const {
    if (!(alpha_base >= 0.0 && alpha_base <= 1.0)) throw ConfigError("alpha_base must lie in [0, 1]");
    if (!(beta_base >= 0.0 && beta_base <= 1.0)) throw ConfigError("beta_base must lie in [0, 1]");
    if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
    if (!(delta >= -1.0 && delta <= 1.0)) throw ConfigError("delta must lie in [-1, 1]");
  }

  double alpha(const ConsistencyTable& table, const std::string& user) const {
    return adaptive_weights ? adaptive_weight(alpha_base, gamma, table.deviation(user)) : alpha_base;
  }
  double beta(const ConsistencyTable& table, const std::string& user) const {
    return adaptive_weights ? adaptive_weight(beta_base, gamma, table.deviation(user)) : beta_base;
  }
};

struct UpdateStats {
  std::size_t matched = 0;
  std::size_t inserted = 0;
  std::size_t evicted = 0;

  std::size_t total() const { return matched + inserted + evicted; }
};

/// Writes every trajectory of a finetuned block into memory and returns the
/// consistency table used to weight the updates.
inline ConsistencyTable update_stage(InterestMemory& mem, const ModelPair& pair,
                                     std::span<const EncodedTrajectory> trajs, const Index& users,
                                     const KeyEncoder& encoder, const FusionConfig& cfg,
                                     UpdateStats* stats = nullptr) {
  cfg.validate();
  ConsistencyTable table;
  const auto groups = fusion_detail::group_by_user(trajs, users);

  // Personalized outputs feed both the consistency scores and the values.
  std::vector<Vector> personal(trajs.size());
  std::map<std::string, std::pair<Vector, Vector>> outputs;
  for (const auto& [user, idx] : groups) {
    std::vector<Vector> xc, xp;
    for (std::size_t i : idx) {
      personal[i] = score_trajectory(*pair.personalized, trajs[i]);
      xc.push_back(score_trajectory(*pair.collective, trajs[i]));
      xp.push_back(personal[i]);
    }
    outputs.emplace(user, std::make_pair(fusion_detail::concat(xc), fusion_detail::concat(xp)));
  }
  table = consistency_from_outputs(outputs);

  const std::size_t top_k = mem.config().top_k;
  for (const auto& [user, idx] : groups) {
    const double alpha = cfg.alpha(table, user);
    UserMemory& um = mem.user(user);
    for (std::size_t i : idx) {
      const Vector key = encoder.encode_key(trajs[i].visits);
      const auto value = topk_sparse(personal[i], top_k);
      const auto outcome = um.apply_update(key, value, alpha, cfg.delta, trajs[i].last_timestamp());
      if (stats) {
        if (outcome == UpdateOutcome::Matched) ++stats->matched;
        else if (outcome == UpdateOutcome::Inserted) ++stats->inserted;
        else ++stats->evicted;
      }
    }
  }
  return table;
}

/// Everything the deployment stage reads; all references must outlive it.
struct DeploymentContext {
  const InterestMemory& memory;
  const Backbone& personalized;
  const KeyEncoder& encoder;
  const KeyGenerator& generator;
  const ConsistencyTable& table;
  const Index& users;
  FusionConfig fusion;
  RrfConfig rrf;
  int num_keys = 20;
};

namespace fusion_detail {

inline Vector fuse_one(const DeploymentContext& ctx, const UserMemory* um, const std::string& user,
                       const Vector& key, const Vector& recent_scores, std::uint64_t seed) {
  const std::size_t dim = static_cast<std::size_t>(recent_scores.size());
  const Vector recent = ad::softmax(recent_scores);
  if (um == nullptr || um->empty()) return recent;
  Vector sustained;
  if (ctx.fusion.retrieval == RetrievalMode::SingleKey) {
    sustained = nearest_interest(*um, key, dim);
  } else {
    const auto keys = ctx.generator.generate_keys(key, ctx.num_keys, seed);
    sustained = sustained_interest(*um, keys, ctx.rrf, dim);
  }
  return fuse(sustained, recent, ctx.fusion.beta(ctx.table, user));
}

inline std::uint64_t prefix_seed(std::uint64_t seed, std::uint64_t traj_id, std::size_t len) {
  return derive_seed(derive_seed(seed, traj_id), static_cast<std::uint64_t>(len));
}

}  // namespace fusion_detail

/// Fused recommendation scores for the next check-in after `traj`.
inline Vector deployment_stage(const DeploymentContext& ctx, const EncodedTrajectory& traj, std::uint64_t seed) {
  if (traj.visits.empty()) throw DataError("cannot recommend from an empty trajectory");
  const std::string& user = ctx.users.name(traj.user);
  const Vector key = ctx.encoder.encode_key(traj.visits);
  const Vector scores = score_trajectory(ctx.personalized, traj);
  return fusion_detail::fuse_one(ctx, ctx.memory.find(user), user, key, scores,
                                 fusion_detail::prefix_seed(seed, traj.id, traj.visits.size()));
}

/// deployment_stage for every prefix 1..n of `traj`, sharing the recurrent
/// passes. Element i equals deployment_stage on the first i+1 visits.
inline std::vector<Vector> deployment_prefixes(const DeploymentContext& ctx, const EncodedTrajectory& traj,
                                               std::uint64_t seed) {
  if (traj.visits.empty()) throw DataError("cannot recommend from an empty trajectory");
  const std::string& user = ctx.users.name(traj.user);
  const UserMemory* um = ctx.memory.find(user);
  const auto keys = ctx.encoder.encode_prefix_keys(traj.visits);
  const auto scores = ctx.personalized.score_prefixes(traj.user, traj.visits);
  std::vector<Vector> out;
  out.reserve(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (!scores[i].allFinite()) throw NumericError("backbone produced non-finite scores");
    out.push_back(fusion_detail::fuse_one(ctx, um, user, keys[i], scores[i],
                                          fusion_detail::prefix_seed(seed, traj.id, i + 1)));
  }
  return out;
}

inline nlohmann::json to_json(const ConsistencyTable& t) {
  nlohmann::json j;
  j["scores"] = t.scores();
  j["mean"] = t.mean() ? nlohmann::json(*t.mean()) : nlohmann::json(nullptr);
  return j;
}

inline ConsistencyTable consistency_from_json(const nlohmann::json& j) {
  try {
    return ConsistencyTable(j.at("scores").get<std::map<std::string, double>>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed consistency table: ") + e.what());
  }
}

inline void save_consistency(const std::string& path, const ConsistencyTable& t) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write consistency table: " + path);
  out << to_json(t).dump(2) << '\n';
}

inline ConsistencyTable load_consistency(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open consistency table: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed consistency table: ") + e.what());
  }
  return consistency_from_json(j);
}

}  // namespace giram
