#pragma once

// Block-by-block continual experiment: train on the base block, then for each
// incremental block update every method, evaluate on the test half of the
// next block, checkpoint, and emit reports.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "giram/backbone.hpp"
#include "giram/dataset.hpp"
#include "giram/eval.hpp"
#include "giram/fusion.hpp"
#include "giram/ingest.hpp"
#include "giram/keyenc.hpp"
#include "giram/keygen.hpp"
#include "giram/memory.hpp"
#include "giram/retrieval.hpp"
#include "giram/synth.hpp"

namespace giram {

namespace fs = std::filesystem;
using nlohmann::json;

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> m{"static", "finetune", "retrain", "giram", "giram_single_key",
                                          "giram_fixed_weights"};
  return m;
}

inline bool is_giram_method(const std::string& m) { return m.rfind("giram", 0) == 0; }

struct TrainingConfig {
  int base_epochs = 10;
  int update_epochs = 10;
  int batch_size = 16;
  double lr = 1e-3;
  bool select_epoch_on_validation = true;
};

struct ExperimentConfig {
  std::string data_path;          // empty: generate from `synth`
  std::string category_map_path;  // optional
  SynthSpec synth;
  std::vector<std::string> methods{"static", "finetune", "retrain", "giram"};
  int n_blocks = 5;  // incremental blocks after the base block
  int min_count = 10;
  std::int64_t trajectory_interval = kSecondsPerWeek;
  int grid_rows = 100;
  int grid_cols = 100;
  EvalTargets targets = EvalTargets::AllPrefixes;
  BackboneConfig backbone;
  TrainingConfig training;
  KeyEncoderConfig keyenc;
  KeyGenConfig keygen;
  int keygen_max_keys = 2000;  // 0 = every trajectory key of the block
  MemoryConfig memory;
  FusionConfig fusion;
  RrfConfig rrf;
  std::uint64_t seed = 42;
  std::string output_dir = "runs/default";
  bool checkpoints = true;
  bool resume = false;

  void validate() const {
    if (methods.empty()) throw ConfigError("at least one method is required");
    for (const auto& m : methods) {
      if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end()) {
        throw ConfigError("unknown method '" + m + "'");
      }
    }
    if (n_blocks < 2) throw ConfigError("n_blocks must be >= 2 (one update plus one evaluation block)");
    if (min_count < 1) throw ConfigError("min_count must be >= 1");
    if (trajectory_interval <= 0) throw ConfigError("trajectory_interval must be positive");
    if (grid_rows < 1 || grid_cols < 1) throw ConfigError("grid dimensions must be positive");
    if (training.base_epochs < 0 || training.update_epochs < 0) throw ConfigError("epochs must be >= 0");
    if (training.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(training.lr > 0.0)) throw ConfigError("lr must be > 0");
    if (backbone.poi_dim < 1 || backbone.user_dim < 1 || backbone.hidden < 1) {
      throw ConfigError("backbone dimensions must be positive");
    }
    if (memory.capacity < 1 || memory.top_k < 1) throw ConfigError("memory capacity and top_k must be >= 1");
    if (keygen_max_keys < 0) throw ConfigError("keygen max_keys must be >= 0");
    keygen.validate();
    fusion.validate();
    rrf.validate();
    if (data_path.empty()) synth.validate();
  }
};

// ---------------------------------------------------------------------------
// JSON config

namespace config_detail {

inline void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, _] : j.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* s) { return k == s; })) {
      throw ConfigError("unknown key '" + k + "' in " + where);
    }
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("invalid value for '" + std::string(key) + "' in " + where);
  }
}

}  // namespace config_detail

inline json to_json(const ExperimentConfig& c) {
  const auto& s = c.synth;
  return json{
      {"data", {{"path", c.data_path}, {"category_map", c.category_map_path}}},
      {"synth",
       {{"n_users", s.n_users},
        {"n_pois", s.n_pois},
        {"n_blocks", s.n_blocks},
        {"events_per_block", s.events_per_block},
        {"weeks_per_block", s.weeks_per_block},
        {"profile_size", s.profile_size},
        {"profiles_per_user", s.profiles_per_user},
        {"n_clusters", s.n_clusters},
        {"n_categories", s.n_categories},
        {"n_derived_categories", s.n_derived_categories},
        {"trending_size", s.trending_size},
        {"trending_turnover", s.trending_turnover},
        {"trend_rate", s.trend_rate},
        {"trend_affinity_spread", s.trend_affinity_spread},
        {"drift_rate", s.drift_rate},
        {"noise_rate", s.noise_rate},
        {"hour_spread", s.hour_spread},
        {"start_time", s.start_time},
        {"seed", s.seed}}},
      {"methods", c.methods},
      {"n_blocks", c.n_blocks},
      {"min_count", c.min_count},
      {"trajectory_interval", c.trajectory_interval},
      {"grid", {{"rows", c.grid_rows}, {"cols", c.grid_cols}}},
      {"eval_targets", c.targets == EvalTargets::AllPrefixes ? "all_prefixes" : "last_only"},
      {"backbone",
       {{"kind", c.backbone.kind},
        {"poi_dim", c.backbone.poi_dim},
        {"user_dim", c.backbone.user_dim},
        {"hidden", c.backbone.hidden}}},
      {"training",
       {{"base_epochs", c.training.base_epochs},
        {"update_epochs", c.training.update_epochs},
        {"batch_size", c.training.batch_size},
        {"lr", c.training.lr},
        {"select_epoch_on_validation", c.training.select_epoch_on_validation}}},
      {"keyenc",
       {{"embed_dim", c.keyenc.embed_dim},
        {"key_dim", c.keyenc.key_dim},
        {"proj_dim", c.keyenc.proj_dim},
        {"frequencies", c.keyenc.frequencies}}},
      {"keygen",
       {{"num_keys", c.keygen.num_keys},
        {"kl_weight", c.keygen.kl_weight},
        {"div_weight", c.keygen.div_weight},
        {"div_eps", c.keygen.div_eps},
        {"hidden", c.keygen.hidden},
        {"latent_dim", c.keygen.latent_dim},
        {"epochs", c.keygen.epochs},
        {"batch_size", c.keygen.batch_size},
        {"lr", c.keygen.adam.lr},
        {"max_keys", c.keygen_max_keys}}},
      {"memory", {{"capacity", c.memory.capacity}, {"top_k", c.memory.top_k}}},
      {"fusion",
       {{"alpha_base", c.fusion.alpha_base},
        {"beta_base", c.fusion.beta_base},
        {"gamma", c.fusion.gamma},
        {"delta", c.fusion.delta},
        {"retrieval", c.fusion.retrieval == RetrievalMode::Generative ? "generative" : "single_key"},
        {"adaptive_weights", c.fusion.adaptive_weights}}},
      {"rrf", {{"a", c.rrf.a}}},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"checkpoints", c.checkpoints},
      {"resume", c.resume},
  };
}

inline ExperimentConfig config_from_json(const json& j) {
  using namespace config_detail;
  ExperimentConfig c;
  reject_unknown(j,
                 {"data", "synth", "methods", "n_blocks", "min_count", "trajectory_interval", "grid", "eval_targets",
                  "backbone", "training", "keyenc", "keygen", "memory", "fusion", "rrf", "seed", "output_dir",
                  "checkpoints", "resume"},
                 "config");
  if (j.contains("data")) {
    const auto& d = j["data"];
    reject_unknown(d, {"path", "category_map"}, "data");
    read(d, "path", c.data_path, "data");
    read(d, "category_map", c.category_map_path, "data");
  }
  if (j.contains("synth")) {
    const auto& s = j["synth"];
    reject_unknown(s,
                   {"n_users", "n_pois", "n_blocks", "events_per_block", "weeks_per_block", "profile_size",
                    "profiles_per_user", "n_clusters", "n_categories", "n_derived_categories", "trending_size",
                    "trending_turnover", "trend_rate", "trend_affinity_spread", "drift_rate", "noise_rate", "hour_spread",
                    "start_time", "seed"},
                   "synth");
    auto& o = c.synth;
    read(s, "n_users", o.n_users, "synth");
    read(s, "n_pois", o.n_pois, "synth");
    read(s, "n_blocks", o.n_blocks, "synth");
    read(s, "events_per_block", o.events_per_block, "synth");
    read(s, "weeks_per_block", o.weeks_per_block, "synth");
    read(s, "profile_size", o.profile_size, "synth");
    read(s, "profiles_per_user", o.profiles_per_user, "synth");
    read(s, "n_clusters", o.n_clusters, "synth");
    read(s, "n_categories", o.n_categories, "synth");
    read(s, "n_derived_categories", o.n_derived_categories, "synth");
    read(s, "trending_size", o.trending_size, "synth");
    read(s, "trending_turnover", o.trending_turnover, "synth");
    read(s, "trend_rate", o.trend_rate, "synth");
    read(s, "trend_affinity_spread", o.trend_affinity_spread, "synth");
    read(s, "drift_rate", o.drift_rate, "synth");
    read(s, "noise_rate", o.noise_rate, "synth");
    read(s, "hour_spread", o.hour_spread, "synth");
    read(s, "start_time", o.start_time, "synth");
    read(s, "seed", o.seed, "synth");
  }
  read(j, "methods", c.methods, "config");
  read(j, "n_blocks", c.n_blocks, "config");
  read(j, "min_count", c.min_count, "config");
  read(j, "trajectory_interval", c.trajectory_interval, "config");
  if (j.contains("grid")) {
    reject_unknown(j["grid"], {"rows", "cols"}, "grid");
    read(j["grid"], "rows", c.grid_rows, "grid");
    read(j["grid"], "cols", c.grid_cols, "grid");
  }
  if (j.contains("eval_targets")) {
    std::string t;
    read(j, "eval_targets", t, "config");
    if (t == "all_prefixes") c.targets = EvalTargets::AllPrefixes;
    else if (t == "last_only") c.targets = EvalTargets::LastOnly;
    else throw ConfigError("eval_targets must be 'all_prefixes' or 'last_only'");
  }
  if (j.contains("backbone")) {
    const auto& b = j["backbone"];
    reject_unknown(b, {"kind", "poi_dim", "user_dim", "hidden"}, "backbone");
    read(b, "kind", c.backbone.kind, "backbone");
    read(b, "poi_dim", c.backbone.poi_dim, "backbone");
    read(b, "user_dim", c.backbone.user_dim, "backbone");
    read(b, "hidden", c.backbone.hidden, "backbone");
  }
  if (j.contains("training")) {
    const auto& t = j["training"];
    reject_unknown(t, {"base_epochs", "update_epochs", "batch_size", "lr", "select_epoch_on_validation"}, "training");
    read(t, "base_epochs", c.training.base_epochs, "training");
    read(t, "update_epochs", c.training.update_epochs, "training");
    read(t, "batch_size", c.training.batch_size, "training");
    read(t, "lr", c.training.lr, "training");
    read(t, "select_epoch_on_validation", c.training.select_epoch_on_validation, "training");
  }
  if (j.contains("keyenc")) {
    const auto& k = j["keyenc"];
    reject_unknown(k, {"embed_dim", "key_dim", "proj_dim", "frequencies"}, "keyenc");
    read(k, "embed_dim", c.keyenc.embed_dim, "keyenc");
    read(k, "key_dim", c.keyenc.key_dim, "keyenc");
    read(k, "proj_dim", c.keyenc.proj_dim, "keyenc");
    read(k, "frequencies", c.keyenc.frequencies, "keyenc");
  }
  if (j.contains("keygen")) {
    const auto& k = j["keygen"];
    reject_unknown(k,
                   {"num_keys", "kl_weight", "div_weight", "div_eps", "hidden", "latent_dim", "epochs", "batch_size",
                    "lr", "max_keys"},
                   "keygen");
    read(k, "num_keys", c.keygen.num_keys, "keygen");
    read(k, "kl_weight", c.keygen.kl_weight, "keygen");
    read(k, "div_weight", c.keygen.div_weight, "keygen");
    read(k, "div_eps", c.keygen.div_eps, "keygen");
    read(k, "hidden", c.keygen.hidden, "keygen");
    read(k, "latent_dim", c.keygen.latent_dim, "keygen");
    read(k, "epochs", c.keygen.epochs, "keygen");
    read(k, "batch_size", c.keygen.batch_size, "keygen");
    read(k, "lr", c.keygen.adam.lr, "keygen");
    read(k, "max_keys", c.keygen_max_keys, "keygen");
  }
  if (j.contains("memory")) {
    reject_unknown(j["memory"], {"capacity", "top_k"}, "memory");
    read(j["memory"], "capacity", c.memory.capacity, "memory");
    read(j["memory"], "top_k", c.memory.top_k, "memory");
  }
  if (j.contains("fusion")) {
    const auto& f = j["fusion"];
    reject_unknown(f, {"alpha_base", "beta_base", "gamma", "delta", "retrieval", "adaptive_weights"}, "fusion");
    read(f, "alpha_base", c.fusion.alpha_base, "fusion");
    read(f, "beta_base", c.fusion.beta_base, "fusion");
    read(f, "gamma", c.fusion.gamma, "fusion");
    read(f, "delta", c.fusion.delta, "fusion");
    read(f, "adaptive_weights", c.fusion.adaptive_weights, "fusion");
    if (f.contains("retrieval")) {
      std::string r;
      read(f, "retrieval", r, "fusion");
      if (r == "generative") c.fusion.retrieval = RetrievalMode::Generative;
      else if (r == "single_key") c.fusion.retrieval = RetrievalMode::SingleKey;
      else throw ConfigError("fusion.retrieval must be 'generative' or 'single_key'");
    }
  }
  if (j.contains("rrf")) {
    reject_unknown(j["rrf"], {"a"}, "rrf");
    read(j["rrf"], "a", c.rrf.a, "rrf");
  }
  read(j, "seed", c.seed, "config");
  read(j, "output_dir", c.output_dir, "config");
  read(j, "checkpoints", c.checkpoints, "config");
  read(j, "resume", c.resume, "config");
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return config_from_json(j);
}

/// Hash of every setting that affects results (output location and resume
/// flags excluded).
inline std::string config_hash(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("output_dir");
  j.erase("checkpoints");
  j.erase("resume");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

// ---------------------------------------------------------------------------
// Data preparation

struct PreparedData {
  Vocabulary vocab;
  std::vector<std::vector<EncodedTrajectory>> blocks;  // 0 = base, then 1..n_blocks
  std::size_t n_checkins = 0;
};

inline PreparedData prepare_data(const std::vector<CheckIn>& raw, const CategoryMap& cmap, const ExperimentConfig& cfg) {
  auto checkins = filter_sparse(raw, cfg.min_count);
  if (checkins.empty()) throw DataError("no check-ins survive the sparsity filter");
  const auto grid = make_grid(bounding_box(checkins), cfg.grid_rows, cfg.grid_cols);
  PreparedData out{Vocabulary::build(checkins, cmap, grid), {}, checkins.size()};
  const auto parts = partition_blocks(checkins, cfg.n_blocks);
  out.blocks.push_back(out.vocab.encode(build_trajectories(parts.base, cfg.trajectory_interval), 0));
  for (const auto& b : parts.incremental) {
    out.blocks.push_back(out.vocab.encode(build_trajectories(b, cfg.trajectory_interval), b.index));
  }
  for (std::size_t b = 0; b < out.blocks.size(); ++b) {
    if (out.blocks[b].empty()) throw DataError("block " + std::to_string(b) + " has no trajectories");
  }
  return out;
}

struct RawData {
  std::vector<CheckIn> checkins;
  CategoryMap categories;
};

inline RawData load_raw_data(const ExperimentConfig& cfg) {
  if (cfg.data_path.empty()) {
    auto d = generate(cfg.synth);
    return {std::move(d.checkins), std::move(d.categories)};
  }
  RawData r{load_checkins(cfg.data_path), {}};
  if (!cfg.category_map_path.empty()) r.categories = load_category_map(cfg.category_map_path);
  return r;
}

// ---------------------------------------------------------------------------
// Results

struct BlockResult {
  int block = 0;
  std::string method;
  Metrics metrics;
};

struct MemoryStats {
  int block = 0;
  std::string variant;  // "adaptive" or "fixed"
  std::size_t users = 0;
  std::size_t entries = 0;
  std::size_t snapshot_bytes = 0;
  UpdateStats updates;
  double s_mean = 0.0;
  double s_min = 0.0;
  double s_max = 0.0;
};

inline MemoryStats memory_stats(int block, const std::string& variant, const InterestMemory& mem,
                                const ConsistencyTable& table, const UpdateStats& st, std::size_t bytes) {
  MemoryStats m{block, variant, mem.num_users(), mem.num_entries(), bytes, st};
  if (table.mean()) m.s_mean = *table.mean();
  bool first = true;
  for (const auto& [_, s] : table.scores()) {
    m.s_min = first ? s : std::min(m.s_min, s);
    m.s_max = first ? s : std::max(m.s_max, s);
    first = false;
  }
  return m;
}

struct ExperimentResult {
  std::string config_hash;
  std::vector<std::string> methods;
  std::vector<BlockResult> blocks;  // ordered by block, then method order
  std::vector<MemoryStats> memory;
  std::size_t n_checkins = 0;
  std::size_t n_users = 0;
  std::size_t n_pois = 0;
  std::vector<std::size_t> trajectories_per_block;
  /// Wall-clock seconds, method -> block -> phase -> seconds. Not deterministic.
  std::map<std::string, std::map<int, std::map<std::string, double>>> timing;

  std::vector<int> evaluated_blocks() const {
    std::vector<int> out;
    for (const auto& b : blocks)
      if (out.empty() || out.back() != b.block) out.push_back(b.block);
    return out;
  }

  const Metrics* find(int block, const std::string& method) const {
    for (const auto& b : blocks)
      if (b.block == block && b.method == method) return &b.metrics;
    return nullptr;
  }

  /// Unweighted mean over evaluated blocks.
  Metrics mean(const std::string& method) const {
    Metrics m;
    int count = 0;
    for (const auto& b : blocks) {
      if (b.method != method) continue;
      m.acc5 += b.metrics.acc5;
      m.acc10 += b.metrics.acc10;
      m.acc20 += b.metrics.acc20;
      m.mrr += b.metrics.mrr;
      m.n += b.metrics.n;
      ++count;
    }
    if (count == 0) throw DataError("no results for method '" + method + "'");
    m.acc5 /= count;
    m.acc10 /= count;
    m.acc20 /= count;
    m.mrr /= count;
    return m;
  }
};

// ---------------------------------------------------------------------------
// Evaluation helpers

/// Test instances of one trajectory: prefix length -> next POI.
inline std::vector<std::size_t> target_prefixes(const EncodedTrajectory& t, EvalTargets targets) {
  std::vector<std::size_t> out;
  if (t.visits.size() < 2) return out;
  if (targets == EvalTargets::LastOnly) {
    out.push_back(t.visits.size() - 1);
  } else {
    for (std::size_t len = 1; len < t.visits.size(); ++len) out.push_back(len);
  }
  return out;
}

inline std::vector<PredictionRecord> evaluate_backbone(const Backbone& model, std::span<const EncodedTrajectory> test,
                                                       EvalTargets targets) {
  std::vector<PredictionRecord> records;
  for (const auto& t : test) {
    const auto lens = target_prefixes(t, targets);
    if (lens.empty()) continue;
    const auto scores = model.score_prefixes(t.user, t.visits);
    for (std::size_t len : lens) {
      records.push_back({rank_of_truth(scores[len - 1], t.visits[len].poi), t.id, len});
    }
  }
  return records;
}

inline std::vector<PredictionRecord> evaluate_giram(const DeploymentContext& ctx,
                                                    std::span<const EncodedTrajectory> test, EvalTargets targets,
                                                    std::uint64_t seed) {
  std::vector<PredictionRecord> records;
  for (const auto& t : test) {
    const auto lens = target_prefixes(t, targets);
    if (lens.empty()) continue;
    const auto scores = deployment_prefixes(ctx, t, seed);
    for (std::size_t len : lens) {
      records.push_back({rank_of_truth(scores[len - 1], t.visits[len].poi), t.id, len});
    }
  }
  return records;
}

// ---------------------------------------------------------------------------
// Run

namespace experiment_detail {

/// Rethrows module errors with the block and phase prepended, keeping the type.
template <class F>
auto in_phase(int block, const char* phase, F&& f) -> decltype(f()) {
  const std::string where = "block " + std::to_string(block) + ", " + phase + ": ";
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(where + e.what());
  } catch (const DataError& e) {
    throw DataError(where + e.what());
  } catch (const NumericError& e) {
    throw NumericError(where + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(where + e.what());
  }
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline std::vector<EncodedTrajectory> concat_blocks(const std::vector<std::vector<EncodedTrajectory>>& blocks,
                                                    std::size_t upto) {
  std::vector<EncodedTrajectory> all;
  for (std::size_t b = 0; b <= upto; ++b) all.insert(all.end(), blocks[b].begin(), blocks[b].end());
  return all;
}

/// Seeded val/test halves of an encoded block (val gets the larger half).
inline std::pair<std::vector<EncodedTrajectory>, std::vector<EncodedTrajectory>> split_encoded(
    const std::vector<EncodedTrajectory>& trajs, std::uint64_t seed) {
  std::vector<std::size_t> order(trajs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
  }
  const std::size_t n_val = (order.size() + 1) / 2;
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> test_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  std::pair<std::vector<EncodedTrajectory>, std::vector<EncodedTrajectory>> out;
  for (std::size_t i : val_idx) out.first.push_back(trajs[i]);
  for (std::size_t i : test_idx) out.second.push_back(trajs[i]);
  return out;
}

inline std::size_t snapshot_size(const InterestMemory& mem) {
  std::ostringstream os(std::ios::binary);
  save_memory(os, mem);
  return os.str().size();
}

}  // namespace experiment_detail

/// Memory state of one update flavour (adaptive or fixed weights).
struct MemoryVariant {
  bool adaptive = true;
  InterestMemory memory;
  ConsistencyTable table;

  std::string tag() const { return adaptive ? "adaptive" : "fixed"; }
};

namespace experiment_detail {

/// Results gathered so far; stored with every block checkpoint.
inline json progress_json(const ExperimentResult& r) {
  json blocks = json::array();
  for (const auto& b : r.blocks) {
    blocks.push_back({{"block", b.block},
                      {"method", b.method},
                      {"acc5", b.metrics.acc5},
                      {"acc10", b.metrics.acc10},
                      {"acc20", b.metrics.acc20},
                      {"mrr", b.metrics.mrr},
                      {"n", b.metrics.n}});
  }
  json mem = json::array();
  for (const auto& s : r.memory) {
    mem.push_back({{"block", s.block},
                   {"variant", s.variant},
                   {"users", s.users},
                   {"entries", s.entries},
                   {"snapshot_bytes", s.snapshot_bytes},
                   {"matched", s.updates.matched},
                   {"inserted", s.updates.inserted},
                   {"evicted", s.updates.evicted},
                   {"s_mean", s.s_mean},
                   {"s_min", s.s_min},
                   {"s_max", s.s_max}});
  }
  json timing = json::object();
  for (const auto& [method, blocks_] : r.timing)
    for (const auto& [block, phases] : blocks_)
      for (const auto& [phase, secs] : phases) timing[method][std::to_string(block)][phase] = secs;
  return {{"blocks", blocks}, {"memory", mem}, {"timing", timing}};
}

inline void restore_progress(const json& j, ExperimentResult& r) {
  try {
    for (const auto& b : j.at("blocks")) {
      r.blocks.push_back({b.at("block").get<int>(), b.at("method").get<std::string>(),
                          Metrics{b.at("acc5").get<double>(), b.at("acc10").get<double>(),
                                  b.at("acc20").get<double>(), b.at("mrr").get<double>(),
                                  b.at("n").get<std::size_t>()}});
    }
    for (const auto& s : j.at("memory")) {
      MemoryStats m;
      m.block = s.at("block").get<int>();
      m.variant = s.at("variant").get<std::string>();
      m.users = s.at("users").get<std::size_t>();
      m.entries = s.at("entries").get<std::size_t>();
      m.snapshot_bytes = s.at("snapshot_bytes").get<std::size_t>();
      m.updates = {s.at("matched").get<std::size_t>(), s.at("inserted").get<std::size_t>(),
                   s.at("evicted").get<std::size_t>()};
      m.s_mean = s.at("s_mean").get<double>();
      m.s_min = s.at("s_min").get<double>();
      m.s_max = s.at("s_max").get<double>();
      r.memory.push_back(std::move(m));
    }
    for (const auto& [method, blocks] : j.at("timing").items())
      for (const auto& [block, phases] : blocks.items())
        for (const auto& [phase, secs] : phases.items()) r.timing[method][std::stoi(block)][phase] = secs.get<double>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed checkpoint progress: ") + e.what());
  } catch (const std::logic_error& e) {
    throw DataError(std::string("malformed checkpoint progress: ") + e.what());
  }
}

inline std::string read_first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string s;
  std::getline(in, s);
  csv::strip_cr(s);
  return s;
}

/// Highest block whose checkpoint is complete; -1 when there is none. A
/// complete checkpoint written under a different configuration is an error.
inline int latest_checkpoint(const fs::path& root, const std::string& hash, int n_blocks) {
  for (int b = n_blocks - 1; b >= 0; --b) {
    const auto marker = root / ("block_" + std::to_string(b)) / "config_hash.txt";
    if (!fs::exists(marker)) continue;
    const auto stored = read_first_line(marker);
    if (stored != hash) {
      throw ConfigError("checkpoint " + marker.string() + " was written with config hash " + stored +
                        ", current config hashes to " + hash);
    }
    return b;
  }
  return -1;
}

inline void save_model(const fs::path& p, const Backbone& m) { ad::save_parameters(p.string(), m.parameters()); }

inline void load_model(const fs::path& p, Backbone& m) { ad::load_parameters(p.string(), m.parameters()); }

inline void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

inline json read_json(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("malformed " + p.string() + ": " + e.what());
  }
}

}  // namespace experiment_detail

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const RawData& raw,
                                       const std::function<void(const std::string&)>& log = {}) {
  using namespace experiment_detail;
  cfg.validate();
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };

  ExperimentResult result;
  result.config_hash = config_hash(cfg);
  result.methods = cfg.methods;
  const auto data = in_phase(0, "ingest", [&] { return prepare_data(raw.checkins, raw.categories, cfg); });
  const auto& vocab = data.vocab;
  result.n_checkins = data.n_checkins;
  result.n_users = vocab.num_users();
  result.n_pois = vocab.num_pois();
  for (const auto& b : data.blocks) result.trajectories_per_block.push_back(b.size());

  auto uses = [&](const std::string& m) {
    return std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end();
  };
  const bool any_giram = std::any_of(cfg.methods.begin(), cfg.methods.end(), is_giram_method);
  const bool need_chain = uses("finetune") || any_giram;

  // Update flavours actually needed.
  std::vector<MemoryVariant> variants;
  auto variant_index = [&](bool adaptive) -> std::size_t {
    for (std::size_t i = 0; i < variants.size(); ++i)
      if (variants[i].adaptive == adaptive) return i;
    throw ConfigError("internal: memory variant missing");
  };
  auto want_variant = [&](bool adaptive) {
    for (const auto& v : variants)
      if (v.adaptive == adaptive) return;
    variants.push_back({adaptive, InterestMemory(cfg.memory), {}});
  };
  if (uses("giram") || uses("giram_single_key")) want_variant(cfg.fusion.adaptive_weights);
  if (uses("giram_fixed_weights")) want_variant(false);

  TrainOptions base_opt;
  base_opt.epochs = cfg.training.base_epochs;
  base_opt.batch_size = cfg.training.batch_size;
  base_opt.adam.lr = cfg.training.lr;
  base_opt.seed = derive_seed(cfg.seed, 2);
  TrainOptions update_opt = base_opt;
  update_opt.epochs = cfg.training.update_epochs;

  auto with_validation = [&](TrainOptions opt, const std::vector<EncodedTrajectory>* val) {
    if (cfg.training.select_epoch_on_validation && val && !val->empty()) {
      opt.validate = [val](const Backbone& m) { return mean_loss(m, *val); };
    }
    return opt;
  };

  const fs::path ckpt_root = fs::path(cfg.output_dir) / "checkpoints";
  auto ckpt_dir = [&](int b) { return ckpt_root / ("block_" + std::to_string(b)); };

  std::unique_ptr<Backbone> base;
  std::unique_ptr<Backbone> chain;
  std::optional<KeyEncoder> encoder;
  std::optional<KeyGenerator> generator;
  KeyGenConfig gen_cfg = cfg.keygen;

  auto make_encoder = [&] {
    encoder.emplace(vocab.num_regions(), std::max<std::size_t>(1, vocab.num_raw_categories()),
                    std::max<std::size_t>(1, vocab.num_derived_categories()), CoordNormalizer::fit(data.blocks[0]),
                    cfg.keyenc, derive_seed(cfg.seed, 3));
    generator.emplace(static_cast<int>(encoder->key_dim()), gen_cfg, derive_seed(cfg.seed, 4));
  };
  auto block_keys = [&](const std::vector<EncodedTrajectory>& trajs, std::uint64_t seed) {
    std::vector<std::size_t> idx(trajs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (cfg.keygen_max_keys > 0 && idx.size() > static_cast<std::size_t>(cfg.keygen_max_keys)) {
      Rng rng(seed);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(cfg.keygen_max_keys));
      std::sort(idx.begin(), idx.end());
    }
    std::vector<Vector> keys;
    keys.reserve(idx.size());
    for (std::size_t i : idx) keys.push_back(encoder->encode_key(trajs[i].visits));
    return keys;
  };

  // Everything needed to continue after block b; the hash marker goes last.
  auto save_checkpoint = [&](int b, const Backbone* retrained) {
    if (!cfg.checkpoints) return;
    const auto dir = ckpt_dir(b);
    fs::create_directories(dir);
    fs::remove(dir / "config_hash.txt");
    if (b == 0) save_model(dir / "base.bin", *base);
    if (b > 0 && chain) save_model(dir / "finetune.bin", *chain);
    if (retrained) save_model(dir / "retrain.bin", *retrained);
    if (encoder) ad::save_parameters((dir / "encoder.bin").string(), encoder->parameters());
    if (generator) ad::save_parameters((dir / "generator.bin").string(), std::as_const(*generator).parameters());
    for (const auto& v : variants) {
      save_memory((dir / ("memory_" + v.tag() + ".bin")).string(), v.memory);
      save_consistency((dir / ("consistency_" + v.tag() + ".json")).string(), v.table);
    }
    write_json(dir / "progress.json", progress_json(result));
    std::ofstream marker(dir / "config_hash.txt");
    marker << result.config_hash << '\n';
    if (!marker) throw DataError("cannot write checkpoint marker in " + dir.string());
  };

  int resume_from = -1;
  if (cfg.checkpoints) {
    if (cfg.resume) resume_from = latest_checkpoint(ckpt_root, result.config_hash, cfg.n_blocks);
    if (resume_from < 0) fs::remove_all(ckpt_root);
    fs::create_directories(ckpt_root);
  }

  if (resume_from >= 0) {
    const auto dir = ckpt_dir(resume_from);
    say("resuming after block " + std::to_string(resume_from) + " from " + dir.string());
    in_phase(resume_from, "resume", [&] {
      base = make_backbone(cfg.backbone, vocab.num_users(), vocab.num_pois(), derive_seed(cfg.seed, 1));
      load_model(ckpt_dir(0) / "base.bin", *base);
      if (need_chain) {
        chain = base->clone();
        if (resume_from > 0) load_model(dir / "finetune.bin", *chain);
      }
      if (any_giram) {
        make_encoder();
        ad::load_parameters((dir / "encoder.bin").string(), encoder->mutable_parameters());
        ad::load_parameters((dir / "generator.bin").string(), generator->parameters());
        for (auto& v : variants) {
          v.memory = load_memory((dir / ("memory_" + v.tag() + ".bin")).string());
          v.table = load_consistency((dir / ("consistency_" + v.tag() + ".json")).string());
        }
      }
      restore_progress(read_json(dir / "progress.json"), result);
      return 0;
    });
  } else {
    // Base block: train on T_0, validate on T_1.
    Stopwatch sw;
    say("training base model on " + std::to_string(data.blocks[0].size()) + " trajectories");
    base = in_phase(0, "train", [&] {
      return train_base(data.blocks[0], vocab.num_users(), vocab.num_pois(), cfg.backbone,
                        with_validation(base_opt, &data.blocks[1]), derive_seed(cfg.seed, 1));
    });
    result.timing["base"][0]["train"] = sw.seconds();
    if (need_chain) chain = base->clone();

    if (any_giram) {
      in_phase(0, "memory", [&] {
        make_encoder();
        // The base model plays both roles on T_0, so every user gets the base weights.
        ModelPair seed_pair{base->clone(), base->clone()};
        for (auto& v : variants) {
          Stopwatch t;
          UpdateStats st;
          FusionConfig fc = cfg.fusion;
          fc.adaptive_weights = v.adaptive;
          v.table = update_stage(v.memory, seed_pair, data.blocks[0], vocab.users(), *encoder, fc, &st);
          result.timing["memory_" + v.tag()][0]["update"] = t.seconds();
          result.memory.push_back(memory_stats(0, v.tag(), v.memory, v.table, st, snapshot_size(v.memory)));
        }
        Stopwatch t;
        gen_cfg.seed = derive_seed(cfg.seed, 4000);
        train_generator(*generator, block_keys(data.blocks[0], derive_seed(cfg.seed, 4100)), gen_cfg);
        result.timing["keygen"][0]["train"] = t.seconds();
        return 0;
      });
    }
    save_checkpoint(0, nullptr);
  }

  // Incremental blocks: update on T_i, evaluate on the test half of T_{i+1}.
  for (int i = resume_from < 0 ? 1 : resume_from + 1; i < cfg.n_blocks; ++i) {
    const auto& train_block = data.blocks[static_cast<std::size_t>(i)];
    const auto [val, test] = split_encoded(data.blocks[static_cast<std::size_t>(i + 1)], derive_seed(cfg.seed, 100 + i));
    say("block " + std::to_string(i) + ": updating on " + std::to_string(train_block.size()) +
        " trajectories, testing on " + std::to_string(test.size()));
    TrainOptions opt = with_validation(update_opt, &val);
    opt.seed = derive_seed(cfg.seed, 1000 + i);
    const int eval_block = i + 1;
    std::map<std::string, std::vector<PredictionRecord>> records;

    if (uses("static")) {
      records["static"] = in_phase(eval_block, "evaluate static", [&] {
        return evaluate_backbone(*base, test, cfg.targets);
      });
    }

    // Finetune chain, shared with the personalized model of every GIRAM variant.
    ModelPair pair;
    if (need_chain) {
      Stopwatch t;
      if (any_giram) {
        pair = in_phase(i, "finetune", [&] { return make_model_pair(*chain, train_block, opt); });
        result.timing["giram"][i]["finetune_pair"] = t.seconds();
      } else {
        pair.personalized = in_phase(i, "finetune", [&] { return finetune(*chain, train_block, opt); });
        result.timing["finetune"][i]["finetune"] = t.seconds();
      }
      chain = pair.personalized->clone();
      if (uses("finetune")) {
        records["finetune"] = in_phase(eval_block, "evaluate finetune", [&] {
          return evaluate_backbone(*pair.personalized, test, cfg.targets);
        });
      }
    }

    std::unique_ptr<Backbone> retrained;
    if (uses("retrain")) {
      Stopwatch t;
      retrained = in_phase(i, "retrain", [&] {
        TrainOptions ropt = with_validation(base_opt, &val);
        ropt.seed = derive_seed(cfg.seed, 2100 + i);
        auto all = concat_blocks(data.blocks, static_cast<std::size_t>(i));
        return train_base(all, vocab.num_users(), vocab.num_pois(), cfg.backbone, ropt, derive_seed(cfg.seed, 2000 + i));
      });
      result.timing["retrain"][i]["train"] = t.seconds();
      records["retrain"] = in_phase(eval_block, "evaluate retrain", [&] {
        return evaluate_backbone(*retrained, test, cfg.targets);
      });
    }

    if (any_giram) {
      in_phase(i, "update", [&] {
        for (auto& v : variants) {
          Stopwatch t;
          UpdateStats st;
          FusionConfig fc = cfg.fusion;
          fc.adaptive_weights = v.adaptive;
          v.table = update_stage(v.memory, pair, train_block, vocab.users(), *encoder, fc, &st);
          result.timing["memory_" + v.tag()][i]["update"] = t.seconds();
          result.memory.push_back(memory_stats(i, v.tag(), v.memory, v.table, st, snapshot_size(v.memory)));
        }
        Stopwatch t;
        gen_cfg.seed = derive_seed(cfg.seed, 4000 + static_cast<std::uint64_t>(i));
        train_generator(*generator, block_keys(train_block, derive_seed(cfg.seed, 4100 + i)), gen_cfg);
        result.timing["keygen"][i]["train"] = t.seconds();
        return 0;
      });
      for (const auto& m : cfg.methods) {
        if (!is_giram_method(m)) continue;
        FusionConfig fc = cfg.fusion;
        if (m == "giram_single_key") fc.retrieval = RetrievalMode::SingleKey;
        if (m == "giram_fixed_weights") fc.adaptive_weights = false;
        const auto& v = variants[variant_index(fc.adaptive_weights)];
        DeploymentContext ctx{v.memory, *pair.personalized, *encoder, *generator, v.table, vocab.users(),
                              fc,       cfg.rrf,           gen_cfg.num_keys};
        Stopwatch t;
        records[m] = in_phase(eval_block, ("evaluate " + m).c_str(), [&] {
          return evaluate_giram(ctx, test, cfg.targets, derive_seed(cfg.seed, 5000 + i));
        });
        result.timing[m][eval_block]["deploy"] = t.seconds();
      }
    }

    for (const auto& m : cfg.methods) {
      const auto& r = records.at(m);
      if (r.empty()) throw DataError("block " + std::to_string(eval_block) + ": no test instances");
      result.blocks.push_back({eval_block, m, summarize(r)});
    }
    save_checkpoint(i, retrained.get());
  }
  return result;
}

// ---------------------------------------------------------------------------
// Reports

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

/// Enough digits to parse back to the same double.
inline std::string fmt_exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Lossless, so `report` rebuilds exactly the table of the run.
inline void write_metrics_csv(std::ostream& out, const ExperimentResult& r) {
  out << "block,method,acc5,acc10,acc20,mrr,n\n";
  for (const auto& b : r.blocks) {
    out << b.block << ',' << b.method << ',' << fmt_exact(b.metrics.acc5) << ',' << fmt_exact(b.metrics.acc10) << ','
        << fmt_exact(b.metrics.acc20) << ',' << fmt_exact(b.metrics.mrr) << ',' << b.metrics.n << '\n';
  }
}

/// Reads metrics.csv back into block results.
inline std::vector<BlockResult> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("metrics file is empty");
  csv::strip_cr(line);
  if (line != "block,method,acc5,acc10,acc20,mrr,n") throw DataError("unexpected metrics header: " + line);
  std::vector<BlockResult> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    csv::strip_cr(line);
    if (line.empty()) continue;
    const auto f = csv::split(line);
    if (f.size() != 7) throw DataError("metrics line " + std::to_string(lineno) + ": expected 7 fields");
    try {
      BlockResult b;
      b.block = static_cast<int>(csv::parse_int(f[0]));
      b.method = f[1];
      b.metrics = {csv::parse_double(f[2]), csv::parse_double(f[3]), csv::parse_double(f[4]),
                   csv::parse_double(f[5]), static_cast<std::size_t>(csv::parse_int(f[6]))};
      out.push_back(std::move(b));
    } catch (const std::exception&) {
      throw DataError("metrics line " + std::to_string(lineno) + ": malformed field");
    }
  }
  return out;
}

inline ExperimentResult result_from_metrics(std::vector<BlockResult> blocks) {
  ExperimentResult r;
  for (const auto& b : blocks)
    if (std::find(r.methods.begin(), r.methods.end(), b.method) == r.methods.end()) r.methods.push_back(b.method);
  r.blocks = std::move(blocks);
  return r;
}

/// One row per method; per evaluated block the four metrics, then the mean.
inline void write_table_csv(std::ostream& out, const ExperimentResult& r) {
  static const char* names[] = {"Acc@5", "Acc@10", "Acc@20", "MRR"};
  const auto blocks = r.evaluated_blocks();
  out << "method";
  for (int b : blocks)
    for (const char* n : names) out << ",T" << b << ' ' << n;
  for (const char* n : names) out << ",Mean " << n;
  out << '\n';
  auto cells = [&](const Metrics& m) {
    out << ',' << fmt(m.acc5) << ',' << fmt(m.acc10) << ',' << fmt(m.acc20) << ',' << fmt(m.mrr);
  };
  for (const auto& m : r.methods) {
    out << m;
    for (int b : blocks) {
      const Metrics* x = r.find(b, m);
      if (!x) throw DataError("missing result for method '" + m + "' at block " + std::to_string(b));
      cells(*x);
    }
    cells(r.mean(m));
    out << '\n';
  }
}

inline json metrics_json(const Metrics& m) {
  return json{{"acc5", m.acc5}, {"acc10", m.acc10}, {"acc20", m.acc20}, {"mrr", m.mrr}, {"n", m.n}};
}

inline json summary_json(const ExperimentResult& r) {
  json j;
  j["config_hash"] = r.config_hash;
  j["dataset"] = {{"checkins", r.n_checkins},
                  {"users", r.n_users},
                  {"pois", r.n_pois},
                  {"trajectories_per_block", r.trajectories_per_block}};
  json methods = json::object();
  for (const auto& m : r.methods) {
    json blocks = json::object();
    for (const auto& b : r.blocks)
      if (b.method == m) blocks["T" + std::to_string(b.block)] = metrics_json(b.metrics);
    methods[m] = {{"blocks", blocks}, {"mean", metrics_json(r.mean(m))}};
  }
  j["methods"] = methods;
  json mem = json::array();
  for (const auto& s : r.memory) {
    mem.push_back({{"block", s.block},
                   {"variant", s.variant},
                   {"users", s.users},
                   {"entries", s.entries},
                   {"snapshot_bytes", s.snapshot_bytes},
                   {"matched", s.updates.matched},
                   {"inserted", s.updates.inserted},
                   {"evicted", s.updates.evicted},
                   {"consistency", {{"mean", s.s_mean}, {"min", s.s_min}, {"max", s.s_max}}}});
  }
  j["memory"] = mem;
  return j;
}

inline json timing_json(const ExperimentResult& r) {
  json j = json::object();
  for (const auto& [method, blocks] : r.timing)
    for (const auto& [block, phases] : blocks)
      for (const auto& [phase, secs] : phases) j[method]["T" + std::to_string(block)][phase] = secs;
  return j;
}

/// Writes metrics.csv, table.csv, summary.json (deterministic) and
/// timing.json (wall clock) into `dir`.
inline void write_reports(const fs::path& dir, const ExperimentResult& r) {
  fs::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw DataError("cannot write report: " + (dir / name).string());
    return out;
  };
  {
    auto out = open("metrics.csv");
    write_metrics_csv(out, r);
  }
  {
    auto out = open("table.csv");
    write_table_csv(out, r);
  }
  {
    auto out = open("summary.json");
    out << summary_json(r).dump(2) << '\n';
  }
  {
    auto out = open("timing.json");
    out << timing_json(r).dump(2) << '\n';
  }
}

}  // namespace giram
