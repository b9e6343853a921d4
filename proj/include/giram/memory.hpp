#pragma once

// Per-user interest memory of (key, sparse value, timestamp) triples.
//
// Values are the K largest entries of a softmax over POI scores, kept sparse
// and never renormalised. An incoming (key, value) either blends into the
// most similar entry (cosine > delta) or is inserted, evicting the entry with
// the oldest timestamp once the memory is full.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "giram/ad/checkpoint.hpp"
#include "giram/diffmath.hpp"
#include "giram/error.hpp"

namespace giram {

struct SparseEntry {
  std::uint32_t index = 0;
  double prob = 0.0;

  friend bool operator==(const SparseEntry&, const SparseEntry&) = default;
};

/// At most K nonzero probabilities over `dim` POIs, sorted by index.
struct SparseScoreVec {
  std::size_t dim = 0;
  std::vector<SparseEntry> entries;

  double sum() const {
    double s = 0.0;
    for (const auto& e : entries) s += e.prob;
    return s;
  }

  Vector dense() const {
    Vector out = Vector::Zero(static_cast<Eigen::Index>(dim));
    for (const auto& e : entries) out(e.index) = e.prob;
    return out;
  }

  friend bool operator==(const SparseScoreVec&, const SparseScoreVec&) = default;
};

namespace memory_detail {

/// Keeps the `k` largest probabilities (ties: lower index first), drops
/// zeros, and returns the survivors sorted by index.
inline std::vector<SparseEntry> truncate(std::vector<SparseEntry> entries, std::size_t k) {
  std::erase_if(entries, [](const SparseEntry& e) { return !(e.prob > 0.0); });
  if (entries.size() > k) {
    std::partial_sort(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(k), entries.end(),
                      [](const SparseEntry& a, const SparseEntry& b) {
                        return a.prob > b.prob || (a.prob == b.prob && a.index < b.index);
                      });
    entries.resize(k);
  }
  std::sort(entries.begin(), entries.end(),
            [](const SparseEntry& a, const SparseEntry& b) { return a.index < b.index; });
  return entries;
}

}  // namespace memory_detail

/// Softmax of `scores`, truncated to the K largest probabilities.
inline SparseScoreVec topk_sparse(const Vector& scores, std::size_t k) {
  if (k < 1) throw ConfigError("top-K requires K >= 1");
  const Vector p = ad::softmax(scores);
  std::vector<SparseEntry> all(static_cast<std::size_t>(p.size()));
  for (Eigen::Index i = 0; i < p.size(); ++i) all[static_cast<std::size_t>(i)] = {static_cast<std::uint32_t>(i), p(i)};
  return {static_cast<std::size_t>(p.size()), memory_detail::truncate(std::move(all), k)};
}

/// (1 - alpha) a + alpha b, truncated back to K entries.
inline SparseScoreVec blend_sparse(const SparseScoreVec& a, const SparseScoreVec& b, double alpha, std::size_t k) {
  if (a.dim != b.dim) throw ShapeError("blend_sparse: dimension mismatch");
  std::vector<SparseEntry> merged;
  merged.reserve(a.entries.size() + b.entries.size());
  std::size_t i = 0, j = 0;
  while (i < a.entries.size() || j < b.entries.size()) {
    if (j == b.entries.size() || (i < a.entries.size() && a.entries[i].index < b.entries[j].index)) {
      merged.push_back({a.entries[i].index, (1.0 - alpha) * a.entries[i].prob});
      ++i;
    } else if (i == a.entries.size() || b.entries[j].index < a.entries[i].index) {
      merged.push_back({b.entries[j].index, alpha * b.entries[j].prob});
      ++j;
    } else {
      merged.push_back({a.entries[i].index, (1.0 - alpha) * a.entries[i].prob + alpha * b.entries[j].prob});
      ++i;
      ++j;
    }
  }
  return {a.dim, memory_detail::truncate(std::move(merged), k)};
}

inline double cosine_similarity(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: dimension mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine_similarity: zero-norm vector");
  return a.dot(b) / (na * nb);
}

struct MemoryEntry {
  Vector key;
  SparseScoreVec value;
  std::int64_t timestamp = 0;
};

struct Match {
  std::size_t index = 0;
  double similarity = 0.0;
};

enum class UpdateOutcome { Matched, Inserted, Evicted };

inline const char* to_string(UpdateOutcome o) {
  switch (o) {
    case UpdateOutcome::Matched: return "matched";
    case UpdateOutcome::Inserted: return "inserted";
    case UpdateOutcome::Evicted: return "evicted";
  }
  return "?";
}

class UserMemory {
 public:
  UserMemory() = default;
  UserMemory(std::size_t capacity, std::size_t top_k) : capacity_(capacity), top_k_(top_k) {
    if (capacity < 1) throw ConfigError("memory capacity must be >= 1");
    if (top_k < 1) throw ConfigError("memory top-K must be >= 1");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t top_k() const { return top_k_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<MemoryEntry>& entries() const { return entries_; }
  const MemoryEntry& operator[](std::size_t i) const { return entries_.at(i); }

  /// Most similar stored key; the earliest entry wins ties.
  std::optional<Match> find_best_match(const Vector& key) const {
    if (entries_.empty()) return std::nullopt;
    Match best{0, cosine_similarity(key, entries_[0].key)};
    for (std::size_t i = 1; i < entries_.size(); ++i) {
      const double s = cosine_similarity(key, entries_[i].key);
      if (s > best.similarity) best = {i, s};
    }
    return best;
  }

  void update_entry(std::size_t idx, const Vector& key, const SparseScoreVec& value, double alpha,
                    std::int64_t timestamp) {
    MemoryEntry& e = entries_.at(idx);
    alpha = std::clamp(alpha, 0.0, 1.0);
    if (e.key.size() != key.size()) throw ShapeError("update_entry: key dimension mismatch");
    e.key = (1.0 - alpha) * e.key + alpha * key;
    e.value = blend_sparse(e.value, value, alpha, top_k_);
    e.timestamp = timestamp;
  }

  /// Appends while below capacity, otherwise overwrites the entry with the
  /// smallest timestamp (lowest index on ties). Returns true on eviction.
  bool insert_or_evict(const Vector& key, const SparseScoreVec& value, std::int64_t timestamp) {
    MemoryEntry e{key, truncate_value(value), timestamp};
    if (entries_.size() < capacity_) {
      entries_.push_back(std::move(e));
      return false;
    }
    std::size_t oldest = 0;
    for (std::size_t i = 1; i < entries_.size(); ++i) {
      if (entries_[i].timestamp < entries_[oldest].timestamp) oldest = i;
    }
    entries_[oldest] = std::move(e);
    return true;
  }

  /// One step of the update stage: blend into the best match when its
  /// similarity is strictly above `delta`, else insert or evict.
  UpdateOutcome apply_update(const Vector& key, const SparseScoreVec& value, double alpha, double delta,
                             std::int64_t timestamp) {
    if (auto m = find_best_match(key); m && m->similarity > delta) {
      update_entry(m->index, key, value, alpha, timestamp);
      return UpdateOutcome::Matched;
    }
    return insert_or_evict(key, value, timestamp) ? UpdateOutcome::Evicted : UpdateOutcome::Inserted;
  }

  /// Direct entry access for deserialization.
  void restore(std::vector<MemoryEntry> entries) {
    if (entries.size() > capacity_) throw DataError("memory snapshot exceeds capacity");
    entries_ = std::move(entries);
  }

 private:
  SparseScoreVec truncate_value(const SparseScoreVec& v) const {
    if (v.entries.size() <= top_k_) return v;
    return {v.dim, memory_detail::truncate(v.entries, top_k_)};
  }

  std::size_t capacity_ = 1;
  std::size_t top_k_ = 1;
  std::vector<MemoryEntry> entries_;
};

struct MemoryConfig {
  std::size_t capacity = 100;
  std::size_t top_k = 50;
};

/// All users' memories, keyed by user id.
class InterestMemory {
 public:
  InterestMemory() = default;
  explicit InterestMemory(MemoryConfig cfg) : cfg_(cfg) {}

  const MemoryConfig& config() const { return cfg_; }

  UserMemory& user(const std::string& id) {
    auto it = users_.find(id);
    if (it == users_.end()) it = users_.emplace(id, UserMemory(cfg_.capacity, cfg_.top_k)).first;
    return it->second;
  }

  /// Read-only lookup; nullptr when the user has no memory yet.
  const UserMemory* find(const std::string& id) const {
    auto it = users_.find(id);
    return it == users_.end() ? nullptr : &it->second;
  }

  const std::map<std::string, UserMemory>& users() const { return users_; }
  std::size_t num_users() const { return users_.size(); }
  std::size_t num_entries() const {
    std::size_t n = 0;
    for (const auto& [_, m] : users_) n += m.size();
    return n;
  }

  void set_user(const std::string& id, UserMemory m) { users_.insert_or_assign(id, std::move(m)); }

 private:
  MemoryConfig cfg_;
  std::map<std::string, UserMemory> users_;
};

// Snapshot layout (little-endian, native doubles):
//   "GIRAMMEM" u32 version u64 capacity u64 top_k u64 key_dim u64 value_dim u64 n_users
//   per user:  u32 id_len, id, u64 capacity, u64 top_k, u64 n_entries
//   per entry: key_dim f64, u32 nnz, nnz x (u32 index, f64 prob), i64 timestamp
inline constexpr std::uint32_t kMemoryVersion = 1;

inline void save_memory(std::ostream& out, const InterestMemory& mem) {
  std::uint64_t key_dim = 0, value_dim = 0;
  for (const auto& [_, um] : mem.users())
    if (!um.empty()) {
      key_dim = static_cast<std::uint64_t>(um[0].key.size());
      value_dim = um[0].value.dim;
      break;
    }
  out.write("GIRAMMEM", 8);
  io::write_pod(out, kMemoryVersion);
  io::write_pod<std::uint64_t>(out, mem.config().capacity);
  io::write_pod<std::uint64_t>(out, mem.config().top_k);
  io::write_pod(out, key_dim);
  io::write_pod(out, value_dim);
  io::write_pod<std::uint64_t>(out, mem.num_users());
  for (const auto& [id, um] : mem.users()) {
    io::write_string(out, id);
    io::write_pod<std::uint64_t>(out, um.capacity());
    io::write_pod<std::uint64_t>(out, um.top_k());
    io::write_pod<std::uint64_t>(out, um.size());
    for (const auto& e : um.entries()) {
      if (static_cast<std::uint64_t>(e.key.size()) != key_dim || e.value.dim != value_dim) {
        throw ShapeError("save_memory: inconsistent key or value dimension");
      }
      io::write_doubles(out, e.key.data(), static_cast<std::size_t>(key_dim));
      io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.entries.size()));
      for (const auto& s : e.value.entries) {
        io::write_pod(out, s.index);
        io::write_pod(out, s.prob);
      }
      io::write_pod<std::int64_t>(out, e.timestamp);
    }
  }
}

inline InterestMemory load_memory(std::istream& in) {
  io::expect_magic(in, "GIRAMMEM");
  const auto version = io::read_pod<std::uint32_t>(in);
  if (version != kMemoryVersion) throw DataError("memory snapshot version mismatch: " + std::to_string(version));
  MemoryConfig cfg;
  cfg.capacity = io::read_pod<std::uint64_t>(in);
  cfg.top_k = io::read_pod<std::uint64_t>(in);
  const auto key_dim = io::read_pod<std::uint64_t>(in);
  const auto value_dim = io::read_pod<std::uint64_t>(in);
  const auto n_users = io::read_pod<std::uint64_t>(in);
  if (key_dim > (1u << 20) || value_dim > (1u << 30)) throw DataError("corrupt file: dimension out of range");
  InterestMemory mem(cfg);
  for (std::uint64_t u = 0; u < n_users; ++u) {
    std::string id = io::read_string(in);
    const auto cap = io::read_pod<std::uint64_t>(in);
    const auto top_k = io::read_pod<std::uint64_t>(in);
    const auto n = io::read_pod<std::uint64_t>(in);
    if (cap < 1 || top_k < 1 || n > cap) throw DataError("corrupt file: bad user memory header");
    std::vector<MemoryEntry> entries;
    entries.reserve(static_cast<std::size_t>(n));
    for (std::uint64_t i = 0; i < n; ++i) {
      MemoryEntry e;
      e.key.resize(static_cast<Eigen::Index>(key_dim));
      io::read_doubles(in, e.key.data(), static_cast<std::size_t>(key_dim));
      const auto nnz = io::read_pod<std::uint32_t>(in);
      if (nnz > top_k) throw DataError("corrupt file: value exceeds top-K");
      e.value.dim = static_cast<std::size_t>(value_dim);
      e.value.entries.resize(nnz);
      for (auto& s : e.value.entries) {
        s.index = io::read_pod<std::uint32_t>(in);
        s.prob = io::read_pod<double>(in);
        if (s.index >= value_dim) throw DataError("corrupt file: value index out of range");
      }
      e.timestamp = io::read_pod<std::int64_t>(in);
      entries.push_back(std::move(e));
    }
    UserMemory um(static_cast<std::size_t>(cap), static_cast<std::size_t>(top_k));
    um.restore(std::move(entries));
    mem.set_user(id, std::move(um));
  }
  return mem;
}

inline void save_memory(const std::string& path, const InterestMemory& mem) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write memory snapshot: " + path);
  save_memory(out, mem);
}

inline InterestMemory load_memory(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open memory snapshot: " + path);
  return load_memory(in);
}

}  // namespace giram
