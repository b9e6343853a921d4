#pragma once

// Dense index spaces for users, POIs and categories, and trajectories
// expressed in those indices. Vocabularies are built once from the full
// filtered dataset so later blocks never introduce unknown ids.

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "giram/error.hpp"
#include "giram/ingest.hpp"

namespace giram {

struct Visit {
  std::uint32_t poi = 0;
  std::int64_t timestamp = 0;
  double lat = 0.0;
  double lon = 0.0;
  std::uint32_t region = 0;
  std::uint32_t raw_category = 0;
  std::uint32_t derived_category = 0;
};

struct EncodedTrajectory {
  std::uint64_t id = 0;
  std::uint32_t user = 0;
  std::vector<Visit> visits;

  std::int64_t last_timestamp() const { return visits.back().timestamp; }
};

using VisitSpan = std::span<const Visit>;

class Index {
 public:
  std::uint32_t add(const std::string& name) {
    auto [it, inserted] = ids_.try_emplace(name, static_cast<std::uint32_t>(names_.size()));
    if (inserted) names_.push_back(name);
    return it->second;
  }
  std::uint32_t at(const std::string& name) const {
    auto it = ids_.find(name);
    if (it == ids_.end()) throw DataError("unknown identifier: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return ids_.count(name) != 0; }
  const std::string& name(std::uint32_t id) const { return names_.at(id); }
  std::size_t size() const { return names_.size(); }

 private:
  std::unordered_map<std::string, std::uint32_t> ids_;
  std::vector<std::string> names_;
};

struct PoiInfo {
  double lat = 0.0;
  double lon = 0.0;
  std::uint32_t region = 0;
  std::uint32_t raw_category = 0;
  std::uint32_t derived_category = 0;
};

class Vocabulary {
 public:
  /// Ids are assigned in sorted order so the index spaces do not depend on
  /// row order. A POI's attributes come from its earliest check-in.
  static Vocabulary build(const std::vector<CheckIn>& checkins, const CategoryMap& cmap,
                          const GridSpec& grid) {
    Vocabulary v;
    v.grid_ = grid;
    std::vector<std::string> users, pois, raws, ders;
    std::map<std::string, const CheckIn*> first_seen;
    for (const auto& c : checkins) {
      users.push_back(c.user_id);
      raws.push_back(c.category);
      ders.push_back(map_category(c.category, cmap));
      first_seen.try_emplace(c.poi_id, &c);
    }
    auto add_sorted = [](Index& idx, std::vector<std::string>& names) {
      std::sort(names.begin(), names.end());
      names.erase(std::unique(names.begin(), names.end()), names.end());
      for (const auto& n : names) idx.add(n);
    };
    add_sorted(v.users_, users);
    add_sorted(v.raw_categories_, raws);
    add_sorted(v.derived_categories_, ders);
    for (const auto& [poi, c] : first_seen) {
      v.pois_.add(poi);
      PoiInfo info;
      info.lat = c->lat;
      info.lon = c->lon;
      info.region = static_cast<std::uint32_t>(assign_region(c->lat, c->lon, grid));
      info.raw_category = v.raw_categories_.at(c->category);
      info.derived_category = v.derived_categories_.at(map_category(c->category, cmap));
      v.poi_info_.push_back(info);
    }
    v.cmap_ = cmap;
    return v;
  }

  std::size_t num_users() const { return users_.size(); }
  std::size_t num_pois() const { return pois_.size(); }
  std::size_t num_raw_categories() const { return raw_categories_.size(); }
  std::size_t num_derived_categories() const { return derived_categories_.size(); }
  std::size_t num_regions() const { return static_cast<std::size_t>(grid_.cells()); }

  const Index& users() const { return users_; }
  const Index& pois() const { return pois_; }
  const PoiInfo& poi(std::uint32_t id) const { return poi_info_.at(id); }
  const GridSpec& grid() const { return grid_; }

  Visit encode(const CheckIn& c) const {
    Visit v;
    v.poi = pois_.at(c.poi_id);
    v.timestamp = c.timestamp;
    v.lat = c.lat;
    v.lon = c.lon;
    v.region = static_cast<std::uint32_t>(assign_region(c.lat, c.lon, grid_));
    v.raw_category = raw_categories_.at(c.category);
    v.derived_category = derived_categories_.at(map_category(c.category, cmap_));
    return v;
  }

  EncodedTrajectory encode(const Trajectory& t, std::uint64_t id) const {
    EncodedTrajectory e;
    e.id = id;
    e.user = users_.at(t.user_id);
    e.visits.reserve(t.records.size());
    for (const auto& c : t.records) e.visits.push_back(encode(c));
    return e;
  }

  /// Encodes a block's trajectories; ids are `block_index << 32 | position`.
  std::vector<EncodedTrajectory> encode(const std::vector<Trajectory>& ts, std::size_t block_index) const {
    std::vector<EncodedTrajectory> out;
    out.reserve(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
      out.push_back(encode(ts[i], (static_cast<std::uint64_t>(block_index) << 32) | i));
    }
    return out;
  }

 private:
  Index users_, pois_, raw_categories_, derived_categories_;
  std::vector<PoiInfo> poi_info_;
  GridSpec grid_;
  CategoryMap cmap_;
};

}  // namespace giram
