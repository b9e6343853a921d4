#pragma once

// Seeded synthetic check-ins with planted, drifting interests.
//
// POIs sit in spatial clusters, each with a dominant category. Every user has
// a persistent set made of a few profiles: four POIs from one cluster, tied to
// a time slot of the day. All profiles are active at once and each check-in
// picks its slot first, so time and place carry information about the POI. At
// every period boundary, with probability `drift_rate`, one profile is
// replaced by a fresh one. A global trending set turns over gradually; how
// strongly a user follows it varies per user. A `noise_rate` share of
// check-ins picks a POI uniformly.
//
// Block 0 holds (n_blocks - 1) periods, so exactly half of all events fall in
// the base block. The base block drifts once per period as well.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "giram/error.hpp"
#include "giram/ingest.hpp"
#include "giram/random.hpp"

namespace giram {

struct SynthSpec {
  int n_users = 500;
  int n_pois = 300;
  int n_blocks = 6;
  int events_per_block = 16;  // per user, per incremental block
  int weeks_per_block = 4;
  int profile_size = 4;
  int profiles_per_user = 3;  // time slots per user
  int n_clusters = 12;
  int n_categories = 24;
  int n_derived_categories = 6;
  int trending_size = 15;
  double trending_turnover = 0.3;  // share of the trending set replaced per period
  double trend_rate = 0.15;        // mean share of non-noise check-ins that go to trending POIs
  double trend_affinity_spread = 1.0;  // per-user trend share is trend_rate * (1 +- spread)
  double drift_rate = 0.3;
  double noise_rate = 0.2;
  double hour_spread = 1.0;  // std-dev in hours around a POI's preferred hour
  std::int64_t start_time = 1'600'041'600;  // Monday 2020-09-14 00:00 UTC
  std::uint64_t seed = 7;

  void validate() const {
    auto positive = [](int v, const char* what) {
      if (v < 1) throw ConfigError(std::string("synth: ") + what + " must be >= 1");
    };
    positive(n_users, "n_users");
    positive(n_pois, "n_pois");
    positive(events_per_block, "events_per_block");
    positive(weeks_per_block, "weeks_per_block");
    positive(profile_size, "profile_size");
    positive(profiles_per_user, "profiles_per_user");
    positive(n_clusters, "n_clusters");
    positive(n_categories, "n_categories");
    positive(n_derived_categories, "n_derived_categories");
    positive(trending_size, "trending_size");
    if (n_blocks < 2) throw ConfigError("synth: n_blocks must be >= 2");
    for (double p : {trending_turnover, trend_rate, drift_rate, noise_rate}) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("synth: rates must lie in [0, 1]");
    }
    if (!(trend_affinity_spread >= 0.0 && trend_affinity_spread <= 1.0)) {
      throw ConfigError("synth: trend_affinity_spread must lie in [0, 1]");
    }
    if (!(hour_spread >= 0.0)) throw ConfigError("synth: hour_spread must be >= 0");
    if (n_pois < n_clusters) throw ConfigError("synth: need at least one POI per cluster");
    if (trending_size > n_pois) throw ConfigError("synth: trending_size exceeds n_pois");
    if (n_derived_categories > n_categories) throw ConfigError("synth: more derived than raw categories");
    if (start_time <= 0) throw ConfigError("synth: start_time must be positive");
  }

  /// Number of drift periods in block b.
  int periods_in_block(int b) const { return b == 0 ? n_blocks - 1 : 1; }
};

struct SynthPoi {
  std::string id;
  double lat = 0.0;
  double lon = 0.0;
  int cluster = 0;
  int category = 0;
};

struct SynthData {
  std::vector<CheckIn> checkins;  // sorted by timestamp
  CategoryMap categories;
  std::vector<SynthPoi> pois;
  /// active[period][user] = persistent POI set (sorted); periods run 0..(2 n_blocks - 3).
  std::vector<std::vector<std::vector<int>>> active;
  /// trending[period] = trending POIs.
  std::vector<std::vector<int>> trending;
};

namespace synth_detail {

inline std::string padded(char prefix, int v, int width) {
  std::string s = std::to_string(v);
  if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  return prefix + s;
}

inline int digits(int n) { return static_cast<int>(std::to_string(std::max(n - 1, 0)).size()); }

inline std::vector<int> draw_profile(const std::vector<std::vector<int>>& by_cluster, int size, Rng& rng) {
  const auto& pool = by_cluster[std::uniform_int_distribution<std::size_t>(0, by_cluster.size() - 1)(rng)];
  std::vector<int> chosen = pool;
  std::shuffle(chosen.begin(), chosen.end(), rng);
  chosen.resize(std::min<std::size_t>(chosen.size(), static_cast<std::size_t>(size)));
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

}  // namespace synth_detail

inline SynthData generate(const SynthSpec& spec) {
  using namespace synth_detail;
  spec.validate();
  SynthData data;

  // World: clusters, POIs, categories.
  Rng world(derive_seed(spec.seed, 0x5eed'0001));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::pair<double, double>> centers(static_cast<std::size_t>(spec.n_clusters));
  std::vector<int> cluster_category(static_cast<std::size_t>(spec.n_clusters));
  for (int c = 0; c < spec.n_clusters; ++c) {
    centers[static_cast<std::size_t>(c)] = {40.60 + 0.30 * unit(world), -74.10 + 0.30 * unit(world)};
    cluster_category[static_cast<std::size_t>(c)] = c % spec.n_categories;
  }
  std::vector<std::vector<int>> by_cluster(static_cast<std::size_t>(spec.n_clusters));
  const int poi_width = digits(spec.n_pois);
  for (int p = 0; p < spec.n_pois; ++p) {
    SynthPoi poi;
    poi.id = padded('p', p, poi_width);
    poi.cluster = p % spec.n_clusters;
    const auto [clat, clon] = centers[static_cast<std::size_t>(poi.cluster)];
    poi.lat = std::clamp(clat + 0.01 * gauss(world), -90.0, 90.0);
    poi.lon = std::clamp(clon + 0.01 * gauss(world), -180.0, 180.0);
    poi.category = unit(world) < 0.7 ? cluster_category[static_cast<std::size_t>(poi.cluster)]
                                     : std::uniform_int_distribution<int>(0, spec.n_categories - 1)(world);
    by_cluster[static_cast<std::size_t>(poi.cluster)].push_back(p);
    data.pois.push_back(std::move(poi));
  }
  for (int c = 0; c < spec.n_categories; ++c) {
    data.categories.mapping[padded('c', c, digits(spec.n_categories))] =
        padded('g', c % spec.n_derived_categories, digits(spec.n_derived_categories));
  }

  // Periods: block 0 spans n_blocks - 1 of them, every later block one.
  const int n_periods = 2 * spec.n_blocks - 2;
  const std::int64_t period_len = static_cast<std::int64_t>(spec.weeks_per_block) * kSecondsPerWeek;

  // Trending set with gradual turnover.
  std::vector<int> trend;
  {
    std::vector<int> all(static_cast<std::size_t>(spec.n_pois));
    for (int p = 0; p < spec.n_pois; ++p) all[static_cast<std::size_t>(p)] = p;
    std::shuffle(all.begin(), all.end(), world);
    trend.assign(all.begin(), all.begin() + spec.trending_size);
  }
  for (int t = 0; t < n_periods; ++t) {
    if (t > 0) {
      const int replace = static_cast<int>(std::lround(spec.trending_turnover * spec.trending_size));
      for (int r = 0; r < replace; ++r) {
        const auto slot = std::uniform_int_distribution<std::size_t>(0, trend.size() - 1)(world);
        int candidate = std::uniform_int_distribution<int>(0, spec.n_pois - 1)(world);
        for (int guard = 0; guard < 64 && std::find(trend.begin(), trend.end(), candidate) != trend.end(); ++guard) {
          candidate = std::uniform_int_distribution<int>(0, spec.n_pois - 1)(world);
        }
        trend[slot] = candidate;
      }
    }
    data.trending.push_back(trend);
  }

  // Users.
  data.active.assign(static_cast<std::size_t>(n_periods),
                     std::vector<std::vector<int>>(static_cast<std::size_t>(spec.n_users)));
  const int user_width = digits(spec.n_users);
  const double slot_width = 15.0 / spec.profiles_per_user;
  for (int u = 0; u < spec.n_users; ++u) {
    Rng rng(derive_seed(spec.seed, 0x1000'0000ull + static_cast<std::uint64_t>(u)));
    const std::string uid = padded('u', u, user_width);
    const double trend_share =
        std::min(1.0, spec.trend_rate * (1.0 + spec.trend_affinity_spread * (2.0 * unit(rng) - 1.0)));
    std::vector<std::vector<int>> profiles;
    for (int k = 0; k < spec.profiles_per_user; ++k) profiles.push_back(draw_profile(by_cluster, spec.profile_size, rng));
    for (int t = 0; t < n_periods; ++t) {
      if (t > 0 && unit(rng) < spec.drift_rate) {
        const auto slot = std::uniform_int_distribution<std::size_t>(0, profiles.size() - 1)(rng);
        profiles[slot] = draw_profile(by_cluster, spec.profile_size, rng);
      }
      auto& active = data.active[static_cast<std::size_t>(t)][static_cast<std::size_t>(u)];
      for (const auto& p : profiles) active.insert(active.end(), p.begin(), p.end());
      std::sort(active.begin(), active.end());
      active.erase(std::unique(active.begin(), active.end()), active.end());

      const std::int64_t t0 = spec.start_time + static_cast<std::int64_t>(t) * period_len;
      const auto& trending = data.trending[static_cast<std::size_t>(t)];
      for (int e = 0; e < spec.events_per_block; ++e) {
        int poi;
        double hour;
        if (unit(rng) < spec.noise_rate) {
          poi = std::uniform_int_distribution<int>(0, spec.n_pois - 1)(rng);
          hour = 24.0 * unit(rng);
        } else if (unit(rng) < trend_share) {
          poi = trending[std::uniform_int_distribution<std::size_t>(0, trending.size() - 1)(rng)];
          hour = 24.0 * unit(rng);
        } else {
          const auto slot = std::uniform_int_distribution<std::size_t>(0, profiles.size() - 1)(rng);
          const auto& profile = profiles[slot];
          poi = profile[std::uniform_int_distribution<std::size_t>(0, profile.size() - 1)(rng)];
          const double centre = 7.0 + slot_width * (static_cast<double>(slot) + 0.5);
          hour = centre + spec.hour_spread * gauss(rng);
        }
        const auto& info = data.pois[static_cast<std::size_t>(poi)];
        const auto day = std::uniform_int_distribution<std::int64_t>(0, 7 * spec.weeks_per_block - 1)(rng);
        hour = std::clamp(hour, 0.0, 23.999);
        CheckIn c;
        c.user_id = uid;
        c.poi_id = info.id;
        c.lat = info.lat;
        c.lon = info.lon;
        c.timestamp = t0 + day * kSecondsPerDay + static_cast<std::int64_t>(hour * 3600.0);
        c.category = padded('c', info.category, digits(spec.n_categories));
        data.checkins.push_back(std::move(c));
      }
    }
  }
  std::stable_sort(data.checkins.begin(), data.checkins.end(),
                   [](const CheckIn& a, const CheckIn& b) { return a.timestamp < b.timestamp; });
  return data;
}

}  // namespace giram
