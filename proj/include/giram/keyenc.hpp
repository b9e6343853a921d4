#pragma once

// Context-aware key encoder.
//
// Each check-in becomes geography (projected min-max coordinates ++ region
// embedding), time (hour ++ weekday embeddings ++ sin/cos of the time of day
// at each frequency) and category (raw ++ derived embeddings). The
// concatenation is projected linearly and an LSTM over the trajectory yields
// the key. All weights are fixed at seeded initialisation, so keys written
// into memory in early blocks stay comparable with later queries.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "giram/dataset.hpp"
#include "giram/diffmath.hpp"
#include "giram/error.hpp"

namespace giram {

struct KeyEncoderConfig {
  int embed_dim = 16;
  int key_dim = 64;
  int proj_dim = 64;
  std::vector<double> frequencies{1.0, 2.0, 4.0};
};

/// Min-max statistics for coordinates, fitted once and then frozen.
struct CoordNormalizer {
  double min_lat = 0.0, max_lat = 1.0, min_lon = 0.0, max_lon = 1.0;

  static CoordNormalizer fit(const std::vector<EncodedTrajectory>& trajs) {
    bool first = true;
    CoordNormalizer n;
    for (const auto& t : trajs)
      for (const auto& v : t.visits) {
        if (first) {
          n = {v.lat, v.lat, v.lon, v.lon};
          first = false;
        }
        n.min_lat = std::min(n.min_lat, v.lat);
        n.max_lat = std::max(n.max_lat, v.lat);
        n.min_lon = std::min(n.min_lon, v.lon);
        n.max_lon = std::max(n.max_lon, v.lon);
      }
    if (first) throw DataError("cannot fit coordinate normalizer on empty data");
    return n;
  }

  /// Maps into [0,1]^2; points outside the fitted box are clamped.
  std::array<double, 2> apply(double lat, double lon) const {
    auto scale = [](double v, double lo, double hi) {
      if (!(hi > lo)) return 0.0;
      return std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
    };
    return {scale(lat, min_lat, max_lat), scale(lon, min_lon, max_lon)};
  }
};

struct TimeFeatures {
  int hour = 0;     // 0..23
  int weekday = 0;  // 0 = Monday
  double day_fraction = 0.0;
};

inline TimeFeatures time_features(std::int64_t timestamp) {
  const std::int64_t sec = ((timestamp % kSecondsPerDay) + kSecondsPerDay) % kSecondsPerDay;
  std::int64_t day = timestamp / kSecondsPerDay;
  if (timestamp < 0 && sec != 0) --day;
  TimeFeatures f;
  f.hour = static_cast<int>(sec / 3600);
  f.weekday = static_cast<int>(((day + 3) % 7 + 7) % 7);  // 1970-01-01 was a Thursday
  f.day_fraction = static_cast<double>(sec) / static_cast<double>(kSecondsPerDay);
  return f;
}

class KeyEncoder {
 public:
  KeyEncoder(std::size_t num_regions, std::size_t num_raw_categories, std::size_t num_derived_categories,
             CoordNormalizer norm, KeyEncoderConfig cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)),
        norm_(norm),
        coord_("keyenc.coord", 2, cfg_.embed_dim),
        region_("keyenc.region", static_cast<Eigen::Index>(num_regions), cfg_.embed_dim),
        hour_("keyenc.hour", 24, cfg_.embed_dim),
        weekday_("keyenc.weekday", 7, cfg_.embed_dim),
        raw_cat_("keyenc.raw_category", static_cast<Eigen::Index>(num_raw_categories), cfg_.embed_dim),
        der_cat_("keyenc.derived_category", static_cast<Eigen::Index>(num_derived_categories), cfg_.embed_dim),
        proj_("keyenc.proj", feature_dim(), cfg_.proj_dim),
        lstm_("keyenc.lstm", cfg_.proj_dim, cfg_.key_dim) {
    if (cfg_.frequencies.empty()) throw ConfigError("key encoder needs at least one frequency");
    if (num_regions == 0 || num_raw_categories == 0 || num_derived_categories == 0) {
      throw ConfigError("key encoder vocabularies must be non-empty");
    }
    if (cfg_.embed_dim < 1 || cfg_.key_dim < 1 || cfg_.proj_dim < 1) {
      throw ConfigError("key encoder dimensions must be positive");
    }
    if (geography_dim() + time_dim() + category_dim() != feature_dim()) {
      throw ConfigError("key encoder dimension ledger is inconsistent");
    }
    Rng rng(seed);
    coord_.init(rng);
    ad::init_embedding(region_, rng);
    ad::init_embedding(hour_, rng);
    ad::init_embedding(weekday_, rng);
    ad::init_embedding(raw_cat_, rng);
    ad::init_embedding(der_cat_, rng);
    proj_.init(rng);
    lstm_.init(rng);
    for (auto* p : mutable_parameters()) p->trainable = false;
  }

  Eigen::Index geography_dim() const { return 2 * cfg_.embed_dim; }
  Eigen::Index time_dim() const {
    return 2 * cfg_.embed_dim + 2 * static_cast<Eigen::Index>(cfg_.frequencies.size());
  }
  Eigen::Index category_dim() const { return 2 * cfg_.embed_dim; }
  Eigen::Index feature_dim() const {
    return 4 * cfg_.embed_dim + 2 * static_cast<Eigen::Index>(cfg_.frequencies.size()) + 2 * cfg_.embed_dim;
  }
  Eigen::Index key_dim() const { return cfg_.key_dim; }
  const KeyEncoderConfig& config() const { return cfg_; }
  const CoordNormalizer& normalizer() const { return norm_; }

  Vector embed_geography(double lat, double lon, std::uint32_t region) const {
    if (region >= static_cast<std::uint32_t>(region_.rows())) {
      throw DataError("unknown region id " + std::to_string(region));
    }
    auto l = norm_.apply(lat, lon);
    Vector out(geography_dim());
    out.head(cfg_.embed_dim) = coord_.forward(Vector{{l[0], l[1]}});
    out.tail(cfg_.embed_dim) = region_.value.row(region).transpose();
    return out;
  }

  Vector embed_time(std::int64_t timestamp) const {
    const auto tf = time_features(timestamp);
    Vector out(time_dim());
    const Eigen::Index d = cfg_.embed_dim;
    out.segment(0, d) = hour_.value.row(tf.hour).transpose();
    out.segment(d, d) = weekday_.value.row(tf.weekday).transpose();
    Eigen::Index off = 2 * d;
    for (double w : cfg_.frequencies) {
      const double angle = 2.0 * std::numbers::pi * w * tf.day_fraction;
      out(off++) = std::sin(angle);
      out(off++) = std::cos(angle);
    }
    return out;
  }

  Vector embed_category(std::uint32_t raw, std::uint32_t derived) const {
    if (raw >= static_cast<std::uint32_t>(raw_cat_.rows())) throw DataError("unknown raw category id");
    if (derived >= static_cast<std::uint32_t>(der_cat_.rows())) throw DataError("unknown derived category id");
    Vector out(category_dim());
    out.head(cfg_.embed_dim) = raw_cat_.value.row(raw).transpose();
    out.tail(cfg_.embed_dim) = der_cat_.value.row(derived).transpose();
    return out;
  }

  Vector record_features(const Visit& v) const {
    Vector out(feature_dim());
    out << embed_geography(v.lat, v.lon, v.region), embed_time(v.timestamp),
        embed_category(v.raw_category, v.derived_category);
    return out;
  }

  /// Key of the whole sequence (final LSTM hidden state).
  Vector encode_key(VisitSpan visits) const {
    if (visits.empty()) throw DataError("cannot encode an empty trajectory");
    Vector h = lstm_.zero_state();
    Vector c = lstm_.zero_state();
    for (const auto& v : visits) lstm_.step(proj_.forward(record_features(v)), h, c);
    return h;
  }

  /// Keys of every prefix 1..n in a single pass.
  std::vector<Vector> encode_prefix_keys(VisitSpan visits) const {
    if (visits.empty()) throw DataError("cannot encode an empty trajectory");
    std::vector<Vector> keys;
    keys.reserve(visits.size());
    Vector h = lstm_.zero_state();
    Vector c = lstm_.zero_state();
    for (const auto& v : visits) {
      lstm_.step(proj_.forward(record_features(v)), h, c);
      keys.push_back(h);
    }
    return keys;
  }

  const ad::Dense& coord_projection() const { return coord_; }

  ad::ConstParameterList parameters() const {
    ad::ConstParameterList ps;
    coord_.append_to(ps);
    ps.insert(ps.end(), {&region_, &hour_, &weekday_, &raw_cat_, &der_cat_});
    proj_.append_to(ps);
    lstm_.append_to(ps);
    return ps;
  }

  ad::ParameterList mutable_parameters() {
    ad::ParameterList ps;
    coord_.append_to(ps);
    ps.insert(ps.end(), {&region_, &hour_, &weekday_, &raw_cat_, &der_cat_});
    proj_.append_to(ps);
    lstm_.append_to(ps);
    return ps;
  }

 private:
  KeyEncoderConfig cfg_;
  CoordNormalizer norm_;
  ad::Dense coord_;
  ad::Parameter region_;
  ad::Parameter hour_;
  ad::Parameter weekday_;
  ad::Parameter raw_cat_;
  ad::Parameter der_cat_;
  ad::Dense proj_;
  ad::Lstm lstm_;
};

}  // namespace giram
