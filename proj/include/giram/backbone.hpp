#pragma once

// Next-POI scoring models and the Static / Finetune / Retrain training drivers.
//
// A backbone maps (user, trajectory prefix) to one raw score per POI. The
// reference implementation embeds POIs, runs an LSTM over the prefix and
// scores every POI from the final hidden state concatenated with a user
// embedding. Training minimises cross-entropy on every prefix -> next pair.

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "giram/dataset.hpp"
#include "giram/diffmath.hpp"
#include "giram/error.hpp"
#include "giram/random.hpp"

namespace giram {

class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual std::string kind() const = 0;
  virtual std::size_t num_pois() const = 0;
  virtual std::size_t num_users() const = 0;

  /// Raw scores over all POIs for the next check-in after `prefix`.
  virtual Vector score(std::uint32_t user, VisitSpan prefix) const = 0;

  /// Scores after every prefix length 1..n, in one pass where possible.
  virtual std::vector<Vector> score_prefixes(std::uint32_t user, VisitSpan visits) const {
    std::vector<Vector> out;
    for (std::size_t len = 1; len <= visits.size(); ++len) out.push_back(score(user, visits.first(len)));
    return out;
  }

  /// Sum of next-step cross-entropies over the trajectory (n-1 terms).
  virtual ad::Var sequence_loss(ad::Tape& tape, const EncodedTrajectory& traj) = 0;

  virtual ad::ParameterList parameters() = 0;
  virtual ad::ConstParameterList parameters() const = 0;

  virtual void freeze_user_embeddings(bool frozen) = 0;
  virtual bool user_embeddings_frozen() const = 0;
  virtual const ad::Parameter& user_embeddings() const = 0;

  virtual std::unique_ptr<Backbone> clone() const = 0;
};

struct BackboneConfig {
  std::string kind = "lstm";
  int poi_dim = 32;
  int user_dim = 16;
  int hidden = 32;
};

class ReferenceBackbone final : public Backbone {
 public:
  ReferenceBackbone(std::size_t num_users, std::size_t num_pois, const BackboneConfig& cfg, std::uint64_t seed)
      : poi_emb_("backbone.poi_emb", static_cast<Eigen::Index>(num_pois), cfg.poi_dim),
        user_emb_("backbone.user_emb", static_cast<Eigen::Index>(num_users), cfg.user_dim),
        lstm_("backbone.lstm", cfg.poi_dim, cfg.hidden),
        out_("backbone.out", cfg.hidden + cfg.user_dim, static_cast<Eigen::Index>(num_pois)) {
    if (num_users == 0 || num_pois == 0) throw ConfigError("backbone needs non-empty vocabularies");
    Rng rng(seed);
    ad::init_embedding(poi_emb_, rng);
    ad::init_embedding(user_emb_, rng);
    lstm_.init(rng);
    out_.init(rng);
  }

  std::string kind() const override { return "lstm"; }
  std::size_t num_pois() const override { return static_cast<std::size_t>(poi_emb_.rows()); }
  std::size_t num_users() const override { return static_cast<std::size_t>(user_emb_.rows()); }

  Vector score(std::uint32_t user, VisitSpan prefix) const override {
    check_inputs(user, prefix);
    Vector h = lstm_.zero_state();
    Vector c = lstm_.zero_state();
    for (const auto& v : prefix) lstm_.step(poi_emb_.value.row(v.poi).transpose(), h, c);
    return head(user, h);
  }

  std::vector<Vector> score_prefixes(std::uint32_t user, VisitSpan visits) const override {
    check_inputs(user, visits);
    std::vector<Vector> out;
    out.reserve(visits.size());
    Vector h = lstm_.zero_state();
    Vector c = lstm_.zero_state();
    for (const auto& v : visits) {
      lstm_.step(poi_emb_.value.row(v.poi).transpose(), h, c);
      out.push_back(head(user, h));
    }
    return out;
  }

  ad::Var sequence_loss(ad::Tape& t, const EncodedTrajectory& traj) override {
    if (traj.visits.size() < 2) throw DataError("sequence_loss needs a trajectory of length >= 2");
    check_inputs(traj.user, traj.visits);
    ad::Var table = t.leaf(poi_emb_);
    ad::Var users = t.leaf(user_emb_);
    auto lstm = lstm_.bind(t);
    auto out = out_.bind(t);
    std::vector<ad::Var> inputs;
    inputs.reserve(traj.visits.size() - 1);
    for (std::size_t i = 0; i + 1 < traj.visits.size(); ++i) inputs.push_back(ad::embedding(t, table, traj.visits[i].poi));
    auto states = ad::recurrent_states(t, inputs, lstm, lstm_.hidden());
    ad::Var u = ad::embedding(t, users, traj.user);
    ad::Var total{};
    for (std::size_t i = 0; i < states.size(); ++i) {
      ad::Var logits = ad::linear(t, ad::concat(t, {states[i], u}), out.W, out.b);
      ad::Var ce = ad::softmax_cross_entropy(t, logits, traj.visits[i + 1].poi);
      total = (i == 0) ? ce : ad::add(t, total, ce);
    }
    return total;
  }

  ad::ParameterList parameters() override {
    ad::ParameterList ps{&poi_emb_, &user_emb_};
    lstm_.append_to(ps);
    out_.append_to(ps);
    return ps;
  }
  ad::ConstParameterList parameters() const override {
    ad::ConstParameterList ps{&poi_emb_, &user_emb_};
    lstm_.append_to(ps);
    out_.append_to(ps);
    return ps;
  }

  void freeze_user_embeddings(bool frozen) override { user_emb_.trainable = !frozen; }
  bool user_embeddings_frozen() const override { return !user_emb_.trainable; }
  const ad::Parameter& user_embeddings() const override { return user_emb_; }

  std::unique_ptr<Backbone> clone() const override { return std::make_unique<ReferenceBackbone>(*this); }

  /// Zeroes the scoring head (weights and bias); used by tests.
  void zero_output_projection() {
    out_.W.value.setZero();
    out_.b.value.setZero();
  }

 private:
  void check_inputs(std::uint32_t user, VisitSpan visits) const {
    if (visits.empty()) throw DataError("cannot score an empty trajectory");
    if (user >= num_users()) throw DataError("unknown user index " + std::to_string(user));
    for (const auto& v : visits) {
      if (v.poi >= num_pois()) throw DataError("unknown POI index " + std::to_string(v.poi));
    }
  }

  Vector head(std::uint32_t user, const Vector& h) const {
    Vector z(h.size() + user_emb_.cols());
    z << h, user_emb_.value.row(user).transpose();
    return out_.forward(z);
  }

  ad::Parameter poi_emb_;
  ad::Parameter user_emb_;
  ad::Lstm lstm_;
  ad::Dense out_;
};

inline std::unique_ptr<Backbone> make_backbone(const BackboneConfig& cfg, std::size_t num_users,
                                               std::size_t num_pois, std::uint64_t seed) {
  if (cfg.kind == "lstm") return std::make_unique<ReferenceBackbone>(num_users, num_pois, cfg, seed);
  throw ConfigError("unknown backbone kind '" + cfg.kind + "'");
}

/// Checked scoring: rejects POIs outside the model vocabulary.
inline Vector score_trajectory(const Backbone& model, const EncodedTrajectory& traj) {
  Vector s = model.score(traj.user, traj.visits);
  if (static_cast<std::size_t>(s.size()) != model.num_pois()) throw ShapeError("score dimension changed");
  if (!s.allFinite()) throw NumericError("backbone produced non-finite scores");
  return s;
}

struct TrainOptions {
  int epochs = 10;
  int batch_size = 16;
  ad::AdamConfig adam;
  std::uint64_t seed = 0;
  /// Optional held-out loss; when set, the parameters of the epoch with the
  /// lowest value are restored after training.
  std::function<double(const Backbone&)> validate;
};

/// Mean next-step cross-entropy over all prefix -> next pairs.
inline double mean_loss(const Backbone& model, std::span<const EncodedTrajectory> trajs) {
  double total = 0.0;
  std::size_t pairs = 0;
  for (const auto& tr : trajs) {
    if (tr.visits.size() < 2) continue;
    auto scores = model.score_prefixes(tr.user, tr.visits);
    for (std::size_t i = 0; i + 1 < tr.visits.size(); ++i) {
      const Vector& s = scores[i];
      const double m = s.maxCoeff();
      total += m + std::log((s.array() - m).exp().sum()) - s(tr.visits[i + 1].poi);
      ++pairs;
    }
  }
  return pairs ? total / static_cast<double>(pairs) : 0.0;
}

/// Minibatch Adam over shuffled trajectories. Returns the mean per-pair loss
/// observed in each epoch.
inline std::vector<double> train(Backbone& model, std::span<const EncodedTrajectory> trajs,
                                 const TrainOptions& opt) {
  if (opt.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < trajs.size(); ++i)
    if (trajs[i].visits.size() >= 2) order.push_back(i);
  std::vector<double> history;
  if (opt.epochs <= 0 || order.empty()) return history;

  auto params = model.parameters();
  ad::Adam adam(params, opt.adam);
  Rng rng(opt.seed);
  long step = 0;
  double best = std::numeric_limits<double>::infinity();
  std::vector<Matrix> best_values;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
    }
    double epoch_loss = 0.0;
    std::size_t epoch_pairs = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
      std::size_t batch_pairs = 0;
      for (std::size_t k = start; k < end; ++k) batch_pairs += trajs[order[k]].visits.size() - 1;
      ad::zero_grads(params);
      const double inv = 1.0 / static_cast<double>(batch_pairs);
      for (std::size_t k = start; k < end; ++k) {
        ad::Tape tape;
        ad::Var loss = model.sequence_loss(tape, trajs[order[k]]);
        const double v = tape.scalar(loss);
        if (!std::isfinite(v)) throw NumericError("non-finite training loss at step " + std::to_string(step));
        epoch_loss += v;
        tape.backward(ad::scale(tape, loss, inv));
      }
      epoch_pairs += batch_pairs;
      adam.step(params);
      ++step;
    }
    history.push_back(epoch_loss / static_cast<double>(epoch_pairs));
    if (opt.validate) {
      const double v = opt.validate(model);
      if (v < best) {
        best = v;
        best_values.clear();
        for (const auto* p : params) best_values.push_back(p->value);
      }
    }
  }
  if (!best_values.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
  }
  return history;
}

inline std::unique_ptr<Backbone> train_base(std::span<const EncodedTrajectory> base, std::size_t num_users,
                                            std::size_t num_pois, const BackboneConfig& cfg,
                                            const TrainOptions& opt, std::uint64_t init_seed,
                                            std::vector<double>* history = nullptr) {
  if (base.empty()) throw DataError("cannot train on an empty block");
  auto model = make_backbone(cfg, num_users, num_pois, init_seed);
  auto h = train(*model, base, opt);
  if (history) *history = std::move(h);
  return model;
}

/// Continues training a copy of `model` on `block` only.
inline std::unique_ptr<Backbone> finetune(const Backbone& model, std::span<const EncodedTrajectory> block,
                                          const TrainOptions& opt) {
  if (block.empty()) throw DataError("cannot finetune on an empty block");
  auto copy = model.clone();
  copy->freeze_user_embeddings(false);
  train(*copy, block, opt);
  return copy;
}

struct ModelPair {
  std::unique_ptr<Backbone> collective;    // user embeddings frozen
  std::unique_ptr<Backbone> personalized;  // user embeddings trainable
};

/// Two copies finetuned identically except for the user-embedding freeze flag.
inline ModelPair make_model_pair(const Backbone& model, std::span<const EncodedTrajectory> block,
                                 const TrainOptions& opt) {
  if (block.empty()) throw DataError("cannot finetune on an empty block");
  ModelPair pair;
  pair.collective = model.clone();
  pair.collective->freeze_user_embeddings(true);
  train(*pair.collective, block, opt);
  pair.personalized = finetune(model, block, opt);
  return pair;
}

/// Fresh model trained on the chronological concatenation of `blocks`.
inline std::unique_ptr<Backbone> retrain_all(const std::vector<std::span<const EncodedTrajectory>>& blocks,
                                             std::size_t num_users, std::size_t num_pois,
                                             const BackboneConfig& cfg, const TrainOptions& opt,
                                             std::uint64_t init_seed) {
  std::vector<EncodedTrajectory> all;
  for (const auto& b : blocks) all.insert(all.end(), b.begin(), b.end());
  if (all.empty()) throw DataError("cannot retrain on an empty union of blocks");
  return train_base(all, num_users, num_pois, cfg, opt, init_seed);
}

}  // namespace giram
