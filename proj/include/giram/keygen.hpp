#pragma once

// Conditional VAE that turns one context key into several query keys.
//
// Encoder keys live in (-1, 1) while the decoder ends in a sigmoid, so keys
// are mapped k' = (k + 1) / 2 on the way in and k = 2 k' - 1 on the way out.
//
//   mu = f_mu(k'), logvar = f_sigma(k')           (MLP  d_k -> H -> d_z)
//   z_i = mu + eps_i * exp(logvar / 2)
//   k_i = sigmoid(P(z_i ++ k'))                   (MLP  d_z + d_k -> H -> d_k)
//   L = ||k' - mean_i k_i||^2 + eta * KL + lambda * sum_{i<j} 1 / (||k_i - k_j||^2 + eps)

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "giram/diffmath.hpp"
#include "giram/error.hpp"
#include "giram/random.hpp"

namespace giram {

struct KeyGenConfig {
  int num_keys = 20;
  double kl_weight = 1.0;
  double div_weight = 0.1;
  double div_eps = 1e-8;
  int hidden = 128;
  int latent_dim = 32;
  int epochs = 5;
  int batch_size = 16;
  ad::AdamConfig adam;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_keys < 1) throw ConfigError("keygen: num_keys must be >= 1");
    if (kl_weight < 0.0 || div_weight < 0.0) throw ConfigError("keygen: loss weights must be >= 0");
    if (!(div_eps > 0.0)) throw ConfigError("keygen: div_eps must be > 0");
    if (hidden < 1 || latent_dim < 1) throw ConfigError("keygen: dimensions must be positive");
  }
};

inline Vector to_unit_interval(const Vector& k) { return (k.array() + 1.0) * 0.5; }
inline Vector from_unit_interval(const Vector& k) { return k.array() * 2.0 - 1.0; }

struct Posterior {
  Vector mu;
  Vector logvar;
};

struct LossBreakdown {
  double total = 0.0;
  double recon = 0.0;
  double kl = 0.0;
  double div = 0.0;
};

/// z = mu + noise * exp(logvar / 2)
inline Vector sample_latent(const Vector& mu, const Vector& logvar, const Vector& noise) {
  if (mu.size() != logvar.size() || mu.size() != noise.size()) throw ShapeError("sample_latent: shape mismatch");
  return mu.array() + noise.array() * (logvar.array() * 0.5).exp();
}

namespace keygen_detail {

struct LossVars {
  ad::Var total, recon, kl, div;
};

inline ad::Var sample_latent(ad::Tape& t, ad::Var mu, ad::Var logvar, ad::Var noise) {
  ad::Var sigma = ad::exp(t, ad::scale(t, logvar, 0.5));
  return ad::add(t, mu, ad::mul(t, noise, sigma));
}

/// Loss terms on a tape. `k_unit` is the mapped input key; `generated` are
/// sigmoid outputs in (0,1).
inline LossVars loss_terms(ad::Tape& t, ad::Var k_unit, const std::vector<ad::Var>& generated, ad::Var mu,
                           ad::Var logvar, const KeyGenConfig& cfg) {
  if (generated.empty()) throw ConfigError("loss_total: need at least one generated key");
  LossVars out;
  out.recon = ad::squared_norm(t, ad::sub(t, k_unit, ad::mean(t, generated)));
  const double d = static_cast<double>(t.value(mu).rows());
  ad::Var inner = ad::add(t, ad::sub(t, ad::exp(t, logvar), logvar), ad::mul(t, mu, mu));
  out.kl = ad::scale(t, ad::add_scalar(t, ad::sum(t, inner), -d), 0.5);
  out.div = ad::pairwise_inverse_sqdist(t, generated, cfg.div_eps);
  out.total = ad::add(t, ad::add(t, out.recon, ad::scale(t, out.kl, cfg.kl_weight)),
                      ad::scale(t, out.div, cfg.div_weight));
  return out;
}

}  // namespace keygen_detail

/// Loss for concrete values (no parameters involved).
inline LossBreakdown loss_total(const Vector& k_unit, const std::vector<Vector>& generated, const Vector& mu,
                                const Vector& logvar, const KeyGenConfig& cfg) {
  if (generated.empty()) throw ConfigError("loss_total: need at least one generated key");
  ad::Tape t;
  std::vector<ad::Var> gen;
  for (const auto& g : generated) gen.push_back(t.constant(g));
  auto lv = keygen_detail::loss_terms(t, t.constant(k_unit), gen, t.constant(mu), t.constant(logvar), cfg);
  return {t.scalar(lv.total), t.scalar(lv.recon), t.scalar(lv.kl), t.scalar(lv.div)};
}

class KeyGenerator {
 public:
  KeyGenerator(int key_dim, const KeyGenConfig& cfg, std::uint64_t seed)
      : key_dim_(key_dim),
        latent_dim_(cfg.latent_dim),
        mu1_("keygen.mu1", key_dim, cfg.hidden),
        mu2_("keygen.mu2", cfg.hidden, cfg.latent_dim),
        sig1_("keygen.sigma1", key_dim, cfg.hidden),
        sig2_("keygen.sigma2", cfg.hidden, cfg.latent_dim),
        dec1_("keygen.dec1", cfg.latent_dim + key_dim, cfg.hidden),
        dec2_("keygen.dec2", cfg.hidden, key_dim) {
    cfg.validate();
    if (key_dim < 1) throw ConfigError("keygen: key_dim must be positive");
    Rng rng(seed);
    for (auto* d : layers()) d->init(rng);
  }

  int key_dim() const { return key_dim_; }
  int latent_dim() const { return latent_dim_; }

  /// Posterior of the (unmapped) encoder key.
  Posterior encode_posterior(const Vector& key) const {
    if (key.size() != key_dim_) throw ShapeError("encode_posterior: key dimension mismatch");
    if (!key.allFinite()) throw NumericError("encode_posterior: non-finite key");
    const Vector ku = to_unit_interval(key);
    return {mu2_.forward(mu1_.forward(ku).cwiseMax(0.0)), sig2_.forward(sig1_.forward(ku).cwiseMax(0.0))};
  }

  /// Decoder output in (0,1) for latent `z` conditioned on the mapped key.
  Vector decode_key(const Vector& z, const Vector& k_unit) const {
    if (z.size() != latent_dim_ || k_unit.size() != key_dim_) throw ShapeError("decode_key: shape mismatch");
    Vector in(latent_dim_ + key_dim_);
    in << z, k_unit;
    return dec2_.forward(dec1_.forward(in).cwiseMax(0.0)).unaryExpr([](double v) { return ad::sigmoid(v); });
  }

  /// `n` keys in the encoder range from prior samples z ~ N(0, I).
  std::vector<Vector> generate_keys(const Vector& key, int n, std::uint64_t seed) const {
    if (key.size() != key_dim_) throw ShapeError("generate_keys: key dimension mismatch");
    if (n < 1) throw ConfigError("generate_keys: n must be >= 1");
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const Vector ku = to_unit_interval(key);
    // The conditioning half of the first decoder layer is shared by all samples.
    const Vector cond = dec1_.b.value.col(0) + dec1_.W.value.rightCols(key_dim_) * ku;
    std::vector<Vector> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      Vector z(latent_dim_);
      for (int j = 0; j < latent_dim_; ++j) z(j) = normal(rng);
      Vector hidden = (cond + dec1_.W.value.leftCols(latent_dim_) * z).cwiseMax(0.0);
      Vector unit = dec2_.forward(hidden).unaryExpr([](double v) { return ad::sigmoid(v); });
      out.push_back(from_unit_interval(unit));
    }
    return out;
  }

  /// Builds the training loss for one key with the given noise draws.
  keygen_detail::LossVars example_loss(ad::Tape& t, const Vector& key, const std::vector<Vector>& noise,
                                       const KeyGenConfig& cfg) {
    Bound b = bind(t);
    ad::Var ku = t.constant(to_unit_interval(key));
    ad::Var mu = ad::linear(t, ad::relu(t, ad::linear(t, ku, b.mu1.W, b.mu1.b)), b.mu2.W, b.mu2.b);
    ad::Var lv = ad::linear(t, ad::relu(t, ad::linear(t, ku, b.sig1.W, b.sig1.b)), b.sig2.W, b.sig2.b);
    std::vector<ad::Var> gen;
    gen.reserve(noise.size());
    for (const auto& eps : noise) {
      ad::Var z = keygen_detail::sample_latent(t, mu, lv, t.constant(eps));
      ad::Var h = ad::relu(t, ad::linear(t, ad::concat(t, {z, ku}), b.dec1.W, b.dec1.b));
      gen.push_back(ad::sigmoid(t, ad::linear(t, h, b.dec2.W, b.dec2.b)));
    }
    return keygen_detail::loss_terms(t, ku, gen, mu, lv, cfg);
  }

  ad::ParameterList parameters() {
    ad::ParameterList ps;
    for (auto* d : layers()) d->append_to(ps);
    return ps;
  }
  ad::ConstParameterList parameters() const {
    ad::ConstParameterList ps;
    for (const auto* d : layers()) d->append_to(ps);
    return ps;
  }

  /// Zeroes the posterior MLPs (weights and biases).
  void zero_posterior() {
    for (auto* d : {&mu1_, &mu2_, &sig1_, &sig2_}) {
      d->W.value.setZero();
      d->b.value.setZero();
    }
  }
  void zero_decoder() {
    for (auto* d : {&dec1_, &dec2_}) {
      d->W.value.setZero();
      d->b.value.setZero();
    }
  }

 private:
  struct Bound {
    ad::Dense::Bound mu1, mu2, sig1, sig2, dec1, dec2;
  };
  Bound bind(ad::Tape& t) {
    return {mu1_.bind(t), mu2_.bind(t), sig1_.bind(t), sig2_.bind(t), dec1_.bind(t), dec2_.bind(t)};
  }
  std::vector<ad::Dense*> layers() { return {&mu1_, &mu2_, &sig1_, &sig2_, &dec1_, &dec2_}; }
  std::vector<const ad::Dense*> layers() const { return {&mu1_, &mu2_, &sig1_, &sig2_, &dec1_, &dec2_}; }

  int key_dim_;
  int latent_dim_;
  ad::Dense mu1_, mu2_, sig1_, sig2_, dec1_, dec2_;
};

namespace keygen_detail {

inline std::vector<Vector> draw_noise(Rng& rng, int n, int dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Vector> out(static_cast<std::size_t>(n), Vector(dim));
  for (auto& v : out)
    for (int j = 0; j < dim; ++j) v(j) = normal(rng);
  return out;
}

}  // namespace keygen_detail

/// Mean total loss over `keys` with noise drawn from `noise_seed`.
inline double mean_generator_loss(KeyGenerator& gen, std::span<const Vector> keys, const KeyGenConfig& cfg,
                                  std::uint64_t noise_seed) {
  if (keys.empty()) throw DataError("mean_generator_loss: empty key set");
  Rng rng(noise_seed);
  double total = 0.0;
  for (const auto& k : keys) {
    ad::Tape t;
    auto noise = keygen_detail::draw_noise(rng, cfg.num_keys, gen.latent_dim());
    total += t.scalar(gen.example_loss(t, k, noise, cfg).total);
  }
  return total / static_cast<double>(keys.size());
}

/// Minibatch Adam on the keys with fresh noise every step. Returns the mean
/// loss seen in each epoch.
inline std::vector<double> train_generator(KeyGenerator& gen, std::span<const Vector> keys, const KeyGenConfig& cfg) {
  cfg.validate();
  if (keys.empty()) throw DataError("train_generator: empty key set");
  std::vector<double> history;
  if (cfg.epochs <= 0) return history;
  auto params = gen.parameters();
  ad::Adam adam(params, cfg.adam);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(keys.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = static_cast<std::size_t>(std::max(1, cfg.batch_size));
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      const double inv = 1.0 / static_cast<double>(end - start);
      ad::zero_grads(params);
      for (std::size_t k = start; k < end; ++k) {
        ad::Tape t;
        auto noise = keygen_detail::draw_noise(rng, cfg.num_keys, gen.latent_dim());
        auto lv = gen.example_loss(t, keys[order[k]], noise, cfg);
        const double v = t.scalar(lv.total);
        if (!std::isfinite(v)) throw NumericError("key generator loss is not finite at step " + std::to_string(step));
        epoch_loss += v;
        t.backward(ad::scale(t, lv.total, inv));
      }
      adam.step(params);
      ++step;
    }
    history.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return history;
}

}  // namespace giram
