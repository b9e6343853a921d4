#pragma once

// Finite-difference checks for every differentiable op on random small shapes.
// Shared by the unit suite and the acceptance binary.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "giram/diffmath.hpp"
#include "giram/keygen.hpp"

namespace gradsuite {

using namespace giram::ad;

struct Result {
  std::string name;
  double max_error = 0.0;
};

inline Parameter random_param(const std::string& name, Eigen::Index r, Eigen::Index c, std::mt19937_64& rng,
                              double scale = 1.0) {
  Parameter p(name, r, c);
  std::normal_distribution<double> n(0.0, scale);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = n(rng);
  return p;
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  Matrix m(r, c);
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

/// Projects a vector output to a scalar with fixed random weights so that
/// every output coordinate contributes.
inline Var project(Tape& t, Var y, const Matrix& w) { return dot(t, y, t.constant(w)); }

inline std::vector<Result> run(std::uint64_t seed, int trials, double eps = 1e-4) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dim(1, 5);
  std::vector<Result> results;
  auto record = [&](const std::string& name, double err) {
    for (auto& r : results)
      if (r.name == name) {
        r.max_error = std::max(r.max_error, err);
        return;
      }
    results.push_back({name, err});
  };

  for (int trial = 0; trial < trials; ++trial) {
    const int n = dim(rng), m = dim(rng), h = dim(rng);

    {
      auto x = random_param("x", n, 1, rng), W = random_param("W", m, n, rng), b = random_param("b", m, 1, rng);
      const Matrix w = random_matrix(m, 1, rng);
      record("linear", grad_check([&](Tape& t) { return project(t, linear(t, t.leaf(x), t.leaf(W), t.leaf(b)), w); },
                                  {&x, &W, &b}, eps));
    }
    {
      auto x1 = random_param("x1", n, 1, rng), x2 = random_param("x2", h, 1, rng);
      auto W1 = random_param("W1", m, n, rng), W2 = random_param("W2", m, h, rng), b = random_param("b", m, 1, rng);
      const Matrix w = random_matrix(m, 1, rng);
      record("affine2", grad_check(
                            [&](Tape& t) {
                              return project(t, affine2(t, t.leaf(W1), t.leaf(x1), t.leaf(W2), t.leaf(x2), t.leaf(b)), w);
                            },
                            {&x1, &x2, &W1, &W2, &b}, eps));
    }
    {
      auto table = random_param("table", m + 1, n, rng);
      const Eigen::Index id = std::uniform_int_distribution<Eigen::Index>(0, m)(rng);
      const Matrix w = random_matrix(n, 1, rng);
      record("embedding",
             grad_check([&](Tape& t) { return project(t, embedding(t, t.leaf(table), id), w); }, {&table}, eps));
    }
    {
      Lstm lstm("lstm", n, h);
      giram::Rng init(rng());
      lstm.init(init);
      // Non-zero bias so every gate path is exercised.
      lstm.b = random_param(lstm.b.name, 4 * h, 1, rng, 0.5);
      std::vector<Parameter> xs;
      for (int s = 0; s < 3; ++s) xs.push_back(random_param("x" + std::to_string(s), n, 1, rng));
      const Matrix w = random_matrix(h, 1, rng);
      ParameterList ps;
      lstm.append_to(ps);
      for (auto& x : xs) ps.push_back(&x);
      record("recurrent_encode", grad_check(
                                     [&](Tape& t) {
                                       std::vector<Var> in;
                                       for (auto& x : xs) in.push_back(t.leaf(x));
                                       return project(t, recurrent_encode(t, in, lstm.bind(t), h), w);
                                     },
                                     ps, eps));
    }
    {
      auto pre = random_param("pre", 4 * h, 1, rng), c = random_param("c", h, 1, rng);
      const Matrix w = random_matrix(2 * h, 1, rng);
      record("lstm_cell",
             grad_check([&](Tape& t) { return project(t, lstm_cell(t, t.leaf(pre), t.leaf(c)), w); }, {&pre, &c}, eps));
    }
    {
      auto x = random_param("x", n, 1, rng);
      const Matrix w = random_matrix(n, 1, rng);
      record("sigmoid", grad_check([&](Tape& t) { return project(t, sigmoid(t, t.leaf(x)), w); }, {&x}, eps));
      record("tanh", grad_check([&](Tape& t) { return project(t, giram::ad::tanh(t, t.leaf(x)), w); }, {&x}, eps));
      record("exp", grad_check([&](Tape& t) { return project(t, giram::ad::exp(t, t.leaf(x)), w); }, {&x}, eps));
      record("softmax", grad_check([&](Tape& t) { return project(t, softmax(t, t.leaf(x)), w); }, {&x}, eps));
      const Eigen::Index target = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
      record("softmax_cross_entropy",
             grad_check([&](Tape& t) { return softmax_cross_entropy(t, t.leaf(x), target); }, {&x}, eps));
      record("squared_norm", grad_check([&](Tape& t) { return squared_norm(t, t.leaf(x)); }, {&x}, eps));
      record("scale_shift", grad_check(
                                [&](Tape& t) { return project(t, add_scalar(t, scale(t, t.leaf(x), -1.7), 0.3), w); },
                                {&x}, eps));
      // Keep relu inputs away from the kink.
      Parameter xr = x;
      for (Eigen::Index i = 0; i < xr.value.size(); ++i)
        if (std::abs(xr.value(i)) < 0.1) xr.value(i) = 0.5;
      record("relu", grad_check([&](Tape& t) { return project(t, relu(t, t.leaf(xr)), w); }, {&xr}, eps));
    }
    {
      auto a = random_param("a", n, 1, rng), b = random_param("b", n, 1, rng), c = random_param("c", m, 1, rng);
      const Matrix w = random_matrix(n, 1, rng), w2 = random_matrix(n + m, 1, rng);
      record("add_sub_mul", grad_check(
                                [&](Tape& t) {
                                  Var va = t.leaf(a), vb = t.leaf(b);
                                  return project(t, mul(t, add(t, va, vb), sub(t, va, vb)), w);
                                },
                                {&a, &b}, eps));
      record("dot_sum", grad_check(
                            [&](Tape& t) { return add(t, dot(t, t.leaf(a), t.leaf(b)), sum(t, t.leaf(a))); }, {&a, &b},
                            eps));
      record("concat_slice", grad_check(
                                 [&](Tape& t) {
                                   Var cat = concat(t, {t.leaf(a), t.leaf(c)});
                                   return add(t, project(t, cat, w2), squared_norm(t, slice(t, cat, 1, n + m - 1)));
                                 },
                                 {&a, &c}, eps));
      record("mean", grad_check([&](Tape& t) { return project(t, mean(t, {t.leaf(a), t.leaf(b), t.leaf(a)}), w); },
                                {&a, &b}, eps));
      record("matvec", grad_check(
                           [&](Tape& t) {
                             auto W = t.leaf(c);  // m x 1 used as a 1-column matrix
                             return squared_norm(t, matvec(t, W, slice(t, t.leaf(a), 0, 1)));
                           },
                           {&a, &c}, eps));
    }

    // Key generator loss terms with every operand trainable.
    {
      const int d = n + 1, k = 2 + trial % 3;
      giram::KeyGenConfig cfg;
      cfg.div_eps = 1e-2;
      std::uniform_real_distribution<double> unit(0.05, 0.95);
      Parameter ku("k_unit", d, 1);
      for (int i = 0; i < d; ++i) ku.value(i) = unit(rng);
      std::vector<Parameter> gen;
      for (int i = 0; i < k; ++i) {
        gen.emplace_back("g" + std::to_string(i), d, 1);
        for (int j = 0; j < d; ++j) gen.back().value(j) = unit(rng);
      }
      auto mu = random_param("mu", m, 1, rng), lv = random_param("logvar", m, 1, rng, 0.5);
      ParameterList ps{&ku, &mu, &lv};
      for (auto& g : gen) ps.push_back(&g);
      auto terms = [&](Tape& t) {
        std::vector<Var> g;
        for (auto& p : gen) g.push_back(t.leaf(p));
        return giram::keygen_detail::loss_terms(t, t.leaf(ku), g, t.leaf(mu), t.leaf(lv), cfg);
      };
      record("vae_recon", grad_check([&](Tape& t) { return terms(t).recon; }, ps, eps));
      record("vae_kl", grad_check([&](Tape& t) { return terms(t).kl; }, ps, eps));
      record("vae_div", grad_check([&](Tape& t) { return terms(t).div; }, ps, eps));
      record("vae_total", grad_check([&](Tape& t) { return terms(t).total; }, ps, eps));
    }
    {
      giram::KeyGenConfig cfg;
      cfg.hidden = 4 + trial % 3;
      cfg.latent_dim = 2 + trial % 2;
      cfg.num_keys = 3;
      cfg.div_eps = 1e-2;
      const int d = n + 1;
      giram::KeyGenerator gen(d, cfg, rng());
      giram::Rng nrng(rng());
      auto noise = giram::keygen_detail::draw_noise(nrng, cfg.num_keys, cfg.latent_dim);
      giram::Vector key = random_matrix(d, 1, rng).col(0).array().tanh();
      record("vae_end_to_end",
             grad_check([&](Tape& t) { return gen.example_loss(t, key, noise, cfg).total; }, gen.parameters(), eps));
    }
  }
  return results;
}

}  // namespace gradsuite
