#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "giram/random.hpp"

namespace giram::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// A named learnable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using ParameterList = std::vector<Parameter*>;
using ConstParameterList = std::vector<const Parameter*>;

/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), fan_in = number of columns.
inline void init_fan_in(Parameter& p, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(p.cols()));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index j = 0; j < p.value.cols(); ++j)
    for (Eigen::Index i = 0; i < p.value.rows(); ++i) p.value(i, j) = dist(rng);
}

/// Standard-normal rows, the usual convention for lookup tables.
inline void init_embedding(Parameter& p, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (Eigen::Index j = 0; j < p.value.cols(); ++j)
    for (Eigen::Index i = 0; i < p.value.rows(); ++i) p.value(i, j) = dist(rng);
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void zero_grads(const ParameterList& params) {
  for (auto* p : params) p->zero_grad();
}

/// Bitwise equality of two parameter lists (names, shapes and values).
inline bool identical(const ConstParameterList& a, const ConstParameterList& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]->name != b[i]->name) return false;
    if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols()) return false;
    if (a[i]->value.size() != 0 &&
        std::memcmp(a[i]->value.data(), b[i]->value.data(),
                    sizeof(double) * static_cast<std::size_t>(a[i]->value.size())) != 0)
      return false;
  }
  return true;
}

}  // namespace giram::ad
