#pragma once

#include <cmath>
#include <vector>

#include "giram/ad/tensor.hpp"
#include "giram/error.hpp"

namespace giram::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are keyed by position in the parameter
/// list handed to the constructor; the same list must be passed to step().
class Adam {
 public:
  Adam(const ParameterList& params, AdamConfig cfg = {}) : cfg_(cfg) {
    for (const auto* p : params) {
      m_.push_back(Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }

  /// Applies one update using each parameter's accumulated `grad`. Frozen
  /// parameters are skipped but the step counter still advances.
  void step(const ParameterList& params) {
    if (params.size() != m_.size()) throw ShapeError("adam: parameter list changed size");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Parameter& p = *params[i];
      if (!p.trainable) continue;
      if (p.grad.rows() != p.rows() || p.grad.cols() != p.cols()) {
        throw ShapeError("adam: gradient shape mismatch for '" + p.name + "'");
      }
      if (!p.grad.allFinite()) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = *params[i];
      if (!p.trainable) continue;
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
    }
  }

  long step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }

 private:
  AdamConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long t_ = 0;
};

}  // namespace giram::ad
