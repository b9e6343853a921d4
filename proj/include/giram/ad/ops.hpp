#pragma once

// Differentiable operations over column vectors and matrices recorded on a
// Tape. Every op checks operand shapes and throws ShapeError on mismatch.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "giram/ad/tape.hpp"

namespace giram::ad {

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

inline bool is_column(const Matrix& m) { return m.cols() == 1; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Plain (tape-free) kernels shared with the inference paths.

inline Vector softmax(const Vector& v) {
  if (v.size() == 0) throw ShapeError("softmax of empty vector");
  const double m = v.maxCoeff();
  Vector e = (v.array() - m).exp();
  return e / e.sum();
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// One LSTM step from precomputed gate pre-activations laid out [i; f; g; o].
inline void lstm_cell_forward(const Vector& pre, const Vector& c_prev, Vector& h, Vector& c) {
  const Eigen::Index H = c_prev.size();
  detail::require(pre.size() == 4 * H, "lstm_cell: pre-activation must be 4H");
  c.resize(H);
  h.resize(H);
  for (Eigen::Index j = 0; j < H; ++j) {
    const double i = sigmoid(pre(j));
    const double f = sigmoid(pre(H + j));
    const double g = std::tanh(pre(2 * H + j));
    const double o = sigmoid(pre(3 * H + j));
    c(j) = f * c_prev(j) + i * g;
    h(j) = o * std::tanh(c(j));
  }
}

// ---------------------------------------------------------------------------
// Tape ops.

/// y = W x
inline Var matvec(Tape& t, Var W, Var x) {
  const Matrix& w = t.value(W);
  const Matrix& xv = t.value(x);
  detail::require(detail::is_column(xv) && w.cols() == xv.rows(), "matvec: shape mismatch");
  return t.record(w * xv, {W, x}, [W, x](Tape& tp, std::uint32_t self) {
    const Matrix& g = tp.grad(self);
    if (tp.needs_grad(W)) tp.accumulate(W, g * tp.value(x).transpose());
    if (tp.needs_grad(x)) tp.accumulate(x, tp.value(W).transpose() * g);
  });
}

/// y = W x + b
inline Var linear(Tape& t, Var x, Var W, Var b) {
  const Matrix& w = t.value(W);
  const Matrix& xv = t.value(x);
  const Matrix& bv = t.value(b);
  detail::require(detail::is_column(xv) && w.cols() == xv.rows(), "linear: W/x shape mismatch");
  detail::require(detail::is_column(bv) && bv.rows() == w.rows(), "linear: bias shape mismatch");
  Matrix y = bv;
  y.noalias() += w * xv;
  return t.record(std::move(y), {x, W, b}, [x, W, b](Tape& tp, std::uint32_t self) {
    const Matrix& g = tp.grad(self);
    if (tp.needs_grad(W)) tp.accumulate(W, g * tp.value(x).transpose());
    if (tp.needs_grad(x)) tp.accumulate(x, tp.value(W).transpose() * g);
    tp.accumulate(b, g);
  });
}

/// y = W1 x1 + W2 x2 + b (the LSTM gate pre-activation).
inline Var affine2(Tape& t, Var W1, Var x1, Var W2, Var x2, Var b) {
  const Matrix& w1 = t.value(W1);
  const Matrix& w2 = t.value(W2);
  const Matrix& a = t.value(x1);
  const Matrix& h = t.value(x2);
  const Matrix& bv = t.value(b);
  detail::require(w1.cols() == a.rows() && w2.cols() == h.rows() && w1.rows() == w2.rows() &&
                      bv.rows() == w1.rows() && detail::is_column(a) && detail::is_column(h),
                  "affine2: shape mismatch");
  Matrix y = bv;
  y.noalias() += w1 * a;
  y.noalias() += w2 * h;
  return t.record(std::move(y), {W1, x1, W2, x2, b}, [=](Tape& tp, std::uint32_t self) {
    const Matrix& g = tp.grad(self);
    if (tp.needs_grad(W1)) tp.accumulate(W1, g * tp.value(x1).transpose());
    if (tp.needs_grad(x1)) tp.accumulate(x1, tp.value(W1).transpose() * g);
    if (tp.needs_grad(W2)) tp.accumulate(W2, g * tp.value(x2).transpose());
    if (tp.needs_grad(x2)) tp.accumulate(x2, tp.value(W2).transpose() * g);
    tp.accumulate(b, g);
  });
}

/// Row `id` of a V x d table, as a d-vector. Backward touches that row only.
inline Var embedding(Tape& t, Var table, Eigen::Index id) {
  const Matrix& tab = t.value(table);
  if (id < 0 || id >= tab.rows()) {
    throw ShapeError("embedding: id " + std::to_string(id) + " out of range [0, " +
                     std::to_string(tab.rows()) + ")");
  }
  Matrix row = tab.row(id).transpose();
  return t.record(std::move(row), {table}, [table, id](Tape& tp, std::uint32_t self) {
    tp.accumulate_row(table, id, tp.grad(self));
  });
}

inline Var add(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  detail::require(av.rows() == bv.rows() && av.cols() == bv.cols(), "add: shape mismatch");
  return t.record(av + bv, {a, b}, [a, b](Tape& tp, std::uint32_t self) {
    tp.accumulate(a, tp.grad(self));
    tp.accumulate(b, tp.grad(self));
  });
}

inline Var sub(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  detail::require(av.rows() == bv.rows() && av.cols() == bv.cols(), "sub: shape mismatch");
  return t.record(av - bv, {a, b}, [a, b](Tape& tp, std::uint32_t self) {
    tp.accumulate(a, tp.grad(self));
    tp.accumulate(b, -tp.grad(self));
  });
}

/// Elementwise product.
inline Var mul(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  detail::require(av.rows() == bv.rows() && av.cols() == bv.cols(), "mul: shape mismatch");
  return t.record(av.cwiseProduct(bv), {a, b}, [a, b](Tape& tp, std::uint32_t self) {
    const Matrix& g = tp.grad(self);
    if (tp.needs_grad(a)) tp.accumulate(a, g.cwiseProduct(tp.value(b)));
    if (tp.needs_grad(b)) tp.accumulate(b, g.cwiseProduct(tp.value(a)));
  });
}

inline Var scale(Tape& t, Var a, double s) {
  return t.record(t.value(a) * s, {a}, [a, s](Tape& tp, std::uint32_t self) {
    tp.accumulate(a, tp.grad(self) * s);
  });
}

inline Var add_scalar(Tape& t, Var a, double s) {
  return t.record(t.value(a).array() + s, {a}, [a](Tape& tp, std::uint32_t self) {
    tp.accumulate(a, tp.grad(self));
  });
}

inline Var sigmoid(Tape& t, Var a) {
  Matrix y = t.value(a).unaryExpr([](double v) { return sigmoid(v); });
  return t.record(std::move(y), {a}, [a](Tape& tp, std::uint32_t self) {
    const Matrix& y = tp.value(self);
    tp.accumulate(a, tp.grad(self).cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

inline Var tanh(Tape& t, Var a) {
  Matrix y = t.value(a).array().tanh().matrix();
  return t.record(std::move(y), {a}, [a](Tape& tp, std::uint32_t self) {
    const Matrix& y = tp.value(self);
    tp.accumulate(a, tp.grad(self).cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

inline Var relu(Tape& t, Var a) {
  Matrix y = t.value(a).cwiseMax(0.0);
  return t.record(std::move(y), {a}, [a](Tape& tp, std::uint32_t self) {
    const Matrix& x = tp.value(a);
    Matrix g = tp.grad(self);
    for (Eigen::Index i = 0; i < g.size(); ++i)
      if (!(x.data()[i] > 0.0)) g.data()[i] = 0.0;
    tp.accumulate(a, g);
  });
}

inline Var exp(Tape& t, Var a) {
  Matrix y = t.value(a).array().exp().matrix();
  return t.record(std::move(y), {a}, [a](Tape& tp, std::uint32_t self) {
    tp.accumulate(a, tp.grad(self).cwiseProduct(tp.value(self)));
  });
}

/// Sum of all elements, as a 1x1.
inline Var sum(Tape& t, Var a) {
  Matrix y(1, 1);
  y(0, 0) = t.value(a).sum();
  return t.record(std::move(y), {a}, [a](Tape& tp, std::uint32_t self) {
    const Matrix& v = tp.value(a);
    tp.accumulate(a, Matrix::Constant(v.rows(), v.cols(), tp.grad(self)(0, 0)));
  });
}

inline Var squared_norm(Tape& t, Var a) {
  Matrix y(1, 1);
  y(0, 0) = t.value(a).squaredNorm();
  return t.record(std::move(y), {a}, [a](Tape& tp, std::uint32_t self) {
    tp.accumulate(a, tp.value(a) * (2.0 * tp.grad(self)(0, 0)));
  });
}

inline Var dot(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  detail::require(av.rows() == bv.rows() && av.cols() == bv.cols(), "dot: shape mismatch");
  Matrix y(1, 1);
  y(0, 0) = av.cwiseProduct(bv).sum();
  return t.record(std::move(y), {a, b}, [a, b](Tape& tp, std::uint32_t self) {
    const double g = tp.grad(self)(0, 0);
    if (tp.needs_grad(a)) tp.accumulate(a, tp.value(b) * g);
    if (tp.needs_grad(b)) tp.accumulate(b, tp.value(a) * g);
  });
}

/// Vertical concatenation of column vectors.
inline Var concat(Tape& t, const std::vector<Var>& parts) {
  Eigen::Index n = 0;
  for (Var p : parts) {
    detail::require(detail::is_column(t.value(p)), "concat: operands must be column vectors");
    n += t.value(p).rows();
  }
  Matrix y(n, 1);
  Eigen::Index off = 0;
  for (Var p : parts) {
    const Matrix& v = t.value(p);
    y.block(off, 0, v.rows(), 1) = v;
    off += v.rows();
  }
  return t.record(std::move(y), parts, [parts](Tape& tp, std::uint32_t self) {
    const Matrix& g = tp.grad(self);
    Eigen::Index o = 0;
    for (Var p : parts) {
      const Eigen::Index r = tp.value(p).rows();
      if (tp.needs_grad(p)) tp.accumulate(p, g.block(o, 0, r, 1));
      o += r;
    }
  });
}

/// Rows [start, start+len) of a column vector.
inline Var slice(Tape& t, Var a, Eigen::Index start, Eigen::Index len) {
  const Matrix& v = t.value(a);
  detail::require(detail::is_column(v) && start >= 0 && len >= 0 && start + len <= v.rows(),
                  "slice: range out of bounds");
  return t.record(v.block(start, 0, len, 1), {a}, [a, start, len](Tape& tp, std::uint32_t self) {
    const Matrix& v = tp.value(a);
    Matrix g = Matrix::Zero(v.rows(), 1);
    g.block(start, 0, len, 1) = tp.grad(self);
    tp.accumulate(a, g);
  });
}

/// Arithmetic mean of equally-shaped vectors.
inline Var mean(Tape& t, const std::vector<Var>& xs) {
  detail::require(!xs.empty(), "mean: empty operand list");
  Matrix y = t.value(xs[0]);
  for (std::size_t i = 1; i < xs.size(); ++i) {
    detail::require(t.value(xs[i]).rows() == y.rows() && t.value(xs[i]).cols() == y.cols(),
                    "mean: shape mismatch");
    // Running form: identical operands give their value back exactly.
    y += (t.value(xs[i]) - y) / static_cast<double>(i + 1);
  }
  const double inv = 1.0 / static_cast<double>(xs.size());
  return t.record(std::move(y), xs, [xs, inv](Tape& tp, std::uint32_t self) {
    Matrix g = tp.grad(self) * inv;
    for (Var x : xs) tp.accumulate(x, g);
  });
}

inline Var softmax(Tape& t, Var a) {
  const Matrix& v = t.value(a);
  detail::require(detail::is_column(v), "softmax: operand must be a column vector");
  Matrix y = softmax(Vector(v));
  return t.record(std::move(y), {a}, [a](Tape& tp, std::uint32_t self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad(self);
    const double inner = y.cwiseProduct(g).sum();
    tp.accumulate(a, y.cwiseProduct((g.array() - inner).matrix()));
  });
}

/// -log softmax(logits)[target], as a 1x1.
inline Var softmax_cross_entropy(Tape& t, Var logits, Eigen::Index target) {
  const Matrix& v = t.value(logits);
  detail::require(detail::is_column(v) && target >= 0 && target < v.rows(),
                  "softmax_cross_entropy: bad logits or target");
  const double m = v.maxCoeff();
  const double lse = m + std::log((v.array() - m).exp().sum());
  Matrix y(1, 1);
  y(0, 0) = lse - v(target, 0);
  return t.record(std::move(y), {logits}, [logits, target, lse](Tape& tp, std::uint32_t self) {
    Matrix g = (tp.value(logits).array() - lse).exp().matrix();
    g(target, 0) -= 1.0;
    tp.accumulate(logits, g * tp.grad(self)(0, 0));
  });
}

/// LSTM cell on gate pre-activations [i; f; g; o] (4H) and previous cell
/// state (H). Returns [h; c] stacked (2H).
inline Var lstm_cell(Tape& t, Var pre, Var c_prev) {
  const Matrix& p = t.value(pre);
  const Matrix& cp = t.value(c_prev);
  detail::require(detail::is_column(p) && detail::is_column(cp) && p.rows() == 4 * cp.rows(),
                  "lstm_cell: shape mismatch");
  Vector h, c;
  lstm_cell_forward(p.col(0), cp.col(0), h, c);
  Matrix y(2 * cp.rows(), 1);
  y.block(0, 0, cp.rows(), 1) = h;
  y.block(cp.rows(), 0, cp.rows(), 1) = c;
  return t.record(std::move(y), {pre, c_prev}, [pre, c_prev](Tape& tp, std::uint32_t self) {
    const Matrix& p = tp.value(pre);
    const Matrix& cp = tp.value(c_prev);
    const Matrix& out = tp.value(self);
    const Matrix& g = tp.grad(self);
    const Eigen::Index H = cp.rows();
    Matrix dpre(4 * H, 1);
    Matrix dcp(H, 1);
    for (Eigen::Index j = 0; j < H; ++j) {
      const double i = sigmoid(p(j, 0));
      const double f = sigmoid(p(H + j, 0));
      const double gg = std::tanh(p(2 * H + j, 0));
      const double o = sigmoid(p(3 * H + j, 0));
      const double c = out(H + j, 0);
      const double tc = std::tanh(c);
      const double dh = g(j, 0);
      const double dc = g(H + j, 0) + dh * o * (1.0 - tc * tc);
      dpre(j, 0) = dc * gg * i * (1.0 - i);
      dpre(H + j, 0) = dc * cp(j, 0) * f * (1.0 - f);
      dpre(2 * H + j, 0) = dc * i * (1.0 - gg * gg);
      dpre(3 * H + j, 0) = dh * tc * o * (1.0 - o);
      dcp(j, 0) = dc * f;
    }
    tp.accumulate(pre, dpre);
    tp.accumulate(c_prev, dcp);
  });
}

/// sum_{i<j} 1 / (||x_i - x_j||^2 + eps), as a 1x1.
inline Var pairwise_inverse_sqdist(Tape& t, const std::vector<Var>& xs, double eps) {
  const std::size_t n = xs.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      detail::require(t.value(xs[i]).rows() == t.value(xs[j]).rows(),
                      "pairwise_inverse_sqdist: shape mismatch");
      total += 1.0 / ((t.value(xs[i]) - t.value(xs[j])).squaredNorm() + eps);
    }
  Matrix y(1, 1);
  y(0, 0) = total;
  return t.record(std::move(y), xs, [xs, eps](Tape& tp, std::uint32_t self) {
    const double gs = tp.grad(self)(0, 0);
    const std::size_t n = xs.size();
    std::vector<Matrix> grads(n);
    for (std::size_t i = 0; i < n; ++i) grads[i] = Matrix::Zero(tp.value(xs[i]).rows(), 1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        Matrix d = tp.value(xs[i]) - tp.value(xs[j]);
        const double q = d.squaredNorm() + eps;
        Matrix gi = d * (-2.0 * gs / (q * q));
        grads[i] += gi;
        grads[j] -= gi;
      }
    for (std::size_t i = 0; i < n; ++i) tp.accumulate(xs[i], grads[i]);
  });
}

}  // namespace giram::ad
