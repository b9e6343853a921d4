#pragma once

#include <string>
#include <vector>

#include "giram/ad/ops.hpp"
#include "giram/ad/tensor.hpp"

namespace giram::ad {

/// Affine layer y = W x + b.
struct Dense {
  Parameter W;
  Parameter b;

  Dense() = default;
  Dense(const std::string& name, Eigen::Index in, Eigen::Index out)
      : W(name + ".W", out, in), b(name + ".b", out, 1) {}

  void init(Rng& rng) {
    init_fan_in(W, rng);
    b.value.setZero();
  }
  void append_to(ParameterList& out) {
    out.push_back(&W);
    out.push_back(&b);
  }
  void append_to(ConstParameterList& out) const {
    out.push_back(&W);
    out.push_back(&b);
  }

  struct Bound {
    Var W, b;
  };
  Bound bind(Tape& t) { return {t.leaf(W), t.leaf(b)}; }

  Vector forward(const Vector& x) const {
    Vector y = b.value.col(0);
    y.noalias() += W.value * x;
    return y;
  }
};

/// LSTM weights; gate blocks are stacked [input; forget; cell; output].
struct Lstm {
  Parameter Wx;
  Parameter Wh;
  Parameter b;

  Lstm() = default;
  Lstm(const std::string& name, Eigen::Index in, Eigen::Index hidden)
      : Wx(name + ".Wx", 4 * hidden, in), Wh(name + ".Wh", 4 * hidden, hidden), b(name + ".b", 4 * hidden, 1) {}

  Eigen::Index hidden() const { return Wh.cols(); }
  Eigen::Index input() const { return Wx.cols(); }

  void init(Rng& rng) {
    init_fan_in(Wx, rng);
    init_fan_in(Wh, rng);
    b.value.setZero();
  }
  void append_to(ParameterList& out) {
    out.push_back(&Wx);
    out.push_back(&Wh);
    out.push_back(&b);
  }
  void append_to(ConstParameterList& out) const {
    out.push_back(&Wx);
    out.push_back(&Wh);
    out.push_back(&b);
  }

  struct Bound {
    Var Wx, Wh, b;
  };
  Bound bind(Tape& t) { return {t.leaf(Wx), t.leaf(Wh), t.leaf(b)}; }

  /// Tape-free step.
  void step(const Vector& x, Vector& h, Vector& c) const {
    Vector pre = b.value.col(0);
    pre.noalias() += Wx.value * x;
    pre.noalias() += Wh.value * h;
    Vector h2, c2;
    lstm_cell_forward(pre, c, h2, c2);
    h.swap(h2);
    c.swap(c2);
  }

  Vector zero_state() const { return Vector::Zero(hidden()); }
};

/// Runs the LSTM over `inputs` from a zero state and returns the hidden state
/// after every step.
inline std::vector<Var> recurrent_states(Tape& t, const std::vector<Var>& inputs, const Lstm::Bound& w,
                                         Eigen::Index hidden) {
  if (inputs.empty()) throw ShapeError("recurrent_encode: empty input sequence");
  Var h = t.constant(Matrix(Matrix::Zero(hidden, 1)));
  Var c = t.constant(Matrix(Matrix::Zero(hidden, 1)));
  std::vector<Var> states;
  states.reserve(inputs.size());
  for (Var x : inputs) {
    Var pre = affine2(t, w.Wx, x, w.Wh, h, w.b);
    Var hc = lstm_cell(t, pre, c);
    h = slice(t, hc, 0, hidden);
    c = slice(t, hc, hidden, hidden);
    states.push_back(h);
  }
  return states;
}

/// Final hidden state of the LSTM over `inputs`.
inline Var recurrent_encode(Tape& t, const std::vector<Var>& inputs, const Lstm::Bound& w, Eigen::Index hidden) {
  return recurrent_states(t, inputs, w, hidden).back();
}

/// Tape-free counterpart of recurrent_encode.
inline Vector recurrent_encode(const std::vector<Vector>& inputs, const Lstm& lstm) {
  if (inputs.empty()) throw ShapeError("recurrent_encode: empty input sequence");
  Vector h = lstm.zero_state();
  Vector c = lstm.zero_state();
  for (const auto& x : inputs) lstm.step(x, h, c);
  return h;
}

}  // namespace giram::ad
