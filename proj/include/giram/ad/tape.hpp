#pragma once

// Reverse-mode tape. Every op appends a node holding its forward value and a
// closure that pushes the node's output gradient into its inputs. Parameter
// leaves reference the Parameter directly and accumulate into its `grad`.
// Nodes that depend on no trainable parameter are not differentiated.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <vector>

#include "giram/ad/tensor.hpp"
#include "giram/error.hpp"

namespace giram::ad {

struct Var {
  std::uint32_t id = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::uint32_t)>;

  Tape() { nodes_.reserve(256); }

  Var constant(Matrix value) {
    Node n;
    n.own = std::move(value);
    return push(std::move(n));
  }

  Var constant(const Vector& value) { return constant(Matrix(value)); }

  Var leaf(Parameter& p) {
    Node n;
    n.param = &p;
    n.needs_grad = p.trainable;
    return push(std::move(n));
  }

  /// Records an op result. `fn` runs during backward only when some input
  /// requires a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward fn) {
    Node n;
    n.own = std::move(value);
    for (Var v : inputs) n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
    if (n.needs_grad) n.backward = std::move(fn);
    return push(std::move(n));
  }

  Var record(Matrix value, const std::vector<Var>& inputs, Backward fn) {
    Node n;
    n.own = std::move(value);
    for (Var v : inputs) n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
    if (n.needs_grad) n.backward = std::move(fn);
    return push(std::move(n));
  }

  const Matrix& value(Var v) const { return value(v.id); }
  const Matrix& value(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.param ? n.param->value : n.own;
  }
  double scalar(Var v) const { return value(v)(0, 0); }

  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  /// Gradient flowing into node `id` (valid inside backward closures).
  const Matrix& grad(std::uint32_t id) const { return nodes_[id].grad; }

  /// Gradient of a non-parameter node after backward(); zero if untouched.
  Matrix grad_of(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.param) return n.param->grad;
    if (n.grad.size() == 0) return Matrix::Zero(value(v).rows(), value(v).cols());
    return n.grad;
  }

  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    Matrix& target = n.param ? n.param->grad : n.grad;
    if (target.size() == 0) {
      target = g;
    } else {
      target += g;
    }
  }

  /// Adds `g` (a column vector) into row `row` of a parameter leaf.
  template <typename Derived>
  void accumulate_row(Var table, Eigen::Index row, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[table.id];
    if (!n.needs_grad) return;
    if (!n.param) throw ShapeError("accumulate_row requires a parameter leaf");
    Matrix& target = n.param->grad;
    if (target.rows() != n.param->value.rows() || target.cols() != n.param->value.cols()) {
      target.setZero(n.param->value.rows(), n.param->value.cols());
    }
    target.row(row) += g.transpose();
  }

  /// Seeds d(root)/d(root) = 1 and propagates. `root` must be 1x1.
  void backward(Var root) {
    const Matrix& rv = value(root);
    if (rv.rows() != 1 || rv.cols() != 1) throw ShapeError("backward root must be a scalar");
    if (!nodes_[root.id].needs_grad) return;
    nodes_[root.id].grad = Matrix::Ones(1, 1);
    for (std::int64_t id = root.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, static_cast<std::uint32_t>(id));
    }
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Matrix own;
    Matrix grad;
    Parameter* param = nullptr;
    bool needs_grad = false;
    Backward backward;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
};

}  // namespace giram::ad
