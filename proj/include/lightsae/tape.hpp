#ifndef LIGHTSAE_TAPE_HPP_
#define LIGHTSAE_TAPE_HPP_

#include "lightsae/matrix.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace lightsae {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Dense& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records operations in execution order and replays their local derivative
// rules backwards. Nodes only ever reference earlier nodes, so a reverse
// sweep over the node list is a valid topological order.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Dense& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Binds a parameter. Gradients reaching this node are added into m.grad
  // when backward() runs, if m.requires_grad.
  Var leaf(Matrix& m);
  Var constant(Dense value);

  // Low-level hook for operations: records value with the given inputs.
  Var record(Dense value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Dense value, std::span<const Var> inputs, BackwardFn backward);

  const Dense& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  // Adds g into the pending gradient of node id (no-op for constants).
  void accumulate(std::size_t id, const Dense& g);

  // Seeds loss with 1 and propagates to every reachable parameter.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Dense value;
    Dense grad;
    bool has_grad = false;
    bool needs_grad = false;
    Matrix* source = nullptr;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
};

// Differentiable operations. All shapes are checked and mismatches raise
// DimensionError naming both operands.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double factor);
Var add_bias(Var a, Var bias);
Var relu(Var a);
Var softmax_row(Var v);
Var softmax_rows(Var v);
Var sum(Var a);
Var row(Var a, Eigen::Index i);

// Sum_k weights(i, k) * components[k].
Var gated_sum(Var weights, Eigen::Index i, std::span<const Var> components);

// x is stacked channel-major: rows [c*block, (c+1)*block) belong to channel c.
// Each block is multiplied by its own weight.
Var block_matmul(Var x, std::span<const Var> weights, Eigen::Index block);
// Adds row c of bias to every row of block c.
Var block_add_rows(Var x, Var bias, Eigen::Index block);

// out(r, :) = x(r, :) * row_scale(r) + row_shift(r). Scale/shift are constants.
Var affine_rows(Var x, const Eigen::VectorXd& row_scale, const Eigen::VectorXd& row_shift);

// Mean squared error against a constant target; returns a 1x1 value.
Var mse(Var prediction, const Dense& target);

}  // namespace lightsae

#endif  // LIGHTSAE_TAPE_HPP_
