#include "lightsae/tape.hpp"

#include "lightsae/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace lightsae {

std::string shape_string(Eigen::Index rows, Eigen::Index cols)
{
  std::ostringstream os;
  os << rows << "x" << cols;
  return os.str();
}

void Matrix::accumulate(const Dense& g)
{
  if (g.rows() != data.rows() || g.cols() != data.cols())
    throw DimensionError("gradient shape " + shape_string(g) + " does not match parameter " + shape_string(data));
  if (grad)
    *grad += g;
  else
    grad = g;
}

const Dense& Var::value() const
{
  return tape_->value(id_);
}

Var Tape::leaf(Matrix& m)
{
  Node node;
  node.value = m.data;
  node.needs_grad = m.requires_grad;
  node.source = &m;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Dense value)
{
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Dense value, std::initializer_list<Var> inputs, BackwardFn backward)
{
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Dense value, std::span<const Var> inputs, BackwardFn backward)
{
  if (!value.allFinite())
    throw NumericError("operation produced a non-finite value (shape " + shape_string(value) + ")");
  Node node;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    if (&in.tape() != this)
      throw ContractError("operation mixes values from different tapes");
    node.needs_grad = node.needs_grad || nodes_[in.id()].needs_grad;
  }
  if (node.needs_grad)
    node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, const Dense& g)
{
  Node& node = nodes_[id];
  if (!node.needs_grad)
    return;
  if (node.has_grad) {
    node.grad += g;
  } else {
    node.grad = g;
    node.has_grad = true;
  }
}

void Tape::backward(Var loss)
{
  if (&loss.tape() != this)
    throw ContractError("loss was not produced on this tape");
  const Dense& lv = loss.value();
  if (lv.rows() != 1 || lv.cols() != 1)
    throw ContractError("backward() needs a scalar (1x1) loss, got " + shape_string(lv));

  for (Node& node : nodes_) {
    node.grad.resize(0, 0);
    node.has_grad = false;
  }
  accumulate(loss.id(), Dense::Ones(1, 1));

  for (std::size_t k = loss.id() + 1; k-- > 0;) {
    Node& node = nodes_[k];
    if (!node.has_grad)
      continue;
    // Callbacks only touch earlier nodes, so node.grad stays put.
    if (node.backward)
      node.backward(*this, node.grad);
    if (node.source != nullptr && node.source->requires_grad)
      node.source->accumulate(node.grad);
  }
}

namespace {

void require_same_shape(const char* op, const Dense& a, const Dense& b)
{
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

}  // namespace

Var matmul(Var a, Var b)
{
  const Dense& av = a.value();
  const Dense& bv = b.value();
  if (av.cols() != bv.rows())
    throw DimensionError("matmul: cannot multiply " + shape_string(av) + " by " + shape_string(bv));
  Dense out = av * bv;
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, const Dense& g) {
    if (t.needs_grad(ia))
      t.accumulate(ia, g * t.value(ib).transpose());
    if (t.needs_grad(ib))
      t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var add(Var a, Var b)
{
  require_same_shape("add", a.value(), b.value());
  Dense out = a.value() + b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, const Dense& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(Var a, Var b)
{
  require_same_shape("sub", a.value(), b.value());
  Dense out = a.value() - b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, const Dense& g) {
    t.accumulate(ia, g);
    if (t.needs_grad(ib))
      t.accumulate(ib, -g);
  });
}

Var scale(Var a, double factor)
{
  Dense out = a.value() * factor;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, factor](Tape& t, const Dense& g) { t.accumulate(ia, g * factor); });
}

Var add_bias(Var a, Var bias)
{
  const Dense& av = a.value();
  const Dense& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols())
    throw DimensionError("add_bias: bias " + shape_string(bv) + " does not broadcast over " + shape_string(av));
  Dense out = av.rowwise() + bv.row(0);
  const std::size_t ia = a.id(), ib = bias.id();
  return a.tape().record(std::move(out), {a, bias}, [ia, ib](Tape& t, const Dense& g) {
    t.accumulate(ia, g);
    if (t.needs_grad(ib))
      t.accumulate(ib, g.colwise().sum());
  });
}

Var relu(Var a)
{
  Dense out = a.value().cwiseMax(0.0);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, const Dense& g) {
    // Subgradient at 0 is 0.
    t.accumulate(ia, (t.value(ia).array() > 0.0).select(g, 0.0));
  });
}

Var softmax_rows(Var v)
{
  const Dense& x = v.value();
  if (x.cols() < 1)
    throw DimensionError("softmax: empty row");
  Dense s(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    s.row(r) = (x.row(r).array() - m).exp().matrix();
    s.row(r) /= s.row(r).sum();
  }
  const std::size_t iv = v.id();
  Dense probs = s;
  return v.tape().record(std::move(s), {v}, [iv, probs = std::move(probs)](Tape& t, const Dense& g) {
    // Row-wise Jacobian (diag(s) - s s^T) applied to g.
    Dense gx(probs.rows(), probs.cols());
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      const double dot = probs.row(r).dot(g.row(r));
      gx.row(r) = probs.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
    }
    t.accumulate(iv, gx);
  });
}

Var softmax_row(Var v)
{
  if (v.rows() != 1)
    throw DimensionError("softmax_row: expected a single row, got " + shape_string(v.value()));
  return softmax_rows(v);
}

Var sum(Var a)
{
  Dense out(1, 1);
  out(0, 0) = a.value().sum();
  const std::size_t ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape().record(std::move(out), {a}, [ia, r, c](Tape& t, const Dense& g) {
    t.accumulate(ia, Dense::Constant(r, c, g(0, 0)));
  });
}

Var row(Var a, Eigen::Index i)
{
  const Dense& av = a.value();
  if (i < 0 || i >= av.rows())
    throw DimensionError("row: index " + std::to_string(i) + " out of range for " + shape_string(av));
  Dense out = av.row(i);
  const std::size_t ia = a.id();
  const Eigen::Index r = av.rows(), c = av.cols();
  return a.tape().record(std::move(out), {a}, [ia, i, r, c](Tape& t, const Dense& g) {
    Dense full = Dense::Zero(r, c);
    full.row(i) = g.row(0);
    t.accumulate(ia, full);
  });
}

Var gated_sum(Var weights, Eigen::Index i, std::span<const Var> components)
{
  const Dense& w = weights.value();
  if (components.empty())
    throw DimensionError("gated_sum: empty component list");
  if (w.cols() != static_cast<Eigen::Index>(components.size()))
    throw DimensionError("gated_sum: " + std::to_string(components.size()) + " components but weights are " +
                         shape_string(w));
  if (i < 0 || i >= w.rows())
    throw DimensionError("gated_sum: row " + std::to_string(i) + " out of range for " + shape_string(w));
  const Dense& first = components[0].value();
  Dense out = Dense::Zero(first.rows(), first.cols());
  for (std::size_t k = 0; k < components.size(); ++k) {
    require_same_shape("gated_sum", first, components[k].value());
    out.noalias() += w(i, static_cast<Eigen::Index>(k)) * components[k].value();
  }

  std::vector<Var> inputs;
  inputs.reserve(components.size() + 1);
  inputs.push_back(weights);
  inputs.insert(inputs.end(), components.begin(), components.end());
  std::vector<std::size_t> ids;
  ids.reserve(components.size());
  for (const Var& c : components)
    ids.push_back(c.id());
  const std::size_t iw = weights.id();
  return weights.tape().record(std::move(out), inputs, [iw, i, ids = std::move(ids)](Tape& t, const Dense& g) {
    const Dense& w = t.value(iw);
    if (t.needs_grad(iw)) {
      Dense gw = Dense::Zero(w.rows(), w.cols());
      for (std::size_t k = 0; k < ids.size(); ++k)
        gw(i, static_cast<Eigen::Index>(k)) = t.value(ids[k]).cwiseProduct(g).sum();
      t.accumulate(iw, gw);
    }
    for (std::size_t k = 0; k < ids.size(); ++k)
      if (t.needs_grad(ids[k]))
        t.accumulate(ids[k], w(i, static_cast<Eigen::Index>(k)) * g);
  });
}

Var block_matmul(Var x, std::span<const Var> weights, Eigen::Index block)
{
  const Dense& xv = x.value();
  const auto blocks = static_cast<Eigen::Index>(weights.size());
  if (block < 1 || blocks * block != xv.rows())
    throw DimensionError("block_matmul: " + std::to_string(weights.size()) + " blocks of " + std::to_string(block) +
                         " rows do not tile " + shape_string(xv));
  const Eigen::Index out_cols = weights[0].cols();
  Dense out(xv.rows(), out_cols);
  for (Eigen::Index c = 0; c < blocks; ++c) {
    const Dense& w = weights[static_cast<std::size_t>(c)].value();
    if (w.rows() != xv.cols() || w.cols() != out_cols)
      throw DimensionError("block_matmul: weight " + std::to_string(c) + " is " + shape_string(w) + ", input is " +
                           shape_string(xv));
    out.middleRows(c * block, block).noalias() = xv.middleRows(c * block, block) * w;
  }

  std::vector<Var> inputs;
  inputs.reserve(weights.size() + 1);
  inputs.push_back(x);
  inputs.insert(inputs.end(), weights.begin(), weights.end());
  std::vector<std::size_t> ids;
  ids.reserve(weights.size());
  for (const Var& w : weights)
    ids.push_back(w.id());
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), inputs, [ix, block, ids = std::move(ids)](Tape& t, const Dense& g) {
    const Dense& xv = t.value(ix);
    const bool want_x = t.needs_grad(ix);
    Dense gx;
    if (want_x)
      gx.resize(xv.rows(), xv.cols());
    for (std::size_t c = 0; c < ids.size(); ++c) {
      const auto offset = static_cast<Eigen::Index>(c) * block;
      const auto g_block = g.middleRows(offset, block);
      if (want_x)
        gx.middleRows(offset, block).noalias() = g_block * t.value(ids[c]).transpose();
      if (t.needs_grad(ids[c]))
        t.accumulate(ids[c], xv.middleRows(offset, block).transpose() * g_block);
    }
    if (want_x)
      t.accumulate(ix, gx);
  });
}

Var block_add_rows(Var x, Var bias, Eigen::Index block)
{
  const Dense& xv = x.value();
  const Dense& bv = bias.value();
  if (block < 1 || bv.rows() * block != xv.rows() || bv.cols() != xv.cols())
    throw DimensionError("block_add_rows: bias " + shape_string(bv) + " with block " + std::to_string(block) +
                         " does not fit " + shape_string(xv));
  Dense out = xv;
  for (Eigen::Index c = 0; c < bv.rows(); ++c)
    out.middleRows(c * block, block).rowwise() += bv.row(c);
  const std::size_t ix = x.id(), ib = bias.id();
  const Eigen::Index groups = bv.rows();
  return x.tape().record(std::move(out), {x, bias}, [ix, ib, block, groups](Tape& t, const Dense& g) {
    t.accumulate(ix, g);
    if (t.needs_grad(ib)) {
      Dense gb(groups, g.cols());
      for (Eigen::Index c = 0; c < groups; ++c)
        gb.row(c) = g.middleRows(c * block, block).colwise().sum();
      t.accumulate(ib, gb);
    }
  });
}

Var affine_rows(Var x, const Eigen::VectorXd& row_scale, const Eigen::VectorXd& row_shift)
{
  const Dense& xv = x.value();
  if (row_scale.size() != xv.rows() || row_shift.size() != xv.rows())
    throw DimensionError("affine_rows: " + std::to_string(row_scale.size()) + " scales for " + shape_string(xv));
  Dense out = (row_scale.asDiagonal() * xv).colwise() + row_shift;
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, row_scale](Tape& t, const Dense& g) {
    t.accumulate(ix, row_scale.asDiagonal() * g);
  });
}

Var mse(Var prediction, const Dense& target)
{
  const Dense& p = prediction.value();
  require_same_shape("mse", target, p);
  const double count = static_cast<double>(p.size());
  Dense diff = p - target;
  Dense out(1, 1);
  out(0, 0) = diff.squaredNorm() / count;
  const std::size_t ip = prediction.id();
  return prediction.tape().record(std::move(out), {prediction}, [ip, diff = std::move(diff), count](Tape& t, const Dense& g) {
    t.accumulate(ip, diff * (2.0 * g(0, 0) / count));
  });
}

}  // namespace lightsae
