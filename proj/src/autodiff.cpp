#include "epigvi/autodiff.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace epigvi::ad {

namespace {

std::string shape_str(const Var& v) {
  std::ostringstream os;
  os << "(" << v.rows() << "x" << v.cols() << ")";
  return os.str();
}

bool is_scalar(const Var& v) { return v.size() == 1; }

enum class Bcast { equal, a_scalar, b_scalar };

Bcast broadcast_case(const Var& a, const Var& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Bcast::equal;
  if (is_scalar(a)) return Bcast::a_scalar;
  if (is_scalar(b)) return Bcast::b_scalar;
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                   shape_str(b) + " do not conform");
}

/// The tape shared by the non-constant operands (nullptr if all constant).
Tape* common_tape(std::initializer_list<const Var*> vs) {
  Tape* t = nullptr;
  for (const Var* v : vs) {
    if (v->is_const()) continue;
    if (t != nullptr && t != v->tape())
      throw ContractError("operands belong to different tapes");
    t = v->tape();
  }
  return t;
}

/// Reduces an out-shaped adjoint to the shape of a broadcast scalar operand.
ArrayXXd reduce_to(const ArrayXXd& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  ArrayXXd r(1, 1);
  r(0, 0) = g.sum();
  return r;
}

template <typename F>
ArrayXXd apply_binary(Bcast bc, const ArrayXXd& a, const ArrayXXd& b, F&& f) {
  switch (bc) {
    case Bcast::equal:
      return f(a, b);
    case Bcast::a_scalar: {
      ArrayXXd ae = ArrayXXd::Constant(b.rows(), b.cols(), a(0, 0));
      return f(ae, b);
    }
    case Bcast::b_scalar: {
      ArrayXXd be = ArrayXXd::Constant(a.rows(), a.cols(), b(0, 0));
      return f(a, be);
    }
  }
  throw ContractError("unreachable broadcast case");
}

ArrayXXd scalar_array(double v) {
  ArrayXXd a(1, 1);
  a(0, 0) = v;
  return a;
}

}  // namespace

Var constant(ArrayXXd v) {
  Var out;
  out.value_ = std::make_shared<const ArrayXXd>(std::move(v));
  return out;
}

Var constant(double v) { return constant(scalar_array(v)); }

Var Tape::leaf(ArrayXXd v) {
  return emit(OpKind::leaf, std::move(v), {}, PullFn{});
}

Var Tape::emit(OpKind kind, ArrayXXd value, std::vector<int> inputs,
               PullFn pull) {
  Node n;
  n.kind = kind;
  n.value = std::make_shared<const ArrayXXd>(std::move(value));
  n.inputs = std::move(inputs);
  n.pull = std::move(pull);
  nodes_.push_back(std::move(n));

  Var out;
  out.value_ = nodes_.back().value;
  out.tape_ = this;
  out.node_ = static_cast<int>(nodes_.size()) - 1;
  return out;
}

void Tape::accumulate(int node, const ArrayXXd& g) {
  Node& n = nodes_[static_cast<std::size_t>(node)];
  if (n.adjoint.size() == 0) {
    n.adjoint = g;
  } else {
    n.adjoint += g;
  }
}

void Tape::backward(const Var& loss) {
  if (loss.is_const() || loss.tape() != this)
    throw ContractError("backward: loss does not live on this tape");
  if (loss.size() != 1)
    throw ContractError("backward: loss must be scalar-shaped");
  for (Node& n : nodes_) n.adjoint.resize(0, 0);
  accumulate(loss.node(), ArrayXXd::Ones(1, 1));
  for (int i = loss.node(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.adjoint.size() == 0 || !n.pull) continue;
    n.pull(*this, n.adjoint);
  }
}

ArrayXXd Tape::adjoint(const Var& v) const {
  if (v.is_const())
    throw ContractError("adjoint: constants never receive adjoints");
  if (v.tape() != this) throw ContractError("adjoint: foreign tape variable");
  const Node& n = nodes_[static_cast<std::size_t>(v.node())];
  if (n.adjoint.size() == 0) return ArrayXXd::Zero(v.rows(), v.cols());
  return n.adjoint;
}

// ---------------------------------------------------------------------------

namespace {

/// Builds an elementwise unary op with local derivative d(out)/d(in)
/// computed from saved data.
Var unary_op(OpKind kind, const Var& a, ArrayXXd value,
             std::function<ArrayXXd(const ArrayXXd&)> local_grad) {
  Tape* t = common_tape({&a});
  if (t == nullptr) return constant(std::move(value));
  const int ia = a.node();
  return t->emit(kind, std::move(value), {ia},
                 [ia, lg = std::move(local_grad)](Tape& tp, const ArrayXXd& g) {
                   tp.accumulate(ia, lg(g));
                 });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  const Bcast bc = broadcast_case(a, b, "add");
  ArrayXXd out = apply_binary(
      bc, a.value(), b.value(),
      [](const ArrayXXd& x, const ArrayXXd& y) -> ArrayXXd { return x + y; });
  Tape* t = common_tape({&a, &b});
  if (t == nullptr) return constant(std::move(out));
  const int ia = a.node(), ib = b.node();
  const Index ar = a.rows(), ac = a.cols(), br = b.rows(), bcn = b.cols();
  return t->emit(OpKind::add, std::move(out), {ia, ib},
                 [=](Tape& tp, const ArrayXXd& g) {
                   if (ia >= 0) tp.accumulate(ia, reduce_to(g, ar, ac));
                   if (ib >= 0) tp.accumulate(ib, reduce_to(g, br, bcn));
                 });
}

Var sub(const Var& a, const Var& b) {
  const Bcast bc = broadcast_case(a, b, "sub");
  ArrayXXd out = apply_binary(
      bc, a.value(), b.value(),
      [](const ArrayXXd& x, const ArrayXXd& y) -> ArrayXXd { return x - y; });
  Tape* t = common_tape({&a, &b});
  if (t == nullptr) return constant(std::move(out));
  const int ia = a.node(), ib = b.node();
  const Index ar = a.rows(), ac = a.cols(), br = b.rows(), bcn = b.cols();
  return t->emit(OpKind::sub, std::move(out), {ia, ib},
                 [=](Tape& tp, const ArrayXXd& g) {
                   if (ia >= 0) tp.accumulate(ia, reduce_to(g, ar, ac));
                   if (ib >= 0) tp.accumulate(ib, reduce_to(-g, br, bcn));
                 });
}

Var mul(const Var& a, const Var& b) {
  const Bcast bc = broadcast_case(a, b, "mul");
  ArrayXXd out = apply_binary(
      bc, a.value(), b.value(),
      [](const ArrayXXd& x, const ArrayXXd& y) -> ArrayXXd { return x * y; });
  Tape* t = common_tape({&a, &b});
  if (t == nullptr) return constant(std::move(out));
  const int ia = a.node(), ib = b.node();
  const Index ar = a.rows(), ac = a.cols(), br = b.rows(), bcn = b.cols();
  auto av = a.value_ptr();
  auto bv = b.value_ptr();
  return t->emit(OpKind::mul, std::move(out), {ia, ib},
                 [=](Tape& tp, const ArrayXXd& g) {
                   if (ia >= 0) {
                     ArrayXXd ga =
                         (bv->size() == 1) ? ArrayXXd(g * (*bv)(0, 0))
                                           : ArrayXXd(g * (*bv));
                     tp.accumulate(ia, reduce_to(ga, ar, ac));
                   }
                   if (ib >= 0) {
                     ArrayXXd gb =
                         (av->size() == 1) ? ArrayXXd(g * (*av)(0, 0))
                                           : ArrayXXd(g * (*av));
                     tp.accumulate(ib, reduce_to(gb, br, bcn));
                   }
                 });
}

Var div(const Var& a, const Var& b) {
  const Bcast bc = broadcast_case(a, b, "div");
  if ((b.value() == 0.0).any())
    throw DomainError("div: denominator contains zero");
  ArrayXXd out = apply_binary(
      bc, a.value(), b.value(),
      [](const ArrayXXd& x, const ArrayXXd& y) -> ArrayXXd { return x / y; });
  Tape* t = common_tape({&a, &b});
  if (t == nullptr) return constant(std::move(out));
  const int ia = a.node(), ib = b.node();
  const Index ar = a.rows(), ac = a.cols(), br = b.rows(), bcn = b.cols();
  auto av = a.value_ptr();
  auto bv = b.value_ptr();
  return t->emit(
      OpKind::div, std::move(out), {ia, ib}, [=](Tape& tp, const ArrayXXd& g) {
        if (ia >= 0) {
          ArrayXXd ga = (bv->size() == 1) ? ArrayXXd(g / (*bv)(0, 0))
                                          : ArrayXXd(g / (*bv));
          tp.accumulate(ia, reduce_to(ga, ar, ac));
        }
        if (ib >= 0) {
          ArrayXXd gb = apply_binary(
              (av->size() == 1 && bv->size() != 1)
                  ? Bcast::a_scalar
                  : (bv->size() == 1 && av->size() != 1 ? Bcast::b_scalar
                                                        : Bcast::equal),
              *av, *bv, [&g](const ArrayXXd& x, const ArrayXXd& y) -> ArrayXXd {
                return -g * x / (y * y);
              });
          tp.accumulate(ib, reduce_to(gb, br, bcn));
        }
      });
}

Var neg(const Var& a) {
  return unary_op(OpKind::neg, a, ArrayXXd(-a.value()),
                  [](const ArrayXXd& g) -> ArrayXXd { return -g; });
}

Var exp(const Var& a) {
  ArrayXXd out = a.value().exp();
  auto saved = std::make_shared<const ArrayXXd>(out);
  return unary_op(OpKind::exp, a, std::move(out),
                  [saved](const ArrayXXd& g) -> ArrayXXd {
                    return g * (*saved);
                  });
}

Var log(const Var& a) {
  if ((a.value() <= 0.0).any())
    throw DomainError("log: value at or below the domain boundary");
  ArrayXXd out = a.value().log();
  auto av = a.value_ptr();
  return unary_op(OpKind::log, a, std::move(out),
                  [av](const ArrayXXd& g) -> ArrayXXd { return g / (*av); });
}

Var pow_scalar(const Var& a, double exponent) {
  const ArrayXXd& v = a.value();
  const bool integral = exponent == std::round(exponent);
  if (!integral && (v < 0.0).any())
    throw DomainError("pow_scalar: negative base with non-integer exponent");
  if (exponent < 1.0 && (v == 0.0).any())
    throw DomainError("pow_scalar: zero base with exponent below one");
  ArrayXXd out = v.pow(exponent);
  auto av = a.value_ptr();
  return unary_op(OpKind::pow_scalar, a, std::move(out),
                  [av, exponent](const ArrayXXd& g) -> ArrayXXd {
                    return g * exponent * av->pow(exponent - 1.0);
                  });
}

Var sum(const Var& a) {
  ArrayXXd out = scalar_array(a.value().sum());
  const Index r = a.rows(), c = a.cols();
  return unary_op(OpKind::sum, a, std::move(out),
                  [r, c](const ArrayXXd& g) -> ArrayXXd {
                    return ArrayXXd::Constant(r, c, g(0, 0));
                  });
}

Var mean(const Var& a) {
  ArrayXXd out = scalar_array(a.value().mean());
  const Index r = a.rows(), c = a.cols();
  const double n = static_cast<double>(a.size());
  return unary_op(OpKind::mean, a, std::move(out),
                  [r, c, n](const ArrayXXd& g) -> ArrayXXd {
                    return ArrayXXd::Constant(r, c, g(0, 0) / n);
                  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: shapes " + shape_str(a) + " and " +
                     shape_str(b) + " do not conform");
  ArrayXXd out = (a.value().matrix() * b.value().matrix()).array();
  Tape* t = common_tape({&a, &b});
  if (t == nullptr) return constant(std::move(out));
  const int ia = a.node(), ib = b.node();
  auto av = a.value_ptr();
  auto bv = b.value_ptr();
  return t->emit(OpKind::matmul, std::move(out), {ia, ib},
                 [=](Tape& tp, const ArrayXXd& g) {
                   if (ia >= 0)
                     tp.accumulate(
                         ia, (g.matrix() * bv->matrix().transpose()).array());
                   if (ib >= 0)
                     tp.accumulate(
                         ib, (av->matrix().transpose() * g.matrix()).array());
                 });
}

Var sigmoid(const Var& a) {
  const ArrayXXd& v = a.value();
  ArrayXXd out(v.rows(), v.cols());
  for (Index j = 0; j < v.cols(); ++j)
    for (Index i = 0; i < v.rows(); ++i) {
      const double x = v(i, j);
      if (x >= 0.0) {
        out(i, j) = 1.0 / (1.0 + std::exp(-x));
      } else {
        const double e = std::exp(x);
        out(i, j) = e / (1.0 + e);
      }
    }
  auto saved = std::make_shared<const ArrayXXd>(out);
  return unary_op(OpKind::sigmoid, a, std::move(out),
                  [saved](const ArrayXXd& g) -> ArrayXXd {
                    return g * (*saved) * (1.0 - (*saved));
                  });
}

Var softplus(const Var& a) {
  const ArrayXXd& v = a.value();
  ArrayXXd out(v.rows(), v.cols());
  ArrayXXd grad(v.rows(), v.cols());
  for (Index j = 0; j < v.cols(); ++j)
    for (Index i = 0; i < v.rows(); ++i) {
      const double x = v(i, j);
      out(i, j) = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
      if (x >= 0.0) {
        grad(i, j) = 1.0 / (1.0 + std::exp(-x));
      } else {
        const double e = std::exp(x);
        grad(i, j) = e / (1.0 + e);
      }
    }
  auto saved = std::make_shared<const ArrayXXd>(std::move(grad));
  return unary_op(OpKind::softplus, a, std::move(out),
                  [saved](const ArrayXXd& g) -> ArrayXXd {
                    return g * (*saved);
                  });
}

Var tanh(const Var& a) {
  ArrayXXd out = a.value().tanh();
  auto saved = std::make_shared<const ArrayXXd>(out);
  return unary_op(OpKind::tanh, a, std::move(out),
                  [saved](const ArrayXXd& g) -> ArrayXXd {
                    return g * (1.0 - (*saved) * (*saved));
                  });
}

Var segment_sum(const Var& values, const std::vector<int>& group_ids,
                int n_groups) {
  if (values.cols() != 1)
    throw ShapeError("segment_sum: values must be a column vector");
  if (static_cast<Index>(group_ids.size()) != values.rows())
    throw ShapeError("segment_sum: one group id per value required");
  if (n_groups <= 0) throw ShapeError("segment_sum: n_groups must be positive");
  for (int g : group_ids)
    if (g < 0 || g >= n_groups)
      throw ShapeError("segment_sum: group id out of range");
  const ArrayXXd& v = values.value();
  ArrayXXd out = ArrayXXd::Zero(n_groups, 1);
  for (Index i = 0; i < v.rows(); ++i) out(group_ids[i], 0) += v(i, 0);
  Tape* t = common_tape({&values});
  if (t == nullptr) return constant(std::move(out));
  const int iv = values.node();
  const Index n = values.rows();
  auto ids = std::make_shared<const std::vector<int>>(group_ids);
  return t->emit(OpKind::segment_sum, std::move(out), {iv},
                 [iv, n, ids](Tape& tp, const ArrayXXd& g) {
                   ArrayXXd gv(n, 1);
                   for (Index i = 0; i < n; ++i) gv(i, 0) = g((*ids)[i], 0);
                   tp.accumulate(iv, gv);
                 });
}

namespace {

inline double flat_get(const ArrayXXd& a, int flat) {
  const Index c = a.cols();
  return a(flat / c, flat % c);
}

}  // namespace

Var index_select(const Var& a, const std::vector<int>& flat_indices,
                 Index out_rows, Index out_cols) {
  const Index n = static_cast<Index>(flat_indices.size());
  if (out_rows < 0) out_rows = n;
  if (out_rows * out_cols != n)
    throw ShapeError("index_select: output shape does not match index count");
  const Index limit = a.size();
  for (int idx : flat_indices)
    if (idx < 0 || idx >= limit)
      throw ShapeError("index_select: index out of range");
  const ArrayXXd& v = a.value();
  ArrayXXd out(out_rows, out_cols);
  for (Index k = 0; k < n; ++k)
    out(k / out_cols, k % out_cols) = flat_get(v, flat_indices[k]);
  Tape* t = common_tape({&a});
  if (t == nullptr) return constant(std::move(out));
  const int ia = a.node();
  const Index ar = a.rows(), ac = a.cols();
  auto ids = std::make_shared<const std::vector<int>>(flat_indices);
  return t->emit(OpKind::index_select, std::move(out), {ia},
                 [ia, ar, ac, ids](Tape& tp, const ArrayXXd& g) {
                   ArrayXXd ga = ArrayXXd::Zero(ar, ac);
                   const Index gc = g.cols();
                   for (Index k = 0; k < static_cast<Index>(ids->size());
                        ++k) {
                     const int flat = (*ids)[k];
                     ga(flat / ac, flat % ac) += g(k / gc, k % gc);
                   }
                   tp.accumulate(ia, ga);
                 });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  Index rows = parts[0].rows(), cols = parts[0].cols();
  Index total = 0;
  for (const Var& p : parts) {
    if (axis == 0 && p.cols() != cols)
      throw ShapeError("concat: column counts differ");
    if (axis == 1 && p.rows() != rows)
      throw ShapeError("concat: row counts differ");
    total += (axis == 0) ? p.rows() : p.cols();
  }
  ArrayXXd out(axis == 0 ? total : rows, axis == 0 ? cols : total);
  Index off = 0;
  for (const Var& p : parts) {
    if (axis == 0) {
      out.block(off, 0, p.rows(), cols) = p.value();
      off += p.rows();
    } else {
      out.block(0, off, rows, p.cols()) = p.value();
      off += p.cols();
    }
  }
  std::vector<const Var*> ptrs;
  Tape* t = nullptr;
  for (const Var& p : parts) {
    if (p.is_const()) continue;
    if (t != nullptr && t != p.tape())
      throw ContractError("operands belong to different tapes");
    t = p.tape();
  }
  if (t == nullptr) return constant(std::move(out));
  struct Piece {
    int node;
    Index off, rows, cols;
  };
  auto pieces = std::make_shared<std::vector<Piece>>();
  std::vector<int> input_ids;
  off = 0;
  for (const Var& p : parts) {
    if (!p.is_const()) {
      pieces->push_back({p.node(), off, p.rows(), p.cols()});
      input_ids.push_back(p.node());
    }
    off += (axis == 0) ? p.rows() : p.cols();
  }
  return t->emit(OpKind::concat, std::move(out), std::move(input_ids),
                 [pieces, axis](Tape& tp, const ArrayXXd& g) {
                   for (const auto& pc : *pieces) {
                     ArrayXXd gp =
                         (axis == 0)
                             ? ArrayXXd(g.block(pc.off, 0, pc.rows, pc.cols))
                             : ArrayXXd(g.block(0, pc.off, pc.rows, pc.cols));
                     tp.accumulate(pc.node, gp);
                   }
                 });
}

Var clamp_min(const Var& a, double threshold) {
  ArrayXXd out = a.value().max(threshold);
  auto av = a.value_ptr();
  return unary_op(OpKind::clamp_min, a, std::move(out),
                  [av, threshold](const ArrayXXd& g) -> ArrayXXd {
                    return g * (*av > threshold).cast<double>();
                  });
}

Var binarize_straight_through(const Var& soft, double threshold) {
  ArrayXXd out = (soft.value() > threshold).cast<double>();
  return unary_op(OpKind::binarize_st, soft, std::move(out),
                  [](const ArrayXXd& g) -> ArrayXXd { return g; });
}

Var graft(const Var& input, double value, const ArrayXXd& grad) {
  if (grad.rows() != input.rows() || grad.cols() != input.cols())
    throw ShapeError("graft: gradient shape does not match input");
  Tape* t = common_tape({&input});
  if (t == nullptr) return constant(value);
  const int ii = input.node();
  auto gv = std::make_shared<const ArrayXXd>(grad);
  return t->emit(OpKind::graft, scalar_array(value), {ii},
                 [ii, gv](Tape& tp, const ArrayXXd& g) {
                   tp.accumulate(ii, ArrayXXd(g(0, 0) * (*gv)));
                 });
}

}  // namespace epigvi::ad
