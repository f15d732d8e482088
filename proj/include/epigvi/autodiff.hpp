#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "epigvi/errors.hpp"

namespace epigvi::ad {

using Eigen::ArrayXXd;
using Eigen::Index;

enum class OpKind : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  div,
  neg,
  exp,
  log,
  pow_scalar,
  sum,
  mean,
  matmul,
  sigmoid,
  softplus,
  tanh,
  segment_sum,
  index_select,
  concat,
  clamp_min,
  binarize_st,
  graft,
};

class Tape;

/// Dense 2-D tensor participating in a reverse-mode differentiation graph.
/// Vectors are (n, 1), scalars (1, 1). A Var without a node id is a
/// constant: it takes part in forward values but never receives adjoints,
/// and operations on constants alone fold to constants.
class Var {
 public:
  Var() = default;

  const ArrayXXd& value() const {
    if (!value_) throw ContractError("Var: empty handle");
    return *value_;
  }
  const std::shared_ptr<const ArrayXXd>& value_ptr() const { return value_; }

  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Index size() const { return value().size(); }
  double scalar() const {
    if (size() != 1) throw ShapeError("Var::scalar: tensor is not 1x1");
    return value()(0, 0);
  }

  bool is_const() const { return node_ < 0; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

 private:
  friend class Tape;
  friend Var constant(ArrayXXd);

  std::shared_ptr<const ArrayXXd> value_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

Var constant(ArrayXXd v);
Var constant(double v);

/// Ordered record of the operations of one forward pass. Building and
/// differentiating a tape is single-threaded; independent tapes may be used
/// concurrently from different threads.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a differentiable input.
  Var leaf(ArrayXXd v);

  /// Reverse sweep from a scalar loss. Resets adjoints first; after the
  /// call every node reachable from the loss holds its adjoint and every
  /// other node reads as zero.
  void backward(const Var& loss);

  /// Adjoint of a tape variable (zeros if unreached by the last backward).
  /// Constants never carry adjoints and querying one is a contract error.
  ArrayXXd adjoint(const Var& v) const;

  std::size_t node_count() const { return nodes_.size(); }

  // Internals used by the op free functions.
  using PullFn = std::function<void(Tape&, const ArrayXXd&)>;
  Var emit(OpKind kind, ArrayXXd value, std::vector<int> inputs, PullFn pull);
  void accumulate(int node, const ArrayXXd& g);

 private:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::shared_ptr<const ArrayXXd> value;
    std::vector<int> inputs;
    PullFn pull;       // empty for leaves
    ArrayXXd adjoint;  // empty until touched by backward
  };
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Operations. Binary elementwise ops accept equal shapes or a scalar (1,1)
// on either side; no other broadcasting.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var pow_scalar(const Var& a, double exponent);
Var sum(const Var& a);
Var mean(const Var& a);
Var matmul(const Var& a, const Var& b);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var tanh(const Var& a);

/// Sums entries of a column vector by group id: out[g] = sum of values[i]
/// with group_ids[i] == g. Ids must lie in [0, n_groups). With
/// group_ids = destination indices this doubles as scatter-add.
Var segment_sum(const Var& values, const std::vector<int>& group_ids,
                int n_groups);

/// Gathers entries by flat row-major index into an (out_rows, out_cols)
/// tensor (row-major fill). Default shape is a column vector.
Var index_select(const Var& a, const std::vector<int>& flat_indices,
                 Index out_rows = -1, Index out_cols = 1);

/// Concatenates along axis 0 (stack rows) or axis 1 (stack columns).
Var concat(const std::vector<Var>& parts, int axis);

/// max(a, threshold); gradient passes where a is strictly above the
/// threshold and is zero otherwise.
Var clamp_min(const Var& a, double threshold);

/// Hard threshold with a straight-through gradient: forward value is
/// 1 where soft > threshold else 0, backward passes the adjoint to `soft`
/// unchanged.
Var binarize_straight_through(const Var& soft, double threshold = 0.5);

/// Splices an externally differentiated scalar into the graph: forward
/// value is `value`; backward adds adjoint * grad to `input`. Used to stitch
/// per-replicate tapes (differentiated elsewhere) onto a parent tape.
Var graft(const Var& input, double value, const ArrayXXd& grad);

// Convenience composites (built from the ops above).
inline Var clamp_max(const Var& a, double threshold) {
  return neg(clamp_min(neg(a), -threshold));
}

// Operator sugar for expression-style code.
inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator+(const Var& a, double b) { return add(a, constant(b)); }
inline Var operator+(double a, const Var& b) { return add(constant(a), b); }
inline Var operator-(const Var& a, double b) { return sub(a, constant(b)); }
inline Var operator-(double a, const Var& b) { return sub(constant(a), b); }
inline Var operator*(const Var& a, double b) { return mul(a, constant(b)); }
inline Var operator*(double a, const Var& b) { return mul(constant(a), b); }
inline Var operator/(const Var& a, double b) { return div(a, constant(b)); }
inline Var operator/(double a, const Var& b) { return div(constant(a), b); }

}  // namespace epigvi::ad
