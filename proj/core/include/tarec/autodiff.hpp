#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tarec/matrix.hpp"

namespace tarec {

/// A named trainable tensor with its gradient accumulator.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Matrix value)
      : name(std::move(name)), value(std::move(value)), grad(this->value.rows(), this->value.cols()) {}

  std::string name;
  Matrix value;
  Matrix grad;

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  /// Scalar value of a 1x1 node.
  double item() const;
  bool valid() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  int id() const noexcept { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Records a computation over matrices and replays it backwards to produce
/// exact gradients. A tape built with `record = false` keeps values only.
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var input(Matrix value);
  /// Constant referencing caller-owned storage, which must outlive the tape.
  Var constant(const Matrix& value);
  /// Trainable leaf; backward() accumulates into `p.grad`.
  Var param(Parameter& p);

  /// Accumulates d(loss)/d(param) into every reachable Parameter. `loss` must
  /// be 1x1. Seals the tape.
  void backward(Var loss);

  /// Gradient of the last backward() w.r.t. `v` (zeros when unreachable).
  Matrix grad(Var v) const;

  // Op construction interface.
  using Backward = std::function<void()>;
  Var push(Matrix value, std::vector<Var> parents, Backward backward);
  bool requires_grad(Var v) const;
  Matrix& grad_ref(Var v);
  const Matrix& value(Var v) const;
  const Matrix& grad_of(int id) const;
  void check(Var v) const;

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    Backward backward;
  };
  const Matrix& node_value(const Node& n) const { return n.external ? *n.external : n.value; }

  bool record_;
  bool sealed_ = false;
  std::vector<Node> nodes_;
};

/// Differentiable operations. All throw GraphError on shape mismatch or when
/// operands live on different tapes.
namespace ad {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// a (m x n) + row (1 x n) broadcast down the rows.
Var add_row(Var a, Var row);
/// Row r multiplied by factors[r].
Var scale_rows(Var a, std::span<const double> factors);
Var silu(Var a);
Var tanh(Var a);
/// log(1 + exp(a)), elementwise; equals -log(sigmoid(-a)).
Var softplus(Var a);
Var log_sigmoid(Var a);
/// Row-wise layer normalisation with affine gamma, beta (1 x n each).
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
/// Gathers rows `index` of `table`; gradient scatter-adds back.
Var gather_rows(Var table, std::span<const int> index);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
/// Rows with mask[r] set are replaced by `row` (1 x n).
Var replace_rows(Var a, const std::vector<bool>& mask, Var row);
/// Multi-head scaled dot-product attention over `batch` sequences of `seq`
/// tokens stacked row-wise. Keys with key_mask == false are ignored; every
/// query must have at least one visible key.
Var attention(Var q, Var k, Var v, std::size_t batch, std::size_t seq, std::size_t heads,
              const std::vector<bool>& key_mask);
/// m x 1 column of squared row norms.
Var row_sq_norm(Var a);
/// m x 1 column of row-wise cosine similarities.
Var cosine_rows(Var a, Var b);
Var sum(Var a);
Var mean(Var a);
/// Value copy with no gradient path.
Var detach(Var a);

}  // namespace ad
}  // namespace tarec
