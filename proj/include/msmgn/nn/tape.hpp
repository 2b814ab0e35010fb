#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "msmgn/common.hpp"

namespace msmgn::nn {

/// Trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

/// Reverse-mode tape. Every op appends one node; backward() walks the nodes in
/// reverse and accumulates gradients into inputs and parameters.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix&)>;

  /// With gradients disabled no backward closures are recorded (inference).
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Matrix value);
  /// Leaf whose gradient is kept on the tape (for Jacobians w.r.t. inputs).
  Var input(Matrix value);
  /// Leaf bound to a parameter; gradients accumulate into p.grad.
  Var param(Parameter& p);

  const Matrix& value(Var v) const;
  /// Gradient of the last backward() target w.r.t. v (empty if v was not reached).
  const Matrix& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

  /// Backpropagates from a 1x1 value.
  void backward(Var loss);
  /// Backpropagates an arbitrary seed of the same shape as `out`.
  void backward(Var out, const Matrix& seed);
  /// Drops node gradients (parameter gradients are left alone).
  void clear_grads();

  std::size_t size() const { return nodes_.size(); }

  /// Records an op result. Throws NonFiniteError naming `op` if `value` is not finite.
  Var push(Matrix value, const char* op, bool requires_grad, Backward backward);

  template <class Expr>
  void accumulate(int id, const Expr& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    Matrix& target = n.param != nullptr ? n.param->grad : n.grad;
    if (target.size() == 0) {
      target = g;
    } else {
      target += g;
    }
  }

 private:
  struct Node {
    Matrix own;
    const Matrix* ref = nullptr;
    Parameter* param = nullptr;
    Matrix grad;
    bool requires_grad = false;
    const char* op = "";
    Backward backward;
  };

  void run_backward(int from);

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

// Differentiable ops. All operands must live on the same tape.
Var matmul(Var a, Var b);
/// x + 1 * b for a 1 x C row b.
Var add_row(Var x, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var x);
/// Row-wise layer normalization with learned gain and offset (1 x C each).
Var layer_norm(Var x, Var gain, Var offset, double eps = 1e-5);
Var concat_cols(std::span<const Var> parts);
/// Rows [start, start + count) of x.
Var slice_rows(Var x, Eigen::Index start, Eigen::Index count);
/// out[k] = x[index[k]].
Var gather_rows(Var x, std::shared_ptr<const std::vector<int>> index);
/// out[index[k]] += x[k], visiting k in `order` (ascending k when null); out has `rows` rows.
Var scatter_add_rows(Var x, std::shared_ptr<const std::vector<int>> index, Eigen::Index rows,
                     std::shared_ptr<const std::vector<int>> order = nullptr);
/// Per-column affine map x * diag(scale) + shift with constant scale/shift.
Var affine_cols(Var x, const RowVector& scale, const RowVector& shift);
/// Row i taken from `b` where mask[i] is true, else from `a`.
Var select_rows(Var a, Var b, std::shared_ptr<const std::vector<bool>> mask);
/// Mean of squared entries over rows with mask[i] true (all rows if mask is null); 1x1.
Var masked_mean_square(Var x, std::shared_ptr<const std::vector<bool>> mask = nullptr);
/// Sum of all entries; 1x1.
Var sum_all(Var x);

}  // namespace msmgn::nn
