#include "msmgn/nn/tape.hpp"

#include <fmt/format.h>

namespace msmgn::nn {
namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw Error("operands recorded on different tapes");
  return *a.tape;
}

void require_shape(bool ok, const char* op, Var a, Var b) {
  if (!ok) {
    throw ShapeError(fmt::format("{}: incompatible shapes {}x{} and {}x{}", op, a.rows(), a.cols(),
                                 b.rows(), b.cols()));
  }
}

}  // namespace

const Matrix& Var::value() const { return tape->value(*this); }

const Matrix& Tape::value(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  return n.ref != nullptr ? *n.ref : n.own;
}

Var Tape::push(Matrix value, const char* op, bool requires_grad, Backward backward) {
  if (!value.allFinite()) throw NonFiniteError(fmt::format("non-finite value produced by {}", op));
  Node n;
  n.own = std::move(value);
  n.op = op;
  n.requires_grad = grad_enabled_ && requires_grad;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(Matrix value) { return push(std::move(value), "constant", false, nullptr); }

Var Tape::input(Matrix value) { return push(std::move(value), "input", true, nullptr); }

Var Tape::param(Parameter& p) {
  if (!p.value.allFinite()) throw NonFiniteError("non-finite parameter " + p.name);
  Node n;
  n.ref = &p.value;
  n.param = grad_enabled_ ? &p : nullptr;
  n.requires_grad = grad_enabled_;
  n.op = "param";
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

void Tape::backward(Var loss) {
  if (loss.rows() != 1 || loss.cols() != 1) throw ShapeError("backward() needs a 1x1 loss");
  backward(loss, Matrix::Ones(1, 1));
}

void Tape::backward(Var out, const Matrix& seed) {
  if (seed.rows() != out.rows() || seed.cols() != out.cols()) throw ShapeError("backward seed shape mismatch");
  clear_grads();
  accumulate(out.id, seed);
  run_backward(out.id);
}

void Tape::clear_grads() {
  for (auto& n : nodes_) n.grad.resize(0, 0);
}

void Tape::run_backward(int from) {
  for (int id = from; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.backward || n.grad.size() == 0) continue;
    if (!n.grad.allFinite()) throw NonFiniteError(fmt::format("non-finite gradient at {}", n.op));
    n.backward(*this, n.grad);
  }
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_shape(a.cols() == b.rows(), "matmul", a, b);
  Matrix out;
  out.noalias() = a.value() * b.value();
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), "matmul", rg, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a.id, Matrix(g * b.value().transpose()));
    if (tp.requires_grad(b)) tp.accumulate(b.id, Matrix(a.value().transpose() * g));
  });
}

Var add_row(Var x, Var b) {
  Tape& t = same_tape(x, b);
  require_shape(b.rows() == 1 && b.cols() == x.cols(), "add_row", x, b);
  Matrix out = x.value().rowwise() + b.value().row(0);
  const bool rg = t.requires_grad(x) || t.requires_grad(b);
  return t.push(std::move(out), "add_row", rg, [x, b](Tape& tp, const Matrix& g) {
    tp.accumulate(x.id, g);
    if (tp.requires_grad(b)) tp.accumulate(b.id, Matrix(g.colwise().sum()));
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add", a, b);
  Matrix out = a.value() + b.value();
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), "add", rg, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a.id, g);
    tp.accumulate(b.id, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub", a, b);
  Matrix out = a.value() - b.value();
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), "sub", rg, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a.id, g);
    if (tp.requires_grad(b)) tp.accumulate(b.id, Matrix(-g));
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  Matrix out = s * a.value();
  return t.push(std::move(out), "scale", t.requires_grad(a),
                [a, s](Tape& tp, const Matrix& g) { tp.accumulate(a.id, Matrix(s * g)); });
}

Var relu(Var x) {
  Tape& t = *x.tape;
  Matrix out = x.value().cwiseMax(0.0);
  return t.push(std::move(out), "relu", t.requires_grad(x), [x](Tape& tp, const Matrix& g) {
    tp.accumulate(x.id, Matrix((x.value().array() > 0.0).select(g.array(), 0.0).matrix()));
  });
}

Var layer_norm(Var x, Var gain, Var offset, double eps) {
  Tape& t = same_tape(x, gain);
  same_tape(x, offset);
  require_shape(gain.rows() == 1 && gain.cols() == x.cols(), "layer_norm", x, gain);
  require_shape(offset.rows() == 1 && offset.cols() == x.cols(), "layer_norm", x, offset);
  const Matrix& xv = x.value();
  const auto n = static_cast<double>(xv.cols());
  const Eigen::VectorXd mean = xv.rowwise().mean();
  Matrix centered = xv.colwise() - mean;
  const Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / n) + eps).rsqrt().matrix();
  auto xhat = std::make_shared<Matrix>(centered.array().colwise() * inv_std.array());
  Matrix out = (xhat->array().rowwise() * gain.value().row(0).array()).rowwise() + offset.value().row(0).array();
  const bool rg = t.requires_grad(x) || t.requires_grad(gain) || t.requires_grad(offset);
  return t.push(std::move(out), "layer_norm", rg, [x, gain, offset, xhat, inv_std, n](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(gain)) tp.accumulate(gain.id, Matrix((g.array() * xhat->array()).colwise().sum()));
    if (tp.requires_grad(offset)) tp.accumulate(offset.id, Matrix(g.colwise().sum()));
    if (tp.requires_grad(x)) {
      const Eigen::ArrayXXd gh = g.array().rowwise() * gain.value().row(0).array();
      const Eigen::ArrayXd m1 = gh.rowwise().sum() / n;
      const Eigen::ArrayXd m2 = (gh * xhat->array()).rowwise().sum() / n;
      Eigen::ArrayXXd dx = (gh.colwise() - m1) - (xhat->array().colwise() * m2);
      dx.colwise() *= inv_std.array();
      tp.accumulate(x.id, Matrix(dx.matrix()));
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  Tape& t = *parts[0].tape;
  Eigen::Index cols = 0;
  bool rg = false;
  for (const Var& p : parts) {
    same_tape(parts[0], p);
    require_shape(p.rows() == parts[0].rows(), "concat_cols", parts[0], p);
    cols += p.cols();
    rg = rg || t.requires_grad(p);
  }
  Matrix out(parts[0].rows(), cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return t.push(std::move(out), "concat_cols", rg, [saved](Tape& tp, const Matrix& g) {
    Eigen::Index c0 = 0;
    for (const Var& p : saved) {
      if (tp.requires_grad(p)) tp.accumulate(p.id, Matrix(g.middleCols(c0, p.cols())));
      c0 += p.cols();
    }
  });
}

Var slice_rows(Var x, Eigen::Index start, Eigen::Index count) {
  Tape& t = *x.tape;
  if (start < 0 || count < 0 || start + count > x.rows()) {
    throw ShapeError(fmt::format("slice_rows: [{}, {}) outside {} rows", start, start + count, x.rows()));
  }
  Matrix out = x.value().middleRows(start, count);
  return t.push(std::move(out), "slice_rows", t.requires_grad(x), [x, start, count](Tape& tp, const Matrix& g) {
    Matrix dx = Matrix::Zero(x.rows(), x.cols());
    dx.middleRows(start, count) = g;
    tp.accumulate(x.id, dx);
  });
}

Var gather_rows(Var x, std::shared_ptr<const std::vector<int>> index) {
  Tape& t = *x.tape;
  const Matrix& xv = x.value();
  Matrix out(static_cast<Eigen::Index>(index->size()), xv.cols());
  for (std::size_t k = 0; k < index->size(); ++k) {
    const int r = (*index)[k];
    if (r < 0 || r >= xv.rows()) throw ShapeError(fmt::format("gather_rows: index {} out of range {}", r, xv.rows()));
    out.row(static_cast<Eigen::Index>(k)) = xv.row(r);
  }
  return t.push(std::move(out), "gather_rows", t.requires_grad(x), [x, index](Tape& tp, const Matrix& g) {
    Matrix dx = Matrix::Zero(x.rows(), x.cols());
    for (std::size_t k = 0; k < index->size(); ++k) dx.row((*index)[k]) += g.row(static_cast<Eigen::Index>(k));
    tp.accumulate(x.id, dx);
  });
}

Var scatter_add_rows(Var x, std::shared_ptr<const std::vector<int>> index, Eigen::Index rows,
                     std::shared_ptr<const std::vector<int>> order) {
  Tape& t = *x.tape;
  const Matrix& xv = x.value();
  if (static_cast<Eigen::Index>(index->size()) != xv.rows()) {
    throw ShapeError(fmt::format("scatter_add_rows: {} indices for {} rows", index->size(), xv.rows()));
  }
  if (order && order->size() != index->size()) throw ShapeError("scatter_add_rows: order length mismatch");
  Matrix out = Matrix::Zero(rows, xv.cols());
  for (std::size_t n = 0; n < index->size(); ++n) {
    const int k = order ? (*order)[n] : static_cast<int>(n);
    const int r = (*index)[static_cast<std::size_t>(k)];
    if (r < 0 || r >= rows) throw ShapeError(fmt::format("scatter_add_rows: index {} out of range {}", r, rows));
    out.row(r) += xv.row(k);
  }
  return t.push(std::move(out), "scatter_add_rows", t.requires_grad(x), [x, index](Tape& tp, const Matrix& g) {
    Matrix dx(x.rows(), x.cols());
    for (std::size_t k = 0; k < index->size(); ++k) dx.row(static_cast<Eigen::Index>(k)) = g.row((*index)[k]);
    tp.accumulate(x.id, dx);
  });
}

Var affine_cols(Var x, const RowVector& scale, const RowVector& shift) {
  Tape& t = *x.tape;
  if (scale.size() != x.cols() || shift.size() != x.cols()) throw ShapeError("affine_cols: width mismatch");
  Matrix out = (x.value().array().rowwise() * scale.array()).rowwise() + shift.array();
  return t.push(std::move(out), "affine_cols", t.requires_grad(x), [x, scale](Tape& tp, const Matrix& g) {
    tp.accumulate(x.id, Matrix(g.array().rowwise() * scale.array()));
  });
}

Var select_rows(Var a, Var b, std::shared_ptr<const std::vector<bool>> mask) {
  Tape& t = same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "select_rows", a, b);
  if (static_cast<Eigen::Index>(mask->size()) != a.rows()) throw ShapeError("select_rows: mask length mismatch");
  Matrix out = a.value();
  for (std::size_t i = 0; i < mask->size(); ++i) {
    if ((*mask)[i]) out.row(static_cast<Eigen::Index>(i)) = b.value().row(static_cast<Eigen::Index>(i));
  }
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), "select_rows", rg, [a, b, mask](Tape& tp, const Matrix& g) {
    Matrix ga = g, gb = Matrix::Zero(g.rows(), g.cols());
    for (std::size_t i = 0; i < mask->size(); ++i) {
      if ((*mask)[i]) {
        gb.row(static_cast<Eigen::Index>(i)) = g.row(static_cast<Eigen::Index>(i));
        ga.row(static_cast<Eigen::Index>(i)).setZero();
      }
    }
    tp.accumulate(a.id, ga);
    tp.accumulate(b.id, gb);
  });
}

Var masked_mean_square(Var x, std::shared_ptr<const std::vector<bool>> mask) {
  Tape& t = *x.tape;
  const Matrix& xv = x.value();
  if (mask && static_cast<Eigen::Index>(mask->size()) != xv.rows()) throw ShapeError("masked_mean_square: mask length");
  double sum = 0.0;
  Eigen::Index count = 0;
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    if (mask && !(*mask)[static_cast<std::size_t>(i)]) continue;
    sum += xv.row(i).squaredNorm();
    count += xv.cols();
  }
  if (count == 0) throw ShapeError("masked_mean_square: no rows selected");
  Matrix out(1, 1);
  out(0, 0) = sum / static_cast<double>(count);
  return t.push(std::move(out), "masked_mean_square", t.requires_grad(x),
                [x, mask, count](Tape& tp, const Matrix& g) {
                  Matrix dx = (2.0 * g(0, 0) / static_cast<double>(count)) * x.value();
                  if (mask) {
                    for (std::size_t i = 0; i < mask->size(); ++i) {
                      if (!(*mask)[i]) dx.row(static_cast<Eigen::Index>(i)).setZero();
                    }
                  }
                  tp.accumulate(x.id, dx);
                });
}

Var sum_all(Var x) {
  Tape& t = *x.tape;
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return t.push(std::move(out), "sum_all", t.requires_grad(x), [x](Tape& tp, const Matrix& g) {
    tp.accumulate(x.id, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

}  // namespace msmgn::nn
