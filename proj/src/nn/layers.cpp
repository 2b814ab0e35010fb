#include "msmgn/nn/layers.hpp"

#include <optional>

#include <fmt/format.h>

namespace msmgn::nn {
namespace {

Matrix normal_matrix(int rows, int cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace

Mlp::Mlp(std::string name, int in, int hidden, int out, bool layer_norm, std::mt19937_64& rng)
    : name_(std::move(name)), in_(in), out_(out), layer_norm_(layer_norm) {
  if (in <= 0 || hidden <= 0 || out <= 0) throw ShapeError("Mlp widths must be positive");
  const int widths[] = {in, hidden, hidden, out};
  for (int l = 0; l <= kHiddenLayers; ++l) {
    const double gain = l < kHiddenLayers ? 2.0 : 1.0;
    params_.push_back({fmt::format("{}.w{}", name_, l),
                       normal_matrix(widths[l], widths[l + 1], std::sqrt(gain / widths[l]), rng), {}});
    params_.push_back({fmt::format("{}.b{}", name_, l), Matrix::Zero(1, widths[l + 1]), {}});
  }
  if (layer_norm_) {
    params_.push_back({name_ + ".ln_gain", Matrix::Ones(1, out), {}});
    params_.push_back({name_ + ".ln_offset", Matrix::Zero(1, out), {}});
  }
}

Var Mlp::apply(Tape& tape, Var x) {
  if (x.cols() != in_) {
    throw ShapeError(fmt::format("{}: input width {} but the first layer expects {}", name_, x.cols(), in_));
  }
  Var h = x;
  for (int l = 0; l <= kHiddenLayers; ++l) {
    h = add_row(matmul(h, tape.param(params_[2 * l])), tape.param(params_[2 * l + 1]));
    if (l < kHiddenLayers) h = relu(h);
  }
  if (layer_norm_) h = layer_norm(h, tape.param(params_[6]), tape.param(params_[7]));
  return h;
}

Var Mlp::apply(Tape& tape, std::span<const MlpPart> parts) {
  Eigen::Index width = 0;
  for (const auto& part : parts) width += part.x.cols();
  if (width != in_) {
    throw ShapeError(fmt::format("{}: input width {} but the first layer expects {}", name_, width, in_));
  }
  Var w0 = tape.param(params_[0]);
  std::optional<Var> acc;
  Eigen::Index row = 0;
  for (const auto& part : parts) {
    Var proj = matmul(part.x, slice_rows(w0, row, part.x.cols()));
    row += part.x.cols();
    if (part.rows) proj = gather_rows(proj, part.rows);
    acc = acc ? add(*acc, proj) : proj;
  }
  Var h = relu(add_row(*acc, tape.param(params_[1])));
  for (int l = 1; l <= kHiddenLayers; ++l) {
    h = add_row(matmul(h, tape.param(params_[2 * l])), tape.param(params_[2 * l + 1]));
    if (l < kHiddenLayers) h = relu(h);
  }
  if (layer_norm_) h = layer_norm(h, tape.param(params_[6]), tape.param(params_[7]));
  return h;
}

Matrix Mlp::forward(const Matrix& x) {
  Tape tape(false);
  return apply(tape, tape.constant(x)).value();
}

void Mlp::zero() {
  for (auto& p : params_) p.value.setZero();
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const Parameter* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    if (p.grad.size() == 0) continue;
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
      throw ShapeError(fmt::format("Adam: gradient shape mismatch for {}", p.name));
    }
    m_[k] = config_.beta1 * m_[k] + (1.0 - config_.beta1) * p.grad;
    v_[k] = config_.beta2 * v_[k] + (1.0 - config_.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= lr * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + config_.eps);
  }
}

Normalizer::Normalizer(int width, std::int64_t max_accumulations)
    : width_(width),
      max_accumulations_(max_accumulations),
      mean_(RowVector::Zero(width)),
      m2_(RowVector::Zero(width)) {}

void Normalizer::update(const Matrix& batch) {
  if (batch.cols() != width_) {
    throw ShapeError(fmt::format("normalizer expects width {}, got {}", width_, batch.cols()));
  }
  if (accumulations_ >= max_accumulations_ || batch.rows() == 0) return;
  ++accumulations_;
  // Chan et al. pairwise merge of (count, mean, M2).
  const auto b = static_cast<double>(batch.rows());
  const RowVector bmean = batch.colwise().mean();
  const RowVector bm2 = (batch.rowwise() - bmean).colwise().squaredNorm();
  const double total = count_ + b;
  const RowVector delta = bmean - mean_;
  mean_ += delta * (b / total);
  m2_ += bm2 + delta.cwiseAbs2() * (count_ * b / total);
  count_ = total;
}

RowVector Normalizer::mean() const { return mean_; }

RowVector Normalizer::std() const {
  if (count_ <= 0.0) return RowVector::Ones(width_);
  return (m2_ / count_).cwiseMax(0.0).cwiseSqrt().cwiseMax(kStdFloor);
}

RowVector Normalizer::rms() const {
  if (count_ <= 0.0) return RowVector::Ones(width_);
  return ((m2_ / count_).cwiseMax(0.0) + mean_.cwiseAbs2()).cwiseSqrt().cwiseMax(kStdFloor);
}

Matrix Normalizer::apply(const Matrix& x) const {
  if (x.cols() != width_) throw ShapeError("normalizer apply: width mismatch");
  return (x.rowwise() - mean()).array().rowwise() / std().array();
}

Matrix Normalizer::inverse(const Matrix& x) const {
  if (x.cols() != width_) throw ShapeError("normalizer inverse: width mismatch");
  return (x.array().rowwise() * std().array()).matrix().rowwise() + mean();
}

Matrix Normalizer::state() const {
  Matrix s(1, 3 + 2 * width_);
  s(0, 0) = count_;
  s(0, 1) = static_cast<double>(accumulations_);
  s(0, 2) = static_cast<double>(max_accumulations_);
  s.block(0, 3, 1, width_) = mean_;
  s.block(0, 3 + width_, 1, width_) = m2_;
  return s;
}

Normalizer Normalizer::from_state(const Matrix& s) {
  if (s.rows() != 1 || s.cols() < 3 || (s.cols() - 3) % 2 != 0) throw ShapeError("bad normalizer state");
  const int width = static_cast<int>((s.cols() - 3) / 2);
  Normalizer n(width, static_cast<std::int64_t>(s(0, 2)));
  n.count_ = s(0, 0);
  n.accumulations_ = static_cast<std::int64_t>(s(0, 1));
  n.mean_ = s.block(0, 3, 1, width);
  n.m2_ = s.block(0, 3 + width, 1, width);
  return n;
}

}  // namespace msmgn::nn
