#include "fedsilo/transform.hpp"

#include <cmath>

namespace fedsilo::transform {

using fedsilo::Error;
using fedsilo::ErrorCode;
using fedsilo::require;
using model::BlockInfo;

AffineTransform AffineTransform::identity(std::size_t d) {
  return {Matrix::identity(d), Vector(d, 0.0)};
}

bool AffineTransform::is_identity() const {
  const std::size_t d = dim();
  if (A.rows() != d || A.cols() != d) return false;
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c)
      if (A.at(r, c) != (r == c ? 1.0 : 0.0)) return false;
  for (double v : b)
    if (v != 0.0) return false;
  return true;
}

void AffineTransform::validate() const {
  require(A.rows() == A.cols() && A.rows() == b.size(), ErrorCode::kInvalidArgument,
          "transform A/b dimension mismatch");
  numkit::ensure_finite(A.data(), "AffineTransform.A");
  numkit::ensure_finite(b, "AffineTransform.b");
}

void TransformOptConfig::validate() const {
  require(learning_rate > 0.0, ErrorCode::kInvalidArgument,
          "transform learning rate must be positive");
  require(momentum >= 0.0 && momentum < 1.0, ErrorCode::kInvalidArgument,
          "transform momentum must lie in [0, 1)");
  require(batch_size >= 1, ErrorCode::kInvalidArgument, "transform batch size must be >= 1");
  require(steps_per_round >= 0 || steps_per_round == kAutoSteps, ErrorCode::kInvalidArgument,
          "steps_per_round must be >= 0 or auto");
}

Matrix apply(const AffineTransform& f, const Matrix& features) {
  require(features.cols() == f.dim(), ErrorCode::kInvalidArgument,
          "transform apply: feature dim mismatch");
  const std::size_t d = f.dim();
  Matrix out(features.rows(), d);
  for (std::size_t r = 0; r < features.rows(); ++r) {
    const auto x = features.row(r);
    auto y = out.row(r);
    for (std::size_t i = 0; i < d; ++i) {
      double acc = f.b[i];
      const auto a = f.A.row(i);
      for (std::size_t j = 0; j < d; ++j) acc += a[j] * x[j];
      y[i] = acc;
    }
  }
  numkit::ensure_finite(out.data(), "transform apply");
  return out;
}

ParamVector transform_params(const AffineTransform& f) {
  const std::size_t d = f.dim();
  ParamVector params{{BlockInfo{"A", d, d, 0}, BlockInfo{"b", d, 1, 0}}};
  params.set_block("A", f.A);
  params.set_block("b", Matrix(d, 1, f.b));
  return params;
}

AffineTransform transform_from_params(const ParamVector& params) {
  const Matrix a = params.block_matrix("A");
  const Matrix b = params.block_matrix("b");
  return {a, Vector(b.data().begin(), b.data().end())};
}

std::pair<double, ParamVector> transform_loss_and_grad(const AffineTransform& f,
                                                       const ParamVector& w,
                                                       const LabeledBatch& batch,
                                                       const ModelSpec& spec) {
  f.validate();
  const std::size_t d = f.dim();
  require(batch.features.cols() == d, ErrorCode::kInvalidArgument,
          "transform grad: feature dim mismatch");

  LabeledBatch transformed{apply(f, batch.features), batch.labels};
  const auto result = model::loss_and_grad_with_inputs(w, transformed, spec);

  // chain rule through z = A x + b: dL/dA = sum_r g_r x_r^T, dL/db = sum_r g_r
  ParamVector grad{{BlockInfo{"A", d, d, 0}, BlockInfo{"b", d, 1, 0}}};
  auto ga = grad.block(0);
  auto gb = grad.block(1);
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto g = result.input_grad.row(r);
    const auto x = batch.features.row(r);
    for (std::size_t i = 0; i < d; ++i) {
      gb[i] += g[i];
      double* row = ga.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += g[i] * x[j];
    }
  }
  return {result.loss, std::move(grad)};
}

void estimate_step(AffineTransform& f, const ParamVector& w, const LabeledBatch& batch,
                   const ModelSpec& spec, const TransformOptConfig& cfg, OptimizerState& state,
                   double learning_rate, double grad_scale) {
  cfg.validate();
  auto [loss, grad] = transform_loss_and_grad(f, w, batch, spec);
  numkit::ensure_finite(loss, "transform estimate_step");
  if (grad_scale != 1.0) {
    for (double& v : grad.data()) v *= grad_scale;
  }
  ParamVector params = transform_params(f);
  model::sgd_step(params, grad, state, learning_rate);
  f = transform_from_params(params);
}

double compose_check(const AffineTransform& f, const data::SkewSpec& skew) {
  require(f.dim() == skew.c.size(), ErrorCode::kInvalidArgument,
          "compose_check: dimension mismatch");
  const std::size_t d = f.dim();
  const double sqrt_d = std::sqrt(static_cast<double>(d));

  Matrix ag = numkit::matmul(f.A, skew.G);
  for (std::size_t i = 0; i < d; ++i) ag.at(i, i) -= 1.0;
  const double linear_residual = numkit::frobenius_norm(ag) / sqrt_d;

  Vector shift = numkit::matvec(f.A, skew.c);
  for (std::size_t i = 0; i < d; ++i) shift[i] += f.b[i];
  const double shift_residual = numkit::norm2(shift) / sqrt_d;

  return linear_residual + shift_residual;
}

}  // namespace fedsilo::transform
