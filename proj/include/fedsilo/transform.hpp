#pragma once

#include <utility>
#include <vector>

#include "fedsilo/data.hpp"
#include "fedsilo/model.hpp"
#include "fedsilo/numkit.hpp"

namespace fedsilo::transform {

using model::LabeledBatch;
using model::ModelSpec;
using model::OptimizerState;
using model::ParamVector;
using numkit::Matrix;
using numkit::Vector;

/// Per-client canonicalizing map x -> A x + b. Fresh transforms start at the
/// identity, so an untrained transform is a bit-exact no-op.
struct AffineTransform {
  Matrix A;
  Vector b;

  static AffineTransform identity(std::size_t d);
  std::size_t dim() const { return b.size(); }
  bool is_identity() const;
  void validate() const;
};

struct TransformOptConfig {
  double learning_rate = 0.02;
  double momentum = 0.9;
  int batch_size = 1024;

  /// Momentum-SGD steps on (A, b) per communication round. kAutoSteps means
  /// one pass over the round shard at the transform batch size; 0 disables
  /// estimation entirely (the transform stays fixed).
  int steps_per_round = kAutoSteps;

  static constexpr int kAutoSteps = -1;
  void validate() const;
};

/// Row-wise application of the transform to a feature batch.
Matrix apply(const AffineTransform& f, const Matrix& features);

/// Parameter manifest used for the transform's optimizer state: blocks
/// "A" (d x d) and "b" (d x 1).
ParamVector transform_params(const AffineTransform& f);
AffineTransform transform_from_params(const ParamVector& params);

/// One momentum-SGD step on (A, b) against the mean cross-entropy of the
/// frozen model applied to transformed features. `w` is never written.
/// `grad_scale` weights a short batch's contribution (sum-of-gradients
/// semantics; 1 for a full batch).
void estimate_step(AffineTransform& f, const ParamVector& w, const LabeledBatch& batch,
                   const ModelSpec& spec, const TransformOptConfig& cfg, OptimizerState& state,
                   double learning_rate, double grad_scale = 1.0);

/// Gradient of the transformed-batch loss w.r.t. (A, b), packed in the
/// transform manifest. Exposed for gradient-oracle checks.
std::pair<double, ParamVector> transform_loss_and_grad(const AffineTransform& f,
                                                       const ParamVector& w,
                                                       const LabeledBatch& batch,
                                                       const ModelSpec& spec);

/// How well F inverts a known skew (G, c):
/// ||F.A G - I||_F / sqrt(d) + ||F.A c + F.b||_2 / sqrt(d).
double compose_check(const AffineTransform& f, const data::SkewSpec& skew);

}  // namespace fedsilo::transform
