#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fedsilo/numkit.hpp"

namespace fedsilo::model {

using numkit::Matrix;
using numkit::Rng;
using numkit::Vector;

/// Feed-forward tanh classifier: layer_sizes = [input dim, hidden..., classes].
struct ModelSpec {
  std::vector<std::size_t> layer_sizes;

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t num_classes() const { return layer_sizes.back(); }
  void validate() const;
};

struct BlockInfo {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;

  std::size_t count() const { return rows * cols; }
  bool operator==(const BlockInfo& other) const {
    return name == other.name && rows == other.rows && cols == other.cols;
  }
};

/// Flat, ordered parameter vector with a shape manifest. Block views index
/// into one contiguous buffer; flatten/unflatten round-trips bit-exactly.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::vector<BlockInfo> manifest);  // zero-filled

  static ParamVector zeros_like(const ParamVector& other);

  const std::vector<BlockInfo>& manifest() const { return blocks_; }
  std::size_t size() const { return data_.size(); }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  std::size_t block_count() const { return blocks_.size(); }
  std::span<double> block(std::size_t idx) {
    return {data_.data() + blocks_[idx].offset, blocks_[idx].count()};
  }
  std::span<const double> block(std::size_t idx) const {
    return {data_.data() + blocks_[idx].offset, blocks_[idx].count()};
  }
  std::span<const double> block(std::string_view name) const;
  const BlockInfo& block_info(std::string_view name) const;
  bool has_block(std::string_view name) const;

  Matrix block_matrix(std::string_view name) const;
  void set_block(std::string_view name, const Matrix& values);

  bool same_manifest(const ParamVector& other) const;
  bool operator==(const ParamVector& other) const = default;

 private:
  std::vector<BlockInfo> blocks_;
  std::vector<double> data_;
};

std::vector<BlockInfo> model_manifest(const ModelSpec& spec);

/// Glorot-uniform initialization from the given stream; biases start at zero.
ParamVector init_params(const ModelSpec& spec, Rng rng);

struct LabeledBatch {
  Matrix features;          // B x d
  std::vector<int> labels;  // class indices, 0 <= label < C

  std::size_t size() const { return labels.size(); }
};

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

struct LossGradInputs {
  double loss = 0.0;
  ParamVector grad;
  Matrix input_grad;  // B x d, d loss / d features
};

/// Mean cross-entropy over the batch and its gradient w.r.t. the parameters.
LossGrad loss_and_grad(const ParamVector& w, const LabeledBatch& batch, const ModelSpec& spec);

/// Same, additionally returning the gradient w.r.t. the input features
/// (used for transform estimation, where w is frozen).
LossGradInputs loss_and_grad_with_inputs(const ParamVector& w, const LabeledBatch& batch,
                                         const ModelSpec& spec);

/// Forward pass only.
double loss_value(const ParamVector& w, const LabeledBatch& batch, const ModelSpec& spec);

struct OptimizerState {
  ParamVector velocity;
  double momentum = 0.0;

  static OptimizerState for_params(const ParamVector& params, double momentum);
};

/// Momentum SGD: velocity <- momentum * velocity + grad; w <- w - alpha * velocity.
void sgd_step(ParamVector& w, const ParamVector& grad, OptimizerState& opt, double alpha);

/// Learning-rate schedule: alpha is unchanged through `start_epoch` and decays
/// by a factor of 2^(-1/2) for each epoch past it.
struct AnnealSchedule {
  int start_epoch = kNever;

  static constexpr int kNever = std::numeric_limits<int>::max();
  static AnnealSchedule never() { return {}; }
  static AnnealSchedule after(int epoch) { return {epoch}; }
  bool operator==(const AnnealSchedule&) const = default;
};

double anneal(double alpha, int epoch, const AnnealSchedule& schedule);

}  // namespace fedsilo::model
