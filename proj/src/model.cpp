#include "fedsilo/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fedsilo::model {

using fedsilo::Error;
using fedsilo::ErrorCode;
using fedsilo::require;

void ModelSpec::validate() const {
  require(layer_sizes.size() >= 3, ErrorCode::kInvalidArgument,
          "model spec needs at least one hidden layer");
  for (std::size_t s : layer_sizes)
    require(s >= 1, ErrorCode::kInvalidArgument, "model spec layer size must be >= 1");
  require(num_classes() >= 2, ErrorCode::kInvalidArgument, "model spec needs >= 2 classes");
}

ParamVector::ParamVector(std::vector<BlockInfo> manifest) : blocks_(std::move(manifest)) {
  std::size_t offset = 0;
  for (auto& b : blocks_) {
    b.offset = offset;
    offset += b.count();
  }
  data_.assign(offset, 0.0);
}

ParamVector ParamVector::zeros_like(const ParamVector& other) {
  ParamVector out;
  out.blocks_ = other.blocks_;
  out.data_.assign(other.data_.size(), 0.0);
  return out;
}

std::span<const double> ParamVector::block(std::string_view name) const {
  const BlockInfo& info = block_info(name);
  return {data_.data() + info.offset, info.count()};
}

const BlockInfo& ParamVector::block_info(std::string_view name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return b;
  throw Error(ErrorCode::kInvalidArgument, "no parameter block named " + std::string(name));
}

bool ParamVector::has_block(std::string_view name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return true;
  return false;
}

Matrix ParamVector::block_matrix(std::string_view name) const {
  const BlockInfo& info = block_info(name);
  std::vector<double> values(data_.begin() + static_cast<std::ptrdiff_t>(info.offset),
                             data_.begin() + static_cast<std::ptrdiff_t>(info.offset + info.count()));
  return Matrix(info.rows, info.cols, std::move(values));
}

void ParamVector::set_block(std::string_view name, const Matrix& values) {
  const BlockInfo& info = block_info(name);
  require(values.rows() == info.rows && values.cols() == info.cols, ErrorCode::kInvalidArgument,
          "set_block: shape mismatch for " + std::string(name));
  std::copy(values.data().begin(), values.data().end(),
            data_.begin() + static_cast<std::ptrdiff_t>(info.offset));
}

bool ParamVector::same_manifest(const ParamVector& other) const {
  return blocks_.size() == other.blocks_.size() &&
         std::equal(blocks_.begin(), blocks_.end(), other.blocks_.begin());
}

std::vector<BlockInfo> model_manifest(const ModelSpec& spec) {
  spec.validate();
  std::vector<BlockInfo> manifest;
  for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
    const std::size_t in = spec.layer_sizes[l];
    const std::size_t out = spec.layer_sizes[l + 1];
    const std::string base = "layer" + std::to_string(l);
    manifest.push_back({base + ".W", out, in, 0});
    manifest.push_back({base + ".b", out, 1, 0});
  }
  return manifest;
}

ParamVector init_params(const ModelSpec& spec, Rng rng) {
  ParamVector params{model_manifest(spec)};
  for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
    const std::size_t in = spec.layer_sizes[l];
    const std::size_t out = spec.layer_sizes[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    auto w = params.block(2 * l);
    for (double& v : w) v = rng.uniform(-limit, limit);
    // biases stay zero
  }
  return params;
}

namespace {

void validate_batch(const ParamVector& w, const LabeledBatch& batch, const ModelSpec& spec) {
  spec.validate();
  require(w.same_manifest(ParamVector{model_manifest(spec)}), ErrorCode::kInvalidArgument,
          "parameter manifest does not match model spec");
  require(batch.size() >= 1, ErrorCode::kInvalidArgument, "batch must hold at least one sample");
  require(batch.features.rows() == batch.size(), ErrorCode::kInvalidArgument,
          "batch features/labels row count mismatch");
  require(batch.features.cols() == spec.input_dim(), ErrorCode::kInvalidArgument,
          "batch feature dim does not match model input dim");
  const int classes = static_cast<int>(spec.num_classes());
  for (int label : batch.labels)
    require(label >= 0 && label < classes, ErrorCode::kValidation, "label out of range");
}

// Shared forward/backward. Activations are kept per layer; the backward pass
// fills `grad` and, when requested, the gradient w.r.t. the input features.
double forward_backward(const ParamVector& w, const LabeledBatch& batch, const ModelSpec& spec,
                        ParamVector* grad, Matrix* input_grad) {
  const std::size_t batch_size = batch.size();
  const std::size_t num_layers = spec.layer_sizes.size() - 1;
  const double inv_b = 1.0 / static_cast<double>(batch_size);

  // forward
  std::vector<Matrix> activations;  // activations[l] = input to layer l
  activations.reserve(num_layers + 1);
  activations.push_back(batch.features);
  for (std::size_t l = 0; l < num_layers; ++l) {
    const std::size_t in = spec.layer_sizes[l];
    const std::size_t out = spec.layer_sizes[l + 1];
    const auto wl = w.block(2 * l);
    const auto bl = w.block(2 * l + 1);
    const Matrix& h = activations.back();
    Matrix z(batch_size, out);
    for (std::size_t r = 0; r < batch_size; ++r) {
      const auto hr = h.row(r);
      for (std::size_t j = 0; j < out; ++j) {
        double acc = bl[j];
        const double* wj = wl.data() + j * in;
        for (std::size_t k = 0; k < in; ++k) acc += wj[k] * hr[k];
        z.at(r, j) = (l + 1 < num_layers) ? std::tanh(acc) : acc;
      }
    }
    activations.push_back(std::move(z));
  }

  // softmax cross-entropy, max-shifted
  const std::size_t classes = spec.num_classes();
  Matrix& logits = activations.back();
  double loss = 0.0;
  for (std::size_t r = 0; r < batch_size; ++r) {
    auto row = logits.row(r);
    double max_logit = row[0];
    for (double v : row) max_logit = std::max(max_logit, v);
    double sum = 0.0;
    for (std::size_t j = 0; j < classes; ++j) sum += std::exp(row[j] - max_logit);
    const double log_sum = std::log(sum) + max_logit;
    loss += (log_sum - row[static_cast<std::size_t>(batch.labels[r])]) * inv_b;
    if (grad != nullptr || input_grad != nullptr) {
      // overwrite logits with d loss / d logits
      for (std::size_t j = 0; j < classes; ++j)
        row[j] = std::exp(row[j] - log_sum) * inv_b;
      row[static_cast<std::size_t>(batch.labels[r])] -= inv_b;
    }
  }
  numkit::ensure_finite(loss, "loss_and_grad");
  if (grad == nullptr && input_grad == nullptr) return loss;

  // backward
  Matrix delta = std::move(logits);  // B x out of current layer
  for (std::size_t l = num_layers; l-- > 0;) {
    const std::size_t in = spec.layer_sizes[l];
    const std::size_t out = spec.layer_sizes[l + 1];
    const auto wl = w.block(2 * l);
    const Matrix& h = activations[l];
    if (grad != nullptr) {
      auto gw = grad->block(2 * l);
      auto gb = grad->block(2 * l + 1);
      for (std::size_t r = 0; r < batch_size; ++r) {
        const auto dr = delta.row(r);
        const auto hr = h.row(r);
        for (std::size_t j = 0; j < out; ++j) {
          const double dj = dr[j];
          gb[j] += dj;
          double* gwj = gw.data() + j * in;
          for (std::size_t k = 0; k < in; ++k) gwj[k] += dj * hr[k];
        }
      }
    }
    const bool need_below = l > 0 || input_grad != nullptr;
    if (!need_below) break;
    Matrix below(batch_size, in);
    for (std::size_t r = 0; r < batch_size; ++r) {
      const auto dr = delta.row(r);
      auto br = below.row(r);
      for (std::size_t k = 0; k < in; ++k) {
        double acc = 0.0;
        for (std::size_t j = 0; j < out; ++j) acc += dr[j] * wl[j * in + k];
        br[k] = acc;
      }
    }
    if (l > 0) {
      // through tanh: activations[l] holds tanh values
      for (std::size_t r = 0; r < batch_size; ++r) {
        const auto hr = h.row(r);
        auto br = below.row(r);
        for (std::size_t k = 0; k < in; ++k) br[k] *= 1.0 - hr[k] * hr[k];
      }
    }
    if (l == 0 && input_grad != nullptr) {
      *input_grad = std::move(below);
    } else {
      delta = std::move(below);
    }
  }
  if (grad != nullptr) numkit::ensure_finite(grad->data(), "loss_and_grad gradient");
  if (input_grad != nullptr) numkit::ensure_finite(input_grad->data(), "input gradient");
  return loss;
}

}  // namespace

LossGrad loss_and_grad(const ParamVector& w, const LabeledBatch& batch, const ModelSpec& spec) {
  validate_batch(w, batch, spec);
  LossGrad out;
  out.grad = ParamVector::zeros_like(w);
  out.loss = forward_backward(w, batch, spec, &out.grad, nullptr);
  return out;
}

LossGradInputs loss_and_grad_with_inputs(const ParamVector& w, const LabeledBatch& batch,
                                         const ModelSpec& spec) {
  validate_batch(w, batch, spec);
  LossGradInputs out;
  out.grad = ParamVector::zeros_like(w);
  out.loss = forward_backward(w, batch, spec, &out.grad, &out.input_grad);
  return out;
}

double loss_value(const ParamVector& w, const LabeledBatch& batch, const ModelSpec& spec) {
  validate_batch(w, batch, spec);
  return forward_backward(w, batch, spec, nullptr, nullptr);
}

OptimizerState OptimizerState::for_params(const ParamVector& params, double momentum) {
  require(momentum >= 0.0 && momentum < 1.0, ErrorCode::kInvalidArgument,
          "momentum must lie in [0, 1)");
  OptimizerState state;
  state.velocity = ParamVector::zeros_like(params);
  state.momentum = momentum;
  return state;
}

void sgd_step(ParamVector& w, const ParamVector& grad, OptimizerState& opt, double alpha) {
  require(w.same_manifest(grad) && w.same_manifest(opt.velocity), ErrorCode::kInvalidArgument,
          "sgd_step: manifest mismatch");
  require(alpha >= 0.0, ErrorCode::kInvalidArgument, "sgd_step: negative learning rate");
  auto wd = w.data();
  auto gd = grad.data();
  auto vd = opt.velocity.data();
  for (std::size_t i = 0; i < wd.size(); ++i) {
    vd[i] = opt.momentum * vd[i] + gd[i];
    wd[i] -= alpha * vd[i];
  }
  numkit::ensure_finite(wd, "sgd_step");
}

double anneal(double alpha, int epoch, const AnnealSchedule& schedule) {
  require(epoch >= 1, ErrorCode::kInvalidArgument, "anneal: epoch must be >= 1");
  if (epoch <= schedule.start_epoch) return alpha;
  const double steps = static_cast<double>(epoch - schedule.start_epoch);
  return alpha * std::pow(2.0, -0.5 * steps);
}

}  // namespace fedsilo::model
