#include "fedsilo/baselines.hpp"

#include <algorithm>

namespace fedsilo::baselines {

using fedsilo::ErrorCode;
using fedsilo::require;
using data::RoundShard;
using model::LabeledBatch;
using model::OptimizerState;
using numkit::Matrix;
using numkit::Rng;
using transform::TransformOptConfig;

namespace {

// Union of all client data, concatenated in client order. The pooled stream
// keeps the first client's id so its per-epoch permutation coincides with that
// client's federated one; with a single client the pooled run IS that client's
// sequential SGD.
ClientDataset pool_datasets(const std::vector<ClientDataset>& datasets) {
  require(!datasets.empty(), ErrorCode::kInvalidArgument, "no datasets to pool");
  const std::size_t d = datasets.front().dim();
  std::size_t total = 0;
  for (const auto& ds : datasets) {
    ds.validate();
    require(ds.dim() == d, ErrorCode::kInvalidArgument, "pooled datasets must share one dim");
    total += ds.size();
  }
  ClientDataset pooled;
  pooled.client_id = datasets.front().client_id;
  pooled.domain_tag = "pooled";
  pooled.num_classes = datasets.front().num_classes;
  pooled.features = Matrix(total, d);
  pooled.labels.reserve(total);
  std::size_t row = 0;
  for (const auto& ds : datasets) {
    for (std::size_t r = 0; r < ds.size(); ++r, ++row) {
      const auto from = ds.features.row(r);
      auto to = pooled.features.row(row);
      std::copy(from.begin(), from.end(), to.begin());
    }
    pooled.labels.insert(pooled.labels.end(), ds.labels.begin(), ds.labels.end());
  }
  return pooled;
}

// One epoch of mini-batch momentum SGD over the permuted pooled stream.
double pooled_epoch(model::ParamVector& w, OptimizerState& opt, const ClientDataset& pooled,
                    int epoch, const TrainingConfig& cfg, double alpha) {
  const RoundShard stream = data::shard_epoch(pooled, 1, epoch, cfg.seed).front();
  const std::size_t n = stream.size();
  const std::size_t b = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps = (n + b - 1) / b;
  const std::size_t d = stream.features.cols();
  double loss_sum = 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t begin = k * b;
    const std::size_t end = std::min(n, begin + b);
    LabeledBatch batch;
    batch.features = Matrix(end - begin, d);
    batch.labels.assign(stream.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                        stream.labels.begin() + static_cast<std::ptrdiff_t>(end));
    for (std::size_t i = begin; i < end; ++i) {
      const auto from = stream.features.row(i);
      auto to = batch.features.row(i - begin);
      std::copy(from.begin(), from.end(), to.begin());
    }
    auto lg = model::loss_and_grad(w, batch, cfg.model);
    if (batch.size() < b) {
      const double scale = static_cast<double>(batch.size()) / static_cast<double>(b);
      for (double& v : lg.grad.data()) v *= scale;
    }
    model::sgd_step(w, lg.grad, opt, alpha);
    loss_sum += lg.loss;
  }
  return loss_sum / static_cast<double>(steps);
}

}  // namespace

CentralizedResult centralized_train(const std::vector<ClientDataset>& datasets,
                                    const TrainingConfig& cfg) {
  cfg.model.validate();
  const ClientDataset pooled = pool_datasets(datasets);
  CentralizedResult result;
  result.params = model::init_params(cfg.model, Rng(cfg.seed).fork("init"));
  for (int m = 1; m <= cfg.epochs; ++m) {
    const double alpha = model::anneal(cfg.alpha, m, cfg.anneal);
    OptimizerState opt = OptimizerState::for_params(result.params, cfg.momentum);
    result.epoch_train_loss.push_back(pooled_epoch(result.params, opt, pooled, m, cfg, alpha));
  }
  return result;
}

CatResult cat_train(const std::vector<ClientDataset>& datasets, const TrainingConfig& cfg) {
  cfg.model.validate();
  cfg.transform.validate();
  require(!datasets.empty(), ErrorCode::kInvalidArgument, "cat_train: no datasets");
  const std::size_t d = datasets.front().dim();

  CatResult result;
  result.params = model::init_params(cfg.model, Rng(cfg.seed).fork("init"));
  result.transforms.assign(datasets.size(), AffineTransform::identity(d));

  for (int m = 1; m <= cfg.epochs; ++m) {
    const double alpha = model::anneal(cfg.alpha, m, cfg.anneal);
    const double transform_lr = model::anneal(cfg.transform.learning_rate, m, cfg.anneal);

    // transforms first, against the model from the previous epoch
    for (std::size_t i = 0; i < datasets.size(); ++i) {
      const RoundShard stream = data::shard_epoch(datasets[i], 1, m, cfg.seed).front();
      const std::size_t n = stream.size();
      const std::size_t tb =
          std::min<std::size_t>(static_cast<std::size_t>(cfg.transform.batch_size), n);
      const std::size_t partitions = (n + tb - 1) / tb;
      const std::size_t steps = cfg.transform.steps_per_round == TransformOptConfig::kAutoSteps
                                    ? partitions
                                    : static_cast<std::size_t>(cfg.transform.steps_per_round);
      OptimizerState topt = OptimizerState::for_params(
          transform::transform_params(result.transforms[i]), cfg.transform.momentum);
      for (std::size_t s = 0; s < steps; ++s) {
        const std::size_t part = s % partitions;
        const std::size_t begin = part * tb;
        const std::size_t end = std::min(n, begin + tb);
        LabeledBatch batch;
        batch.features = Matrix(end - begin, d);
        batch.labels.assign(stream.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                            stream.labels.begin() + static_cast<std::ptrdiff_t>(end));
        for (std::size_t r = begin; r < end; ++r) {
          const auto from = stream.features.row(r);
          auto to = batch.features.row(r - begin);
          std::copy(from.begin(), from.end(), to.begin());
        }
        const double scale = static_cast<double>(end - begin) / static_cast<double>(tb);
        transform::estimate_step(result.transforms[i], result.params, batch, cfg.model,
                                 cfg.transform, topt, transform_lr, scale);
      }
    }

    // pool the canonicalized data and train one epoch on it
    std::vector<ClientDataset> canonicalized = datasets;
    for (std::size_t i = 0; i < datasets.size(); ++i) {
      if (!result.transforms[i].is_identity())
        canonicalized[i].features = transform::apply(result.transforms[i], datasets[i].features);
    }
    const ClientDataset pooled = pool_datasets(canonicalized);
    OptimizerState opt = OptimizerState::for_params(result.params, cfg.momentum);
    result.epoch_train_loss.push_back(pooled_epoch(result.params, opt, pooled, m, cfg, alpha));
  }
  return result;
}

}  // namespace fedsilo::baselines
