#pragma once

#include <vector>

#include "fedsilo/federation.hpp"

namespace fedsilo::baselines {

using data::ClientDataset;
using federation::TrainingConfig;
using model::ParamVector;
using transform::AffineTransform;

struct CentralizedResult {
  ParamVector params;
  std::vector<double> epoch_train_loss;
};

/// Pooled-data oracle: single-stream momentum SGD over the shuffled union of
/// all client data, same epoch count and anneal schedule as federated runs.
/// With one client this is exactly that client's sequential SGD.
CentralizedResult centralized_train(const std::vector<ClientDataset>& datasets,
                                    const TrainingConfig& cfg);

struct CatResult {
  ParamVector params;
  std::vector<AffineTransform> transforms;
  std::vector<double> epoch_train_loss;
};

/// Client-adaptive oracle: each epoch, re-estimate every client's transform
/// against the current model, then train one epoch on the pooled canonicalized
/// data. With zero transform steps this reduces to centralized_train.
CatResult cat_train(const std::vector<ClientDataset>& datasets, const TrainingConfig& cfg);

}  // namespace fedsilo::baselines
