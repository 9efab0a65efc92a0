#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedsilo/data.hpp"
#include "fedsilo/model.hpp"
#include "fedsilo/transform.hpp"

namespace fedsilo::federation {

using data::ClientDataset;
using data::EvalSplit;
using data::RoundShard;
using model::AnnealSchedule;
using model::ModelSpec;
using model::OptimizerState;
using model::ParamVector;
using transform::AffineTransform;
using transform::TransformOptConfig;

enum class Mode {
  kFedavg,
  kCaft,
  kCaftPt,
};

const char* mode_name(Mode mode);
Mode mode_from_name(const std::string& name);

struct WeightStrategy {
  enum class Kind { kEqual, kProportionalToData, kPreference };

  Kind kind = Kind::kEqual;
  int favored_client = -1;     // Preference only
  double favored_weight = 0.0; // Preference only, in (0, 1)

  static WeightStrategy equal() { return {}; }
  static WeightStrategy proportional() { return {Kind::kProportionalToData, -1, 0.0}; }
  static WeightStrategy preference(int client, double weight) {
    return {Kind::kPreference, client, weight};
  }
  std::string name() const;
};

/// Positive weights summing to one, derived from the strategy and the
/// per-client sample counts.
std::vector<double> derive_weights(const WeightStrategy& strategy,
                                   const std::vector<std::size_t>& client_sizes);
std::vector<double> derive_weights(const WeightStrategy& strategy,
                                   const std::vector<ClientDataset>& datasets);

struct TrainingConfig {
  int clients = 1;          // L
  int epochs = 1;           // M
  int rounds = 1;           // T, communication rounds per epoch
  int batch_size = 32;      // B, local mini-batch size
  double alpha = 0.1;       // local learning rate
  double eta = 1.0;         // global learning rate
  double momentum = 0.9;
  WeightStrategy weighting;
  Mode mode = Mode::kFedavg;
  AnnealSchedule anneal;
  std::uint64_t seed = 0;
  std::optional<std::string> init_checkpoint;
  ModelSpec model;
  TransformOptConfig transform;
  std::chrono::milliseconds round_timeout{60000};

  void validate() const;
};

struct ClientState {
  int client_id = 0;
  ClientDataset dataset;
  double weight = 0.0;
  OptimizerState optimizer;
  std::optional<AffineTransform> transform;
  OptimizerState transform_opt;
  ParamVector local_params;
  std::vector<RoundShard> shards;   // current epoch's partition
  double last_round_loss = 0.0;     // mean mini-batch loss of the last local round
};

struct RoundReport {
  int epoch = 0;
  int round = 0;
  std::vector<double> client_loss;  // by client id
  std::vector<double> eval_loss;    // by eval split
  std::uint64_t bytes_up = 0;       // this round
  std::uint64_t bytes_down = 0;
  double wall_time_ms = 0.0;        // diagnostic only; not part of persisted metrics
};

/// K = ceil(|shard| / B) momentum-SGD steps from w_t over the shard's batches
/// in order, with a short final batch. Returns the local model; w_t is left
/// untouched. The client's velocity carries across rounds within an epoch.
ParamVector client_round(ClientState& state, const ParamVector& w_t, const RoundShard& shard,
                         double alpha, const TrainingConfig& cfg);

/// Algorithm 2 client: first estimate the transform against the frozen w_t,
/// then run the local weight updates on transformed features.
ParamVector caft_client_round(ClientState& state, const ParamVector& w_t, const RoundShard& shard,
                              double alpha, double transform_lr, const TrainingConfig& cfg);

/// FedAvg global update w_{t+1} = w_t - eta * sum_i p_i (w_t - w_i), summed in
/// ascending client order. At eta = 1 this is computed as the weighted model
/// average sum_i p_i w_i, to which it is algebraically equal.
ParamVector fedavg_update(const ParamVector& w_t, const std::vector<ParamVector>& locals,
                          const std::vector<double>& p, double eta);

/// Sorts (client id, params) updates by id before aggregating, so arrival
/// order never changes the result.
ParamVector aggregate_updates(const ParamVector& w_t,
                              std::vector<std::pair<int, ParamVector>> updates,
                              const std::vector<double>& weights_by_id, double eta);

/// Mean cross-entropy of the model on one eval split. When `transforms` is
/// non-null and the split belongs to a client, features pass through that
/// client's transform first (train-time transform reused at test time).
double eval_loss(const ParamVector& w, const ModelSpec& spec, const EvalSplit& split,
                 const std::vector<AffineTransform>* transforms);

std::vector<double> eval_all(const ParamVector& w, const ModelSpec& spec,
                             const std::vector<EvalSplit>& splits,
                             const std::vector<AffineTransform>* transforms);

struct RunResult {
  ParamVector params;
  std::vector<AffineTransform> transforms;  // one per client in caft modes, empty otherwise
  std::vector<RoundReport> reports;         // an initial (epoch 0) record, then M*T rounds
};

/// The synchronous server loop: M epochs of T communication rounds, clients
/// running concurrently behind the channel barrier. Deterministic given the
/// seed; any client failure aborts the run.
RunResult run_training(const TrainingConfig& cfg, const std::vector<ClientDataset>& datasets,
                       const std::vector<EvalSplit>& eval_sets);

}  // namespace fedsilo::federation
