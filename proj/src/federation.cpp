#include "fedsilo/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>

#include "fedsilo/transport.hpp"

namespace fedsilo::federation {

using fedsilo::Error;
using fedsilo::ErrorCode;
using fedsilo::require;
using model::LabeledBatch;
using numkit::Matrix;
using numkit::Rng;

const char* mode_name(Mode mode) {
  switch (mode) {
    case Mode::kFedavg: return "fedavg";
    case Mode::kCaft: return "caft";
    case Mode::kCaftPt: return "caft_pt";
  }
  return "unknown";
}

Mode mode_from_name(const std::string& name) {
  if (name == "fedavg") return Mode::kFedavg;
  if (name == "caft") return Mode::kCaft;
  if (name == "caft_pt") return Mode::kCaftPt;
  throw Error(ErrorCode::kInvalidArgument, "unknown mode '" + name + "'");
}

std::string WeightStrategy::name() const {
  switch (kind) {
    case Kind::kEqual: return "equal";
    case Kind::kProportionalToData: return "proportional";
    case Kind::kPreference:
      return "pref:" + std::to_string(favored_client) + ":" + std::to_string(favored_weight);
  }
  return "unknown";
}

std::vector<double> derive_weights(const WeightStrategy& strategy,
                                   const std::vector<std::size_t>& client_sizes) {
  const std::size_t count = client_sizes.size();
  require(count >= 1, ErrorCode::kInvalidArgument, "derive_weights: no clients");
  std::vector<double> weights(count, 0.0);
  switch (strategy.kind) {
    case WeightStrategy::Kind::kEqual: {
      const double w = 1.0 / static_cast<double>(count);
      std::fill(weights.begin(), weights.end(), w);
      break;
    }
    case WeightStrategy::Kind::kProportionalToData: {
      std::size_t total = 0;
      for (std::size_t n : client_sizes) {
        require(n > 0, ErrorCode::kInvalidArgument,
                "proportional weighting needs non-empty clients");
        total += n;
      }
      for (std::size_t i = 0; i < count; ++i)
        weights[i] = static_cast<double>(client_sizes[i]) / static_cast<double>(total);
      break;
    }
    case WeightStrategy::Kind::kPreference: {
      require(count >= 2, ErrorCode::kInvalidArgument, "preference weighting needs >= 2 clients");
      require(strategy.favored_client >= 0 &&
                  strategy.favored_client < static_cast<int>(count),
              ErrorCode::kInvalidArgument, "favored client out of range");
      require(strategy.favored_weight > 0.0 && strategy.favored_weight < 1.0,
              ErrorCode::kInvalidArgument, "favored weight must lie in (0, 1)");
      const double rest = (1.0 - strategy.favored_weight) / static_cast<double>(count - 1);
      std::fill(weights.begin(), weights.end(), rest);
      weights[static_cast<std::size_t>(strategy.favored_client)] = strategy.favored_weight;
      break;
    }
  }
  return weights;
}

std::vector<double> derive_weights(const WeightStrategy& strategy,
                                   const std::vector<ClientDataset>& datasets) {
  std::vector<std::size_t> sizes;
  sizes.reserve(datasets.size());
  for (const auto& ds : datasets) sizes.push_back(ds.size());
  return derive_weights(strategy, sizes);
}

void TrainingConfig::validate() const {
  require(clients >= 1, ErrorCode::kInvalidArgument, "need at least one client");
  require(epochs >= 1, ErrorCode::kInvalidArgument, "epochs must be >= 1");
  require(rounds >= 1, ErrorCode::kInvalidArgument, "rounds must be >= 1");
  require(batch_size >= 1, ErrorCode::kInvalidArgument, "batch size must be >= 1");
  require(alpha >= 0.0, ErrorCode::kInvalidArgument, "local learning rate must be >= 0");
  require(eta > 0.0, ErrorCode::kInvalidArgument, "global learning rate must be positive");
  require(momentum >= 0.0 && momentum < 1.0, ErrorCode::kInvalidArgument,
          "momentum must lie in [0, 1)");
  model.validate();
  transform.validate();
  if (mode == Mode::kCaftPt) {
    require(init_checkpoint.has_value(), ErrorCode::kInvalidArgument,
            "caft_pt requires an init checkpoint");
  }
}

namespace {

LabeledBatch slice_batch(const RoundShard& shard, std::size_t begin, std::size_t end) {
  const std::size_t d = shard.features.cols();
  LabeledBatch batch;
  batch.features = Matrix(end - begin, d);
  batch.labels.assign(shard.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                      shard.labels.begin() + static_cast<std::ptrdiff_t>(end));
  for (std::size_t i = begin; i < end; ++i) {
    const auto from = shard.features.row(i);
    auto to = batch.features.row(i - begin);
    std::copy(from.begin(), from.end(), to.begin());
  }
  return batch;
}

// Local K-step loop shared by both client kinds. Each round is a fresh
// Client(i, t) invocation: the local optimizer starts with zero velocity.
// `feature_map` transforms each batch's features when a non-identity
// transform is active.
ParamVector local_steps(ClientState& state, const ParamVector& w_t, const RoundShard& shard,
                        double alpha, const TrainingConfig& cfg,
                        const AffineTransform* feature_map) {
  const std::size_t n = shard.size();
  require(n >= 1, ErrorCode::kInvalidArgument, "client_round: empty shard");
  const std::size_t b = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps = (n + b - 1) / b;

  state.optimizer = model::OptimizerState::for_params(w_t, cfg.momentum);
  state.local_params = w_t;
  double loss_sum = 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    LabeledBatch batch = slice_batch(shard, k * b, std::min(n, (k + 1) * b));
    if (feature_map != nullptr) batch.features = transform::apply(*feature_map, batch.features);
    auto lg = model::loss_and_grad(state.local_params, batch, cfg.model);
    // sum-of-gradients step semantics: a short final batch contributes in
    // proportion to its size
    if (batch.size() < b) {
      const double scale = static_cast<double>(batch.size()) / static_cast<double>(b);
      for (double& v : lg.grad.data()) v *= scale;
    }
    model::sgd_step(state.local_params, lg.grad, state.optimizer, alpha);
    loss_sum += lg.loss;
  }
  state.last_round_loss = loss_sum / static_cast<double>(steps);
  return state.local_params;
}

}  // namespace

ParamVector client_round(ClientState& state, const ParamVector& w_t, const RoundShard& shard,
                         double alpha, const TrainingConfig& cfg) {
  return local_steps(state, w_t, shard, alpha, cfg, nullptr);
}

ParamVector caft_client_round(ClientState& state, const ParamVector& w_t, const RoundShard& shard,
                              double alpha, double transform_lr, const TrainingConfig& cfg) {
  require(state.transform.has_value(), ErrorCode::kInvalidArgument,
          "caft client has no transform");
  const std::size_t n = shard.size();
  require(n >= 1, ErrorCode::kInvalidArgument, "caft_client_round: empty shard");

  // transform estimation against the frozen global model, before any weight
  // update (ordering is part of the round contract); the transform itself
  // warm-starts from the previous round, its optimizer does not
  state.transform_opt = model::OptimizerState::for_params(
      transform::transform_params(*state.transform), cfg.transform.momentum);
  const std::size_t tb =
      std::min<std::size_t>(static_cast<std::size_t>(cfg.transform.batch_size), n);
  const std::size_t partitions = (n + tb - 1) / tb;
  const std::size_t steps = cfg.transform.steps_per_round == TransformOptConfig::kAutoSteps
                                ? partitions
                                : static_cast<std::size_t>(cfg.transform.steps_per_round);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t part = s % partitions;
    const std::size_t begin = part * tb;
    const std::size_t end = std::min(n, begin + tb);
    const LabeledBatch batch = slice_batch(shard, begin, end);
    const double scale = static_cast<double>(end - begin) / static_cast<double>(tb);
    transform::estimate_step(*state.transform, w_t, batch, cfg.model, cfg.transform,
                             state.transform_opt, transform_lr, scale);
  }

  // identity transform is a no-op on features; skip the matmul
  const AffineTransform* map =
      state.transform->is_identity() ? nullptr : &state.transform.value();
  return local_steps(state, w_t, shard, alpha, cfg, map);
}

ParamVector fedavg_update(const ParamVector& w_t, const std::vector<ParamVector>& locals,
                          const std::vector<double>& p, double eta) {
  require(!locals.empty() && locals.size() == p.size(), ErrorCode::kInvalidArgument,
          "fedavg_update: locals/weights size mismatch");
  require(eta > 0.0, ErrorCode::kInvalidArgument, "fedavg_update: eta must be positive");
  for (const auto& local : locals)
    require(local.same_manifest(w_t), ErrorCode::kInvalidArgument,
            "fedavg_update: manifest mismatch");
  double weight_sum = 0.0;
  for (double w : p) {
    require(w > 0.0, ErrorCode::kInvalidArgument, "fedavg_update: weights must be positive");
    weight_sum += w;
  }
  require(std::abs(weight_sum - 1.0) <= 1e-12, ErrorCode::kInvalidArgument,
          "fedavg_update: weights must sum to 1");

  ParamVector next = ParamVector::zeros_like(w_t);
  auto out = next.data();
  const auto base = w_t.data();
  if (eta == 1.0) {
    // simple model averaging, the eta = 1 form of the update
    for (std::size_t i = 0; i < locals.size(); ++i) {
      const auto li = locals[i].data();
      const double pi = p[i];
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += pi * li[j];
    }
  } else {
    for (std::size_t j = 0; j < out.size(); ++j) {
      double delta = 0.0;
      for (std::size_t i = 0; i < locals.size(); ++i)
        delta += p[i] * (base[j] - locals[i].data()[j]);
      out[j] = base[j] - eta * delta;
    }
  }
  numkit::ensure_finite(out, "fedavg_update");
  return next;
}

ParamVector aggregate_updates(const ParamVector& w_t,
                              std::vector<std::pair<int, ParamVector>> updates,
                              const std::vector<double>& weights_by_id, double eta) {
  std::sort(updates.begin(), updates.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<ParamVector> locals;
  std::vector<double> p;
  locals.reserve(updates.size());
  p.reserve(updates.size());
  for (auto& [id, params] : updates) {
    require(id >= 0 && id < static_cast<int>(weights_by_id.size()), ErrorCode::kInvalidArgument,
            "aggregate_updates: unknown client id");
    locals.push_back(std::move(params));
    p.push_back(weights_by_id[static_cast<std::size_t>(id)]);
  }
  return fedavg_update(w_t, locals, p, eta);
}

double eval_loss(const ParamVector& w, const ModelSpec& spec, const EvalSplit& split,
                 const std::vector<AffineTransform>* transforms) {
  LabeledBatch batch{split.features, split.labels};
  if (transforms != nullptr && split.client_id.has_value() &&
      *split.client_id >= 0 && static_cast<std::size_t>(*split.client_id) < transforms->size()) {
    const AffineTransform& f = (*transforms)[static_cast<std::size_t>(*split.client_id)];
    if (!f.is_identity()) batch.features = transform::apply(f, batch.features);
  }
  return model::loss_value(w, batch, spec);
}

std::vector<double> eval_all(const ParamVector& w, const ModelSpec& spec,
                             const std::vector<EvalSplit>& splits,
                             const std::vector<AffineTransform>* transforms) {
  std::vector<double> losses;
  losses.reserve(splits.size());
  for (const auto& split : splits) losses.push_back(eval_loss(w, spec, split, transforms));
  return losses;
}

namespace {

struct WorkerPool {
  std::vector<std::thread> threads;
  ~WorkerPool() { join(); }
  void join() {
    for (auto& t : threads)
      if (t.joinable()) t.join();
    threads.clear();
  }
};

}  // namespace

RunResult run_training(const TrainingConfig& cfg, const std::vector<ClientDataset>& datasets,
                       const std::vector<EvalSplit>& eval_sets) {
  cfg.validate();
  require(static_cast<int>(datasets.size()) == cfg.clients, ErrorCode::kInvalidArgument,
          "config clients != dataset count");
  const std::size_t num_clients = datasets.size();
  const std::size_t d = cfg.model.input_dim();
  for (const auto& ds : datasets) {
    ds.validate();
    require(ds.dim() == d, ErrorCode::kInvalidArgument, "dataset dim does not match model");
    require(ds.num_classes == static_cast<int>(cfg.model.num_classes()),
            ErrorCode::kInvalidArgument, "dataset classes do not match model");
    require(ds.size() >= static_cast<std::size_t>(cfg.rounds), ErrorCode::kInvalidArgument,
            "client " + std::to_string(ds.client_id) + " has fewer samples than rounds");
  }
  for (const auto& split : eval_sets)
    require(split.features.cols() == d, ErrorCode::kInvalidArgument,
            "eval split dim does not match model");

  const std::vector<double> weights = derive_weights(cfg.weighting, datasets);
  const bool adaptive = cfg.mode != Mode::kFedavg;

  Rng rng(cfg.seed);
  ParamVector global;
  std::vector<AffineTransform> transforms;
  if (cfg.init_checkpoint.has_value()) {
    const auto msg = transport::load_checkpoint(*cfg.init_checkpoint);
    auto [params, loaded_transforms] = transport::split_transform_blocks(msg.params);
    require(params.same_manifest(ParamVector{model_manifest(cfg.model)}),
            ErrorCode::kInvalidArgument, "init checkpoint does not match the model spec");
    global = std::move(params);
    transforms = std::move(loaded_transforms);
  } else {
    global = model::init_params(cfg.model, rng.fork("init"));
  }
  if (adaptive) {
    if (transforms.size() != num_clients) {
      transforms.assign(num_clients, AffineTransform::identity(d));
    }
  } else {
    transforms.clear();
  }

  std::vector<ClientState> clients(num_clients);
  for (std::size_t i = 0; i < num_clients; ++i) {
    ClientState& st = clients[i];
    st.client_id = datasets[i].client_id;
    st.dataset = datasets[i];
    st.weight = weights[i];
    st.optimizer = OptimizerState::for_params(global, cfg.momentum);
    if (adaptive) {
      st.transform = transforms[i];
      st.transform_opt =
          OptimizerState::for_params(transform::transform_params(*st.transform),
                                     cfg.transform.momentum);
    }
  }

  transport::SyncRoundChannel channel(static_cast<int>(num_clients), cfg.round_timeout);

  RunResult result;
  const std::vector<AffineTransform>* eval_transforms = adaptive ? &transforms : nullptr;
  RoundReport initial;
  initial.epoch = 0;
  initial.round = 0;
  initial.eval_loss = eval_all(global, cfg.model, eval_sets, eval_transforms);
  result.reports.push_back(std::move(initial));

  std::uint64_t prev_up = 0;
  std::uint64_t prev_down = 0;
  for (int m = 1; m <= cfg.epochs; ++m) {
    const double alpha_m = model::anneal(cfg.alpha, m, cfg.anneal);
    const double transform_lr_m = model::anneal(cfg.transform.learning_rate, m, cfg.anneal);
    for (auto& st : clients) st.shards = data::shard_epoch(st.dataset, cfg.rounds, m, cfg.seed);
    for (int t = 1; t <= cfg.rounds; ++t) {
      const auto round_start = std::chrono::steady_clock::now();
      transport::RoundMessage global_msg;
      global_msg.kind = transport::MessageKind::kGlobalModel;
      global_msg.epoch = static_cast<std::uint32_t>(m);
      global_msg.round = static_cast<std::uint32_t>(t);
      global_msg.params = global;
      channel.broadcast(global_msg);

      WorkerPool pool;
      for (std::size_t i = 0; i < num_clients; ++i) {
        pool.threads.emplace_back([&, i, t, m, alpha_m, transform_lr_m] {
          try {
            const transport::RoundMessage received =
                channel.await_global(static_cast<int>(i));
            const RoundShard& shard = clients[i].shards[static_cast<std::size_t>(t - 1)];
            ParamVector local =
                adaptive ? caft_client_round(clients[i], received.params, shard, alpha_m,
                                             transform_lr_m, cfg)
                         : client_round(clients[i], received.params, shard, alpha_m, cfg);
            transport::RoundMessage update;
            update.kind = transport::MessageKind::kLocalUpdate;
            update.epoch = static_cast<std::uint32_t>(m);
            update.round = static_cast<std::uint32_t>(t);
            update.client_id = static_cast<std::uint32_t>(i);
            update.params = std::move(local);
            channel.submit(update);
          } catch (const std::exception& e) {
            channel.submit_failure(static_cast<int>(i), e.what());
          }
        });
      }
      std::vector<transport::RoundMessage> updates = channel.collect();  // barrier
      pool.join();

      std::vector<ParamVector> locals;
      locals.reserve(num_clients);
      for (auto& msg : updates) locals.push_back(std::move(msg.params));
      global = fedavg_update(global, locals, weights, cfg.eta);
      if (adaptive)
        for (std::size_t i = 0; i < num_clients; ++i) transforms[i] = *clients[i].transform;

      RoundReport report;
      report.epoch = m;
      report.round = t;
      report.client_loss.reserve(num_clients);
      for (const auto& st : clients) report.client_loss.push_back(st.last_round_loss);
      report.eval_loss = eval_all(global, cfg.model, eval_sets, eval_transforms);
      report.bytes_down = channel.bytes_down() - prev_down;
      report.bytes_up = channel.bytes_up() - prev_up;
      prev_down = channel.bytes_down();
      prev_up = channel.bytes_up();
      report.wall_time_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - round_start)
              .count();
      result.reports.push_back(std::move(report));
    }
  }

  result.params = std::move(global);
  result.transforms = std::move(transforms);
  return result;
}

}  // namespace fedsilo::federation
