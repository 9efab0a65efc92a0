#include "fedsilo/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "fedsilo/transport.hpp"

namespace fedsilo::harness {

namespace fs = std::filesystem;
using fedsilo::Error;
using fedsilo::ErrorCode;
using fedsilo::require;
using nlohmann::json;
using numkit::Matrix;
using numkit::Rng;
using numkit::Vector;

const char* run_mode_name(RunMode mode) {
  switch (mode) {
    case RunMode::kFedavg: return "fedavg";
    case RunMode::kCaft: return "caft";
    case RunMode::kCaftPt: return "caft_pt";
    case RunMode::kCentralized: return "centralized";
    case RunMode::kCat: return "cat";
  }
  return "unknown";
}

RunMode run_mode_from_name(const std::string& name) {
  if (name == "fedavg") return RunMode::kFedavg;
  if (name == "caft") return RunMode::kCaft;
  if (name == "caft_pt") return RunMode::kCaftPt;
  if (name == "centralized") return RunMode::kCentralized;
  if (name == "cat") return RunMode::kCat;
  throw Error(ErrorCode::kInvalidArgument, "unknown mode '" + name + "'");
}

namespace {

std::string fmt_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

WeightStrategy weighting_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "equal") return WeightStrategy::equal();
  if (kind == "proportional") return WeightStrategy::proportional();
  if (kind == "preference") {
    return WeightStrategy::preference(j.at("client").get<int>(), j.at("weight").get<double>());
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown weighting kind '" + kind + "'");
}

json weighting_to_json(const WeightStrategy& w) {
  json j;
  switch (w.kind) {
    case WeightStrategy::Kind::kEqual: j["kind"] = "equal"; break;
    case WeightStrategy::Kind::kProportionalToData: j["kind"] = "proportional"; break;
    case WeightStrategy::Kind::kPreference:
      j["kind"] = "preference";
      j["client"] = w.favored_client;
      j["weight"] = w.favored_weight;
      break;
  }
  return j;
}

}  // namespace

ExperimentConfig parse_experiment(const json& j) {
  ExperimentConfig cfg;
  try {
    cfg.mode = run_mode_from_name(j.value("mode", "fedavg"));
    cfg.train.seed = j.value("seed", std::uint64_t{1});
    cfg.out_dir = j.value("out", "");

    if (j.contains("model")) {
      cfg.hidden = j.at("model").value("hidden", std::vector<std::size_t>{32});
    }
    require(!cfg.hidden.empty(), ErrorCode::kInvalidArgument,
            "model needs at least one hidden layer");

    // caft_pt follows its own schedule unless the config overrides it
    const bool pretrained = cfg.mode == RunMode::kCaftPt;
    int default_epochs = pretrained ? 10 : 6;
    int default_anneal = 3;

    const json train = j.value("train", json::object());
    cfg.train.epochs = train.value("epochs", default_epochs);
    cfg.train.rounds = train.value("rounds", 20);
    cfg.train.batch_size = train.value("batch_size", 64);
    cfg.train.alpha = train.value("alpha", 0.15);
    cfg.train.eta = train.value("eta", 1.0);
    cfg.train.momentum = train.value("momentum", 0.9);
    if (train.contains("anneal_start") && !train.at("anneal_start").is_null()) {
      cfg.train.anneal = model::AnnealSchedule::after(train.at("anneal_start").get<int>());
    } else {
      cfg.train.anneal = model::AnnealSchedule::after(default_anneal);
    }
    if (train.contains("weighting")) cfg.train.weighting = weighting_from_json(train.at("weighting"));
    cfg.train.round_timeout =
        std::chrono::milliseconds(train.value("round_timeout_ms", std::int64_t{60000}));

    const json tj = j.value("transform", json::object());
    cfg.train.transform.learning_rate = tj.value("learning_rate", 0.02);
    cfg.train.transform.momentum = tj.value("momentum", 0.9);
    cfg.train.transform.batch_size = tj.value("batch_size", 1024);
    if (tj.contains("steps_per_round") && !tj.at("steps_per_round").is_null()) {
      cfg.train.transform.steps_per_round = tj.at("steps_per_round").get<int>();
    }

    if (j.contains("init_checkpoint") && !j.at("init_checkpoint").is_null()) {
      cfg.train.init_checkpoint = j.at("init_checkpoint").get<std::string>();
    }

    const json data = j.value("data", json{{"synthetic", json::object()}});
    if (data.contains("synthetic")) {
      const json s = data.at("synthetic");
      SyntheticSpec spec;
      spec.clients = s.value("clients", spec.clients);
      spec.dim = s.value("dim", spec.dim);
      spec.classes = s.value("classes", spec.classes);
      spec.sizes = s.value("sizes", spec.sizes);
      spec.mean_scale = s.value("mean_scale", spec.mean_scale);
      spec.sigma = s.value("sigma", spec.sigma);
      spec.skew_min = s.value("skew_min", spec.skew_min);
      spec.skew_max = s.value("skew_max", spec.skew_max);
      spec.shift_scale = s.value("shift_scale", spec.shift_scale);
      spec.label_noise = s.value("label_noise", spec.label_noise);
      spec.eval_size = s.value("eval_size", spec.eval_size);
      if (s.contains("eval_splits")) {
        spec.eval_splits.clear();
        for (const auto& e : s.at("eval_splits")) {
          SyntheticSpec::EvalDef def;
          def.name = e.at("name").get<std::string>();
          def.client = e.at("client").get<int>();
          def.variant = e.value("variant", 0.0);
          spec.eval_splits.push_back(std::move(def));
        }
      }
      require(spec.sizes.size() == static_cast<std::size_t>(spec.clients),
              ErrorCode::kInvalidArgument, "synthetic sizes must list one count per client");
      cfg.train.clients = spec.clients;
      cfg.data = std::move(spec);
    } else if (data.contains("csv")) {
      const json c = data.at("csv");
      CsvSpec spec;
      spec.classes = c.at("classes").get<int>();
      spec.client_paths = c.at("clients").get<std::vector<std::string>>();
      if (c.contains("eval")) {
        for (const auto& e : c.at("eval")) {
          CsvSpec::EvalDef def;
          def.name = e.at("name").get<std::string>();
          def.path = e.at("path").get<std::string>();
          if (e.contains("client") && !e.at("client").is_null())
            def.client = e.at("client").get<int>();
          spec.eval_splits.push_back(std::move(def));
        }
      }
      require(!spec.client_paths.empty(), ErrorCode::kInvalidArgument,
              "csv data needs at least one client file");
      cfg.train.clients = static_cast<int>(spec.client_paths.size());
      cfg.data = std::move(spec);
    } else {
      throw Error(ErrorCode::kInvalidArgument, "data must define 'synthetic' or 'csv'");
    }

    if (j.contains("sweep")) {
      const json s = j.at("sweep");
      cfg.sweep.etas = s.value("eta", std::vector<double>{});
      cfg.sweep.rounds = s.value("rounds", std::vector<int>{});
      if (s.contains("weighting"))
        for (const auto& w : s.at("weighting")) cfg.sweep.weightings.push_back(weighting_from_json(w));
      cfg.sweep.seeds = s.value("seeds", std::vector<std::uint64_t>{});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("config: ") + e.what());
  }

  if (cfg.mode == RunMode::kFedavg || cfg.mode == RunMode::kCaft || cfg.mode == RunMode::kCaftPt) {
    cfg.train.mode = cfg.mode == RunMode::kFedavg  ? federation::Mode::kFedavg
                     : cfg.mode == RunMode::kCaft ? federation::Mode::kCaft
                                                  : federation::Mode::kCaftPt;
  }
  return cfg;
}

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kIo, "cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, path + ": " + e.what());
  }
  return parse_experiment(j);
}

json experiment_to_json(const ExperimentConfig& cfg) {
  json j;
  j["mode"] = run_mode_name(cfg.mode);
  j["seed"] = cfg.train.seed;
  if (!cfg.out_dir.empty()) j["out"] = cfg.out_dir;
  j["model"]["hidden"] = cfg.hidden;
  json train;
  train["epochs"] = cfg.train.epochs;
  train["rounds"] = cfg.train.rounds;
  train["batch_size"] = cfg.train.batch_size;
  train["alpha"] = cfg.train.alpha;
  train["eta"] = cfg.train.eta;
  train["momentum"] = cfg.train.momentum;
  if (cfg.train.anneal.start_epoch == model::AnnealSchedule::kNever) {
    train["anneal_start"] = nullptr;
  } else {
    train["anneal_start"] = cfg.train.anneal.start_epoch;
  }
  train["weighting"] = weighting_to_json(cfg.train.weighting);
  train["round_timeout_ms"] = cfg.train.round_timeout.count();
  j["train"] = std::move(train);
  json tj;
  tj["learning_rate"] = cfg.train.transform.learning_rate;
  tj["momentum"] = cfg.train.transform.momentum;
  tj["batch_size"] = cfg.train.transform.batch_size;
  if (cfg.train.transform.steps_per_round == transform::TransformOptConfig::kAutoSteps) {
    tj["steps_per_round"] = nullptr;
  } else {
    tj["steps_per_round"] = cfg.train.transform.steps_per_round;
  }
  j["transform"] = std::move(tj);
  if (cfg.train.init_checkpoint.has_value()) j["init_checkpoint"] = *cfg.train.init_checkpoint;

  if (const SyntheticSpec* s = cfg.synthetic()) {
    json d;
    d["clients"] = s->clients;
    d["dim"] = s->dim;
    d["classes"] = s->classes;
    d["sizes"] = s->sizes;
    d["mean_scale"] = s->mean_scale;
    d["sigma"] = s->sigma;
    d["skew_min"] = s->skew_min;
    d["skew_max"] = s->skew_max;
    d["shift_scale"] = s->shift_scale;
    d["label_noise"] = s->label_noise;
    d["eval_size"] = s->eval_size;
    json splits = json::array();
    for (const auto& e : s->eval_splits) {
      json split;
      split["name"] = e.name;
      split["client"] = e.client;
      if (e.variant > 0.0) split["variant"] = e.variant;
      splits.push_back(std::move(split));
    }
    d["eval_splits"] = std::move(splits);
    j["data"]["synthetic"] = std::move(d);
  } else if (const CsvSpec* c = cfg.csv()) {
    json d;
    d["classes"] = c->classes;
    d["clients"] = c->client_paths;
    json evals = json::array();
    for (const auto& e : c->eval_splits) {
      json split;
      split["name"] = e.name;
      split["path"] = e.path;
      if (e.client.has_value()) split["client"] = *e.client;
      evals.push_back(std::move(split));
    }
    d["eval"] = std::move(evals);
    j["data"]["csv"] = std::move(d);
  }

  if (!cfg.sweep.empty()) {
    json s;
    if (!cfg.sweep.etas.empty()) s["eta"] = cfg.sweep.etas;
    if (!cfg.sweep.rounds.empty()) s["rounds"] = cfg.sweep.rounds;
    if (!cfg.sweep.weightings.empty()) {
      json ws = json::array();
      for (const auto& w : cfg.sweep.weightings) ws.push_back(weighting_to_json(w));
      s["weighting"] = std::move(ws);
    }
    if (!cfg.sweep.seeds.empty()) s["seeds"] = cfg.sweep.seeds;
    j["sweep"] = std::move(s);
  }
  return j;
}

ExperimentConfig default_experiment() {
  // desk-scale shards fit inside one transform batch, so a literal single
  // pass is one gradient step; eight steps per round lets the transform
  // optimizer actually converge within a run
  return parse_experiment(json{{"mode", "fedavg"},
                               {"transform", {{"steps_per_round", 8}}}});
}

namespace {

data::SkewSpec perturb_skew(const data::SkewSpec& skew, double delta, Rng rng) {
  const std::size_t d = skew.c.size();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (int attempt = 0; attempt < 64; ++attempt) {
    data::SkewSpec out = skew;
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) out.G.at(r, c) += delta * inv_sqrt_d * rng.normal();
    for (std::size_t i = 0; i < d; ++i) out.c[i] += delta * rng.normal();
    if (std::abs(numkit::determinant(out.G)) > 1e-6) return out;
  }
  throw Error(ErrorCode::kNumeric, "perturb_skew: could not keep the skew invertible");
}

Task build_synthetic_task(const SyntheticSpec& spec, std::uint64_t seed) {
  require(spec.clients >= 1, ErrorCode::kInvalidArgument, "need at least one client");
  require(spec.dim >= 2, ErrorCode::kInvalidArgument, "synthetic dim must be >= 2");
  require(spec.classes >= 2, ErrorCode::kInvalidArgument, "synthetic classes must be >= 2");
  Rng master(seed);
  const Matrix means =
      data::draw_class_means(master.fork("task/means"), spec.dim, spec.classes, spec.mean_scale);

  Task task;
  for (int i = 0; i < spec.clients; ++i) {
    const double frac =
        spec.clients == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(spec.clients - 1);
    const double eps = spec.skew_min + (spec.skew_max - spec.skew_min) * frac;
    data::SkewSpec skew =
        data::draw_skew(master.fork("task/skew", static_cast<std::uint64_t>(i)), spec.dim, eps,
                        spec.shift_scale, spec.label_noise);

    auto [features, labels] = data::sample_mixture(
        means, spec.sigma, spec.sizes[static_cast<std::size_t>(i)],
        master.fork("task/base", static_cast<std::uint64_t>(i)));
    data::ClientDataset base;
    base.client_id = i;
    base.features = std::move(features);
    base.labels = std::move(labels);
    base.domain_tag = "client" + std::to_string(i);
    base.num_classes = spec.classes;
    task.clients.push_back(data::apply_skew(base, skew, seed));
    task.skews.push_back(std::move(skew));
  }

  for (std::size_t k = 0; k < spec.eval_splits.size(); ++k) {
    const auto& def = spec.eval_splits[k];
    require(def.client >= 0 && def.client < spec.clients, ErrorCode::kInvalidArgument,
            "eval split '" + def.name + "' references an unknown client");
    auto [features, labels] =
        data::sample_mixture(means, spec.sigma, spec.eval_size, master.fork("task/eval", k));
    data::SkewSpec skew = task.skews[static_cast<std::size_t>(def.client)];
    skew.label_noise = 0.0;  // eval labels stay clean
    if (def.variant > 0.0)
      skew = perturb_skew(skew, def.variant, master.fork("task/eval-variant", k));
    data::EvalSplit split;
    split.name = def.name;
    split.features = data::apply_skew(features, skew);
    split.labels = std::move(labels);
    split.client_id = def.client;
    task.eval.push_back(std::move(split));
  }
  return task;
}

Task build_csv_task(const CsvSpec& spec) {
  Task task;
  for (std::size_t i = 0; i < spec.client_paths.size(); ++i) {
    data::ClientDataset ds = data::load_csv(spec.client_paths[i], spec.classes);
    ds.client_id = static_cast<int>(i);
    ds.domain_tag = fs::path(spec.client_paths[i]).stem().string();
    task.clients.push_back(std::move(ds));
  }
  for (const auto& def : spec.eval_splits) {
    data::ClientDataset ds = data::load_csv(def.path, spec.classes);
    data::EvalSplit split;
    split.name = def.name;
    split.features = std::move(ds.features);
    split.labels = std::move(ds.labels);
    split.client_id = def.client;
    task.eval.push_back(std::move(split));
  }
  return task;
}

}  // namespace

Task build_task(const ExperimentConfig& cfg) {
  if (const SyntheticSpec* s = cfg.synthetic()) return build_synthetic_task(*s, cfg.train.seed);
  return build_csv_task(*cfg.csv());
}

namespace {

model::ModelSpec resolve_model(const ExperimentConfig& cfg, const Task& task) {
  require(!task.clients.empty(), ErrorCode::kInvalidArgument, "task has no clients");
  model::ModelSpec spec;
  spec.layer_sizes.push_back(task.clients.front().dim());
  for (std::size_t h : cfg.hidden) spec.layer_sizes.push_back(h);
  spec.layer_sizes.push_back(static_cast<std::size_t>(task.clients.front().num_classes));
  spec.validate();
  return spec;
}

std::vector<double> per_client_train_loss(const model::ParamVector& params,
                                          const model::ModelSpec& spec, const Task& task,
                                          const std::vector<transform::AffineTransform>& transforms) {
  std::vector<double> losses;
  losses.reserve(task.clients.size());
  for (std::size_t i = 0; i < task.clients.size(); ++i) {
    model::LabeledBatch batch{task.clients[i].features, task.clients[i].labels};
    if (i < transforms.size() && !transforms[i].is_identity())
      batch.features = transform::apply(transforms[i], batch.features);
    losses.push_back(model::loss_value(params, batch, spec));
  }
  return losses;
}

}  // namespace

RunOutcome run_single(const ExperimentConfig& cfg, const Task& task) {
  ExperimentConfig resolved = cfg;
  resolved.train.model = resolve_model(cfg, task);
  resolved.train.clients = static_cast<int>(task.clients.size());
  resolved.train.validate();

  RunOutcome outcome;
  switch (cfg.mode) {
    case RunMode::kFedavg:
    case RunMode::kCaft:
    case RunMode::kCaftPt: {
      const auto result = federation::run_training(resolved.train, task.clients, task.eval);
      outcome.params = result.params;
      outcome.transforms = result.transforms;
      outcome.reports = result.reports;
      outcome.total_rounds = resolved.train.epochs * resolved.train.rounds;
      break;
    }
    case RunMode::kCentralized: {
      const auto result = baselines::centralized_train(task.clients, resolved.train);
      outcome.params = result.params;
      for (std::size_t m = 0; m < result.epoch_train_loss.size(); ++m) {
        RoundReport report;
        report.epoch = static_cast<int>(m) + 1;
        report.round = 0;
        report.client_loss = {result.epoch_train_loss[m]};
        outcome.reports.push_back(std::move(report));
      }
      break;
    }
    case RunMode::kCat: {
      const auto result = baselines::cat_train(task.clients, resolved.train);
      outcome.params = result.params;
      outcome.transforms = result.transforms;
      for (std::size_t m = 0; m < result.epoch_train_loss.size(); ++m) {
        RoundReport report;
        report.epoch = static_cast<int>(m) + 1;
        report.round = 0;
        report.client_loss = {result.epoch_train_loss[m]};
        outcome.reports.push_back(std::move(report));
      }
      break;
    }
  }

  const std::vector<transform::AffineTransform>* eval_transforms =
      outcome.transforms.empty() ? nullptr : &outcome.transforms;
  outcome.final_eval_loss =
      federation::eval_all(outcome.params, resolved.train.model, task.eval, eval_transforms);
  outcome.final_train_loss =
      per_client_train_loss(outcome.params, resolved.train.model, task, outcome.transforms);
  for (const auto& report : outcome.reports)
    outcome.total_bytes += report.bytes_up + report.bytes_down;
  return outcome;
}

void write_metrics_jsonl(const std::vector<RoundReport>& reports, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::kIo, "cannot write " + path);
  for (const auto& report : reports) {
    json line;
    line["epoch"] = report.epoch;
    line["round"] = report.round;
    line["client_loss"] = report.client_loss;
    line["eval_loss"] = report.eval_loss;
    line["bytes_up"] = report.bytes_up;
    line["bytes_down"] = report.bytes_down;
    out << line.dump() << "\n";
  }
  require(out.good(), ErrorCode::kIo, "write failed for " + path);
}

std::string summary_header(int num_clients, const std::vector<std::string>& split_names) {
  std::string header = "mode,eta,rounds,weighting,seed";
  for (int i = 0; i < num_clients; ++i) header += ",train_c" + std::to_string(i);
  for (const auto& name : split_names) header += ",eval_" + name;
  header += ",total_bytes,total_rounds";
  return header;
}

void emit_summary(const std::vector<SummaryRow>& rows, int num_clients,
                  const std::vector<std::string>& split_names, const std::string& path) {
  require(!rows.empty(), ErrorCode::kInvalidArgument, "emit_summary: no rows");
  std::ofstream out(path);
  require(out.good(), ErrorCode::kIo, "cannot write " + path);
  out << summary_header(num_clients, split_names) << "\n";
  for (const auto& row : rows) {
    require(row.train_loss.size() == static_cast<std::size_t>(num_clients) &&
                row.eval_loss.size() == split_names.size(),
            ErrorCode::kInvalidArgument, "emit_summary: row shape mismatch");
    out << row.mode << "," << fmt_double(row.eta) << "," << row.rounds << "," << row.weighting
        << "," << row.seed;
    for (double v : row.train_loss) out << "," << fmt_double(v);
    for (double v : row.eval_loss) out << "," << fmt_double(v);
    out << "," << row.total_bytes << "," << row.total_rounds << "\n";
  }
  require(out.good(), ErrorCode::kIo, "write failed for " + path);
}

namespace {

SummaryRow summary_row_for(const ExperimentConfig& cfg, const RunOutcome& outcome) {
  SummaryRow row;
  row.mode = run_mode_name(cfg.mode);
  row.eta = cfg.train.eta;
  row.rounds = cfg.train.rounds;
  row.weighting = cfg.train.weighting.name();
  row.seed = cfg.train.seed;
  row.train_loss = outcome.final_train_loss;
  row.eval_loss = outcome.final_eval_loss;
  row.total_bytes = outcome.total_bytes;
  row.total_rounds = outcome.total_rounds;
  return row;
}

std::vector<std::string> split_names_of(const Task& task) {
  std::vector<std::string> names;
  for (const auto& split : task.eval) names.push_back(split.name);
  return names;
}

}  // namespace

void save_run(const ExperimentConfig& cfg, const Task& task, const RunOutcome& outcome) {
  fs::create_directories(cfg.out_dir);
  transport::RoundMessage checkpoint;
  checkpoint.kind = transport::MessageKind::kGlobalModel;
  checkpoint.epoch = static_cast<std::uint32_t>(cfg.train.epochs);
  checkpoint.round = static_cast<std::uint32_t>(outcome.total_rounds ? cfg.train.rounds : 0);
  checkpoint.params = outcome.transforms.empty()
                          ? outcome.params
                          : transport::with_transform_blocks(outcome.params, outcome.transforms);
  transport::save_checkpoint(checkpoint, (fs::path(cfg.out_dir) / "checkpoint.flam").string());
  write_metrics_jsonl(outcome.reports, (fs::path(cfg.out_dir) / "metrics.jsonl").string());
  emit_summary({summary_row_for(cfg, outcome)}, static_cast<int>(task.clients.size()),
               split_names_of(task), (fs::path(cfg.out_dir) / "summary.csv").string());
  std::ofstream out(fs::path(cfg.out_dir) / "config.json");
  require(out.good(), ErrorCode::kIo, "cannot write resolved config");
  out << experiment_to_json(cfg).dump(2) << "\n";
}

RunOutcome run_and_save(const ExperimentConfig& cfg) {
  const Task task = build_task(cfg);
  RunOutcome outcome = run_single(cfg, task);
  if (!cfg.out_dir.empty()) save_run(cfg, task, outcome);
  return outcome;
}

namespace {

int sweep_thread_cap() {
  if (const char* env = std::getenv("FEDSILO_THREADS")) {
    int value = 0;
    const auto [ptr, ec] = std::from_chars(env, env + std::strlen(env), value);
    if (ec == std::errc{} && ptr == env + std::strlen(env) && value >= 1) return value;
    throw Error(ErrorCode::kInvalidArgument, "FEDSILO_THREADS must be a positive integer");
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

struct SweepCell {
  ExperimentConfig cfg;
  std::string label;
};

int run_sweep(const ExperimentConfig& base, bool quiet) {
  SweepSpec sweep = base.sweep;
  if (sweep.etas.empty()) sweep.etas = {base.train.eta};
  if (sweep.rounds.empty()) sweep.rounds = {base.train.rounds};
  if (sweep.weightings.empty()) sweep.weightings = {base.train.weighting};
  if (sweep.seeds.empty()) sweep.seeds = {base.train.seed};

  std::vector<SweepCell> cells;
  for (double eta : sweep.etas) {
    for (int rounds : sweep.rounds) {
      for (const auto& weighting : sweep.weightings) {
        for (std::uint64_t seed : sweep.seeds) {
          SweepCell cell;
          cell.cfg = base;
          cell.cfg.train.eta = eta;
          cell.cfg.train.rounds = rounds;
          cell.cfg.train.weighting = weighting;
          cell.cfg.train.seed = seed;
          cell.label = "eta" + fmt_double(eta) + "_T" + std::to_string(rounds) + "_" +
                       weighting.name() + "_s" + std::to_string(seed);
          std::replace(cell.label.begin(), cell.label.end(), ':', '-');
          if (!base.out_dir.empty())
            cell.cfg.out_dir = (fs::path(base.out_dir) / cell.label).string();
          cells.push_back(std::move(cell));
        }
      }
    }
  }

  std::vector<SummaryRow> rows(cells.size());
  std::vector<std::string> errors(cells.size());
  std::atomic<std::size_t> next{0};
  const int workers = std::min<int>(sweep_thread_cap(), static_cast<int>(cells.size()));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1)) {
        try {
          const Task task = build_task(cells[i].cfg);
          const RunOutcome outcome = run_single(cells[i].cfg, task);
          if (!cells[i].cfg.out_dir.empty()) save_run(cells[i].cfg, task, outcome);
          rows[i] = summary_row_for(cells[i].cfg, outcome);
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      }
    });
  }
  for (auto& t : pool) t.join();

  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!errors[i].empty()) {
      std::cerr << "sweep cell " << cells[i].label << " failed: " << errors[i] << "\n";
      return 2;
    }
  }

  const Task probe = build_task(cells.front().cfg);
  const std::string out_path = base.out_dir.empty()
                                   ? std::string("sweep_summary.csv")
                                   : (fs::path(base.out_dir) / "summary.csv").string();
  if (!base.out_dir.empty()) fs::create_directories(base.out_dir);
  emit_summary(rows, static_cast<int>(probe.clients.size()), split_names_of(probe), out_path);
  if (!quiet) {
    std::cout << cells.size() << " sweep cells -> " << out_path << "\n";
  }
  return 0;
}

int run_eval_command(const ExperimentConfig& cfg, const std::string& checkpoint_path, bool quiet) {
  const Task task = build_task(cfg);
  const auto msg = transport::load_checkpoint(checkpoint_path);
  auto [params, transforms] = transport::split_transform_blocks(msg.params);

  model::ModelSpec spec = resolve_model(cfg, task);
  require(params.same_manifest(model::ParamVector{model::model_manifest(spec)}),
          ErrorCode::kInvalidArgument, "checkpoint does not match the configured model");
  const std::vector<transform::AffineTransform>* eval_transforms =
      transforms.empty() ? nullptr : &transforms;
  const std::vector<double> losses = federation::eval_all(params, spec, task.eval, eval_transforms);
  for (std::size_t k = 0; k < task.eval.size(); ++k) {
    if (!quiet) std::cout << task.eval[k].name << " " << fmt_double(losses[k]) << "\n";
  }
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    std::ofstream out(fs::path(cfg.out_dir) / "eval.csv");
    require(out.good(), ErrorCode::kIo, "cannot write eval.csv");
    out << "split,loss\n";
    for (std::size_t k = 0; k < task.eval.size(); ++k)
      out << task.eval[k].name << "," << fmt_double(losses[k]) << "\n";
  }
  return 0;
}

int run_gen_data(const ExperimentConfig& cfg, bool quiet) {
  const SyntheticSpec* spec = cfg.synthetic();
  require(spec != nullptr, ErrorCode::kInvalidArgument, "gen-data needs a synthetic data config");
  require(!cfg.out_dir.empty(), ErrorCode::kInvalidArgument, "gen-data needs --out");
  const Task task = build_task(cfg);
  fs::create_directories(cfg.out_dir);
  for (std::size_t i = 0; i < task.clients.size(); ++i) {
    const std::string base = (fs::path(cfg.out_dir) / ("client" + std::to_string(i))).string();
    data::write_csv(task.clients[i], base + ".csv");
    data::write_dataset_metadata(task.clients[i], task.skews[i], cfg.train.seed,
                                 base + ".meta.json");
  }
  for (const auto& split : task.eval) {
    data::ClientDataset ds;
    ds.client_id = split.client_id.value_or(0);
    ds.features = split.features;
    ds.labels = split.labels;
    ds.num_classes = spec->classes;
    data::write_csv(ds, (fs::path(cfg.out_dir) / ("eval_" + split.name + ".csv")).string());
  }
  if (!quiet)
    std::cout << task.clients.size() << " client datasets written to " << cfg.out_dir << "\n";
  return 0;
}

}  // namespace

bool run_verify(bool quiet) {
  struct Check {
    std::string name;
    bool ok;
    std::string detail;
  };
  std::vector<Check> checks;
  Rng rng(20240817);

  {  // averaging identity at eta = 1
    bool ok = true;
    std::string detail;
    for (int it = 0; it < 200 && ok; ++it) {
      Rng r = rng.fork("avg", static_cast<std::uint64_t>(it));
      const std::size_t n = 1 + r.below(64);
      const std::size_t count = 1 + r.below(6);
      model::ParamVector base{{model::BlockInfo{"w", n, 1, 0}}};
      for (double& v : base.data()) v = r.uniform(-10.0, 10.0);
      std::vector<model::ParamVector> locals;
      std::vector<double> p(count, 1.0 / static_cast<double>(count));
      for (std::size_t i = 0; i < count; ++i) {
        model::ParamVector local = base;
        for (double& v : local.data()) v = r.uniform(-10.0, 10.0);
        locals.push_back(std::move(local));
      }
      const auto merged = federation::fedavg_update(base, locals, p, 1.0);
      for (std::size_t j = 0; j < n; ++j) {
        double expect = 0.0;
        for (std::size_t i = 0; i < count; ++i) expect += p[i] * locals[i].data()[j];
        if (std::abs(merged.data()[j] - expect) > 1e-12) {
          ok = false;
          detail = "instance " + std::to_string(it);
          break;
        }
      }
    }
    checks.push_back({"fedavg eta=1 equals weighted average", ok, detail});
  }

  {  // model gradient vs finite differences
    bool ok = true;
    std::string detail;
    model::ModelSpec spec{{4, 6, 3}};
    for (int it = 0; it < 20 && ok; ++it) {
      Rng r = rng.fork("grad", static_cast<std::uint64_t>(it));
      auto w = model::init_params(spec, r.fork("w"));
      model::LabeledBatch batch;
      batch.features = Matrix(3, 4);
      for (double& v : batch.features.data()) v = r.normal();
      batch.labels = {static_cast<int>(r.below(3)), static_cast<int>(r.below(3)),
                      static_cast<int>(r.below(3))};
      const auto lg = model::loss_and_grad(w, batch, spec);
      const auto numeric = numkit::finite_diff_grad(
          [&](const Vector& x) {
            model::ParamVector probe = w;
            std::copy(x.begin(), x.end(), probe.data().begin());
            return model::loss_value(probe, batch, spec);
          },
          Vector(w.data().begin(), w.data().end()), 1e-5);
      for (std::size_t j = 0; j < numeric.size(); ++j) {
        const double denom = std::max(1e-8, std::abs(numeric[j]));
        if (std::abs(lg.grad.data()[j] - numeric[j]) / denom > 1e-4 &&
            std::abs(lg.grad.data()[j] - numeric[j]) > 1e-7) {
          ok = false;
          detail = "instance " + std::to_string(it);
          break;
        }
      }
    }
    checks.push_back({"model gradient matches finite differences", ok, detail});
  }

  {  // sharding contract
    bool ok = true;
    std::string detail;
    for (int it = 0; it < 200 && ok; ++it) {
      Rng r = rng.fork("shard", static_cast<std::uint64_t>(it));
      const int t = 1 + static_cast<int>(r.below(12));
      const std::size_t n = static_cast<std::size_t>(t) + r.below(200);
      data::ClientDataset ds;
      ds.client_id = it;
      ds.num_classes = 2;
      ds.features = Matrix(n, 2);
      ds.labels.assign(n, 0);
      for (std::size_t i = 0; i < n; ++i) ds.features.at(i, 0) = static_cast<double>(i);
      const auto shards = data::shard_epoch(ds, t, 1, r.next_u64());
      std::vector<bool> seen(n, false);
      std::size_t total = 0;
      std::size_t min_size = n, max_size = 0;
      for (const auto& shard : shards) {
        total += shard.size();
        min_size = std::min(min_size, shard.size());
        max_size = std::max(max_size, shard.size());
        for (std::size_t i = 0; i < shard.size(); ++i) {
          const auto idx = static_cast<std::size_t>(shard.features.at(i, 0));
          if (idx >= n || seen[idx]) ok = false;
          if (!ok) break;
          seen[idx] = true;
        }
      }
      if (total != n || max_size - min_size > 1) ok = false;
      if (!ok) detail = "n=" + std::to_string(n) + " T=" + std::to_string(t);
    }
    checks.push_back({"epoch shards partition the dataset", ok, detail});
  }

  {  // wire format round trip and corruption detection
    bool ok = true;
    std::string detail;
    model::ParamVector params{
        {model::BlockInfo{"layer0.W", 2, 3, 0}, model::BlockInfo{"layer0.b", 2, 1, 0}}};
    for (std::size_t i = 0; i < params.size(); ++i) params.data()[i] = 0.25 * (1.0 + static_cast<double>(i));
    transport::RoundMessage msg;
    msg.kind = transport::MessageKind::kLocalUpdate;
    msg.epoch = 3;
    msg.round = 7;
    msg.client_id = 2;
    msg.params = params;
    auto bytes = transport::serialize(msg);
    if (bytes.size() != transport::serialized_size(params)) {
      ok = false;
      detail = "size formula";
    }
    if (ok && !(transport::deserialize(bytes) == msg)) {
      ok = false;
      detail = "round trip";
    }
    if (ok) {
      bytes[bytes.size() / 2] ^= 0x01;
      try {
        transport::deserialize(bytes);
        ok = false;
        detail = "corruption not detected";
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kBadCrc) {
          ok = false;
          detail = "wrong error on corruption";
        }
      }
    }
    checks.push_back({"wire format round trip and CRC", ok, detail});
  }

  {  // Eq. 4 path against independent algebra at eta != 1
    bool ok = true;
    std::string detail;
    for (int it = 0; it < 100 && ok; ++it) {
      Rng r = rng.fork("eq4", static_cast<std::uint64_t>(it));
      const std::size_t n = 1 + r.below(32);
      model::ParamVector base{{model::BlockInfo{"w", n, 1, 0}}};
      for (double& v : base.data()) v = r.uniform(-5.0, 5.0);
      std::vector<model::ParamVector> locals(3, base);
      for (auto& local : locals)
        for (double& v : local.data()) v = r.uniform(-5.0, 5.0);
      const std::vector<double> p{0.5, 0.25, 0.25};
      const double eta = r.uniform(0.05, 0.95);
      const auto merged = federation::fedavg_update(base, locals, p, eta);
      for (std::size_t j = 0; j < n; ++j) {
        double avg = 0.0;
        for (std::size_t i = 0; i < locals.size(); ++i) avg += p[i] * locals[i].data()[j];
        const double expect = (1.0 - eta) * base.data()[j] + eta * avg;
        if (std::abs(merged.data()[j] - expect) > 1e-12) {
          ok = false;
          detail = "instance " + std::to_string(it);
          break;
        }
      }
    }
    checks.push_back({"fedavg eta<1 matches convex-combination form", ok, detail});
  }

  bool all_ok = true;
  for (const auto& check : checks) {
    all_ok = all_ok && check.ok;
    if (!quiet || !check.ok) {
      std::cout << (check.ok ? "[ok]   " : "[FAIL] ") << check.name;
      if (!check.ok && !check.detail.empty()) std::cout << " (" << check.detail << ")";
      std::cout << "\n";
    }
  }
  return all_ok;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"fedsilo: cross-silo federated training with client-adaptive transforms"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string mode_override;
  std::string checkpoint_path;
  std::optional<std::uint64_t> seed_override;
  bool quiet = false;

  auto add_common = [&](CLI::App* cmd, bool config_required) {
    cmd->add_option("--config", config_path, "experiment config (JSON)")
        ->required(config_required);
    cmd->add_option("--seed", seed_override, "override the config seed");
    cmd->add_option("--out", out_dir, "output directory override");
    cmd->add_option("--mode", mode_override, "fedavg|caft|caft_pt|centralized|cat");
    cmd->add_flag("--quiet", quiet, "suppress progress output");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "write synthetic client CSVs plus metadata");
  add_common(gen, true);
  CLI::App* train = app.add_subcommand("train", "run one training job");
  add_common(train, true);
  CLI::App* sweep = app.add_subcommand("sweep", "grid over eta/rounds/weighting/seeds");
  add_common(sweep, true);
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the eval splits");
  add_common(eval_cmd, true);
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  CLI::App* verify = app.add_subcommand("verify", "run the built-in invariant checks");
  verify->add_flag("--quiet", quiet, "print failures only");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (verify->parsed()) return run_verify(quiet) ? 0 : 1;

    ExperimentConfig cfg = load_experiment(config_path);
    if (seed_override.has_value()) cfg.train.seed = *seed_override;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!mode_override.empty()) {
      cfg.mode = run_mode_from_name(mode_override);
      if (cfg.mode == RunMode::kFedavg || cfg.mode == RunMode::kCaft ||
          cfg.mode == RunMode::kCaftPt) {
        cfg.train.mode = cfg.mode == RunMode::kFedavg  ? federation::Mode::kFedavg
                         : cfg.mode == RunMode::kCaft ? federation::Mode::kCaft
                                                      : federation::Mode::kCaftPt;
      }
    }

    if (gen->parsed()) return run_gen_data(cfg, quiet);
    if (sweep->parsed()) return run_sweep(cfg, quiet);
    if (eval_cmd->parsed()) return run_eval_command(cfg, checkpoint_path, quiet);

    // train
    if (cfg.mode == RunMode::kCaftPt) {
      require(cfg.train.init_checkpoint.has_value(), ErrorCode::kInvalidArgument,
              "caft_pt requires init_checkpoint");
    }
    const Task task = build_task(cfg);
    const RunOutcome outcome = run_single(cfg, task);
    if (!cfg.out_dir.empty()) save_run(cfg, task, outcome);
    if (!quiet) {
      for (std::size_t k = 0; k < task.eval.size(); ++k)
        std::cout << task.eval[k].name << " " << fmt_double(outcome.final_eval_loss[k]) << "\n";
      if (!cfg.out_dir.empty()) std::cout << "artifacts in " << cfg.out_dir << "\n";
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.code()) {
      case ErrorCode::kNumeric:
      case ErrorCode::kClientFailure:
      case ErrorCode::kTimeout:
        return 2;
      default:
        return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace fedsilo::harness
