#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fedsilo/baselines.hpp"
#include "fedsilo/federation.hpp"
#include "json.hpp"

namespace fedsilo::harness {

using data::ClientDataset;
using data::EvalSplit;
using data::SkewSpec;
using federation::RoundReport;
using federation::TrainingConfig;
using federation::WeightStrategy;

enum class RunMode {
  kFedavg,
  kCaft,
  kCaftPt,
  kCentralized,
  kCat,
};

const char* run_mode_name(RunMode mode);
RunMode run_mode_from_name(const std::string& name);

struct SyntheticSpec {
  int clients = 5;
  std::size_t dim = 16;
  int classes = 8;
  std::vector<std::size_t> sizes = {4200, 4500, 1000, 1400, 400};
  double mean_scale = 1.0;
  double sigma = 1.0;
  double skew_min = 0.3;
  double skew_max = 1.0;
  double shift_scale = 3.0;
  double label_noise = 0.0;
  std::size_t eval_size = 2000;

  struct EvalDef {
    std::string name;
    int client = 0;
    double variant = 0.0;  // > 0: perturb the client's skew by this scale
  };
  std::vector<EvalDef> eval_splits = {
      {"S1", 0, 0.0}, {"S2", 3, 0.0}, {"S3", 4, 0.0}, {"S4", 4, 0.15}};
};

struct CsvSpec {
  int classes = 2;
  std::vector<std::string> client_paths;

  struct EvalDef {
    std::string name;
    std::string path;
    std::optional<int> client;
  };
  std::vector<EvalDef> eval_splits;
};

struct SweepSpec {
  std::vector<double> etas;
  std::vector<int> rounds;
  std::vector<WeightStrategy> weightings;
  std::vector<std::uint64_t> seeds;

  bool empty() const {
    return etas.empty() && rounds.empty() && weightings.empty() && seeds.empty();
  }
};

struct ExperimentConfig {
  RunMode mode = RunMode::kFedavg;
  TrainingConfig train;
  std::vector<std::size_t> hidden = {32};
  std::variant<SyntheticSpec, CsvSpec> data = SyntheticSpec{};
  std::string out_dir;
  SweepSpec sweep;

  const SyntheticSpec* synthetic() const { return std::get_if<SyntheticSpec>(&data); }
  const CsvSpec* csv() const { return std::get_if<CsvSpec>(&data); }
};

ExperimentConfig parse_experiment(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::string& path);
nlohmann::json experiment_to_json(const ExperimentConfig& cfg);

/// Default desk-scale experiment: 5 unbalanced clients with distinct affine
/// skews over a shared mixture, 4 eval splits.
ExperimentConfig default_experiment();

struct Task {
  std::vector<ClientDataset> clients;
  std::vector<EvalSplit> eval;
  std::vector<SkewSpec> skews;  // per client; empty for CSV tasks
};

Task build_task(const ExperimentConfig& cfg);

struct RunOutcome {
  model::ParamVector params;
  std::vector<transform::AffineTransform> transforms;
  std::vector<RoundReport> reports;
  std::vector<double> final_train_loss;  // per client, final model on its training data
  std::vector<double> final_eval_loss;   // per split
  std::uint64_t total_bytes = 0;
  int total_rounds = 0;
};

/// One full run of any mode over an already-built task.
RunOutcome run_single(const ExperimentConfig& cfg, const Task& task);

/// Writes checkpoint.flam, metrics.jsonl, summary.csv and the resolved
/// config.json for a finished run into `cfg.out_dir`.
void save_run(const ExperimentConfig& cfg, const Task& task, const RunOutcome& outcome);

/// Runs and, when `cfg.out_dir` is set, saves the artifacts.
RunOutcome run_and_save(const ExperimentConfig& cfg);

struct SummaryRow {
  std::string mode;
  double eta = 1.0;
  int rounds = 0;
  std::string weighting;
  std::uint64_t seed = 0;
  std::vector<double> train_loss;
  std::vector<double> eval_loss;
  std::uint64_t total_bytes = 0;
  int total_rounds = 0;
};

std::string summary_header(int num_clients, const std::vector<std::string>& split_names);
void emit_summary(const std::vector<SummaryRow>& rows, int num_clients,
                  const std::vector<std::string>& split_names, const std::string& path);

void write_metrics_jsonl(const std::vector<RoundReport>& reports, const std::string& path);

/// Quick self-check of the package's core identities; prints one line per
/// check. Returns true when every check passes.
bool run_verify(bool quiet);

/// Entry point for the `fedsilo` CLI: gen-data | train | sweep | eval | verify.
int run_cli(int argc, char** argv);

}  // namespace fedsilo::harness
