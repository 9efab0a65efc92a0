#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "fedsilo/harness.hpp"
#include "fedsilo/transport.hpp"

namespace py = pybind11;
using namespace fedsilo;
using model::BlockInfo;
using model::ParamVector;

namespace {

ParamVector flat_params(const py::array_t<double>& values) {
  const auto buf = values.request();
  if (buf.ndim != 1) throw py::value_error("expected a 1-d float64 array");
  ParamVector p{{BlockInfo{"w", static_cast<std::size_t>(buf.size), 1, 0}}};
  std::memcpy(p.data().data(), buf.ptr, sizeof(double) * static_cast<std::size_t>(buf.size));
  return p;
}

py::array_t<double> to_array(std::span<const double> values) {
  return py::array_t<double>(static_cast<py::ssize_t>(values.size()), values.data());
}

py::dict report_to_dict(const federation::RoundReport& report) {
  py::dict d;
  d["epoch"] = report.epoch;
  d["round"] = report.round;
  d["client_loss"] = report.client_loss;
  d["eval_loss"] = report.eval_loss;
  d["bytes_up"] = report.bytes_up;
  d["bytes_down"] = report.bytes_down;
  return d;
}

}  // namespace

PYBIND11_MODULE(_fedsilo, m) {
  m.doc() = "Cross-silo federated training with client-adaptive affine transforms";

  m.def(
      "fedavg_update",
      [](const py::array_t<double>& w, const std::vector<py::array_t<double>>& locals,
         const std::vector<double>& weights, double eta) {
        const ParamVector base = flat_params(w);
        std::vector<ParamVector> local_params;
        local_params.reserve(locals.size());
        for (const auto& local : locals) local_params.push_back(flat_params(local));
        const ParamVector merged = federation::fedavg_update(base, local_params, weights, eta);
        return to_array(merged.data());
      },
      py::arg("w"), py::arg("locals"), py::arg("weights"), py::arg("eta"),
      "Global update w - eta * sum_i p_i (w - w_i) over flat parameter arrays.");

  m.def(
      "derive_weights",
      [](const std::string& kind, const std::vector<std::size_t>& sizes, int favored_client,
         double favored_weight) {
        federation::WeightStrategy strategy;
        if (kind == "equal") {
          strategy = federation::WeightStrategy::equal();
        } else if (kind == "proportional") {
          strategy = federation::WeightStrategy::proportional();
        } else if (kind == "preference") {
          strategy = federation::WeightStrategy::preference(favored_client, favored_weight);
        } else {
          throw py::value_error("kind must be equal|proportional|preference");
        }
        return federation::derive_weights(strategy, sizes);
      },
      py::arg("kind"), py::arg("sizes"), py::arg("favored_client") = -1,
      py::arg("favored_weight") = 0.0);

  m.def(
      "anneal",
      [](double alpha, int epoch, int start_epoch) {
        return model::anneal(alpha, epoch, model::AnnealSchedule::after(start_epoch));
      },
      py::arg("alpha"), py::arg("epoch"), py::arg("start_epoch"),
      "Learning rate after the 1/sqrt(2)-per-epoch schedule.");

  m.def(
      "compose_check",
      [](const py::array_t<double>& a, const py::array_t<double>& b,
         const py::array_t<double>& g, const py::array_t<double>& c) {
        const auto ab = a.request();
        if (ab.ndim != 2 || ab.shape[0] != ab.shape[1])
          throw py::value_error("A must be square");
        const std::size_t d = static_cast<std::size_t>(ab.shape[0]);
        auto to_matrix = [d](const py::array_t<double>& arr) {
          const auto buf = arr.request();
          std::vector<double> values(static_cast<std::size_t>(buf.size));
          std::memcpy(values.data(), buf.ptr, sizeof(double) * values.size());
          return numkit::Matrix(d, d, std::move(values));
        };
        auto to_vector = [](const py::array_t<double>& arr) {
          const auto buf = arr.request();
          numkit::Vector values(static_cast<std::size_t>(buf.size));
          std::memcpy(values.data(), buf.ptr, sizeof(double) * values.size());
          return values;
        };
        transform::AffineTransform f{to_matrix(a), to_vector(b)};
        data::SkewSpec skew{to_matrix(g), to_vector(c), 0.0};
        return transform::compose_check(f, skew);
      },
      py::arg("A"), py::arg("b"), py::arg("G"), py::arg("c"),
      "Residual of F inverting the skew (G, c); 0 for the exact inverse.");

  m.def("default_config_json",
        [] { return harness::experiment_to_json(harness::default_experiment()).dump(); });

  m.def(
      "run_experiment",
      [](const std::string& config_json, const std::string& out_dir) {
        harness::ExperimentConfig cfg =
            harness::parse_experiment(nlohmann::json::parse(config_json));
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        const harness::Task task = harness::build_task(cfg);
        const harness::RunOutcome outcome = harness::run_single(cfg, task);
        if (!cfg.out_dir.empty()) harness::save_run(cfg, task, outcome);
        py::dict result;
        result["final_params"] = to_array(outcome.params.data());
        result["final_eval_loss"] = outcome.final_eval_loss;
        result["final_train_loss"] = outcome.final_train_loss;
        result["total_bytes"] = outcome.total_bytes;
        result["total_rounds"] = outcome.total_rounds;
        py::list reports;
        for (const auto& report : outcome.reports) reports.append(report_to_dict(report));
        result["reports"] = reports;
        py::list split_names;
        for (const auto& split : task.eval) split_names.append(split.name);
        result["eval_splits"] = split_names;
        return result;
      },
      py::arg("config_json"), py::arg("out_dir") = std::string(),
      "Run one experiment from a JSON config string; returns losses and reports.");

  m.def(
      "checkpoint_info",
      [](const std::string& path) {
        const auto msg = transport::load_checkpoint(path);
        py::dict info;
        info["epoch"] = msg.epoch;
        info["round"] = msg.round;
        py::list blocks;
        for (const auto& block : msg.params.manifest()) {
          py::dict b;
          b["name"] = block.name;
          b["rows"] = block.rows;
          b["cols"] = block.cols;
          blocks.append(b);
        }
        info["blocks"] = blocks;
        info["params"] = to_array(msg.params.data());
        return info;
      },
      py::arg("path"));

  m.def("verify", [] { return harness::run_verify(true); },
        "Run the built-in invariant checks; returns True when all pass.");

  m.attr("__version__") = "0.1.0";
}
