/**
 * Copyright (C) 2026 The MMoEEx Lab Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *   http://www.apache.org/licenses/LICENSE-2.0
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 * @file   mmoeex_py.cpp
 * @brief  Python bindings: generators, metrics, masks, diversity, gradient
 *         checks and the experiment runner.
 */
#include <mmoeex/data.hpp>
#include <mmoeex/diversity.hpp>
#include <mmoeex/errors.hpp>
#include <mmoeex/gating.hpp>
#include <mmoeex/gradcheck.hpp>
#include <mmoeex/harness.hpp>
#include <mmoeex/metrics.hpp>
#include <mmoeex/optim.hpp>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

namespace py = pybind11;
using namespace mmoeex;

namespace {

py::dict bundle_dict(const DatasetBundle &d) {
  py::dict out;
  py::list tasks, labels, observed;
  for (const TaskSpec &t : d.tasks)
    tasks.append(nlohmann::json(t).dump());
  for (const LabelArray &l : d.labels) {
    labels.append(l.values);
    observed.append(std::vector<int>(l.observed.begin(), l.observed.end()));
  }
  out["tasks"] = tasks;
  out["samples"] = d.samples;
  out["steps"] = d.steps;
  out["features"] = d.features;
  out["x"] = d.x;
  out["labels"] = labels;
  out["observed"] = observed;
  out["train"] = d.splits.train;
  out["validation"] = d.splits.validation;
  out["test"] = d.splits.test;
  return out;
}

DatasetBundle generate(const std::string &generator, const std::string &params) {
  DatasetConfig c;
  c.generator = generator;
  c.params = nlohmann::json::parse(params);
  return build_dataset(c);
}

py::dict report_dict(const DiversityReport &r) {
  py::dict out;
  out["experts"] = r.experts;
  out["samples"] = r.samples;
  out["distances"] = r.distances;
  out["d_bar"] = r.d_bar;
  out["d_bar_all"] = r.d_bar_all;
  return out;
}

py::dict run_dict(const RunRecord &r) {
  py::dict out;
  py::list test, history;
  for (const TaskResult &t : r.test) {
    py::dict row;
    row["task"] = t.task;
    row["metric"] = std::string(to_string(t.metric));
    row["value"] = t.value;
    row["samples"] = t.samples;
    test.append(row);
  }
  for (const EpochRecord &e : r.history) {
    py::dict row;
    row["epoch"] = e.epoch;
    row["lr"] = e.lr;
    row["train_loss"] = e.train_loss;
    row["val_loss"] = e.val_loss;
    row["val_metric"] = e.val_metric;
    history.append(row);
  }
  out["tasks"] = r.tasks;
  out["test"] = test;
  out["history"] = history;
  out["best_epoch"] = r.best_epoch;
  out["diversity"] = r.diversity ? py::object(report_dict(*r.diversity)) : py::none();
  out["complete"] = r.complete;
  out["error"] = r.error;
  return out;
}

} // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-task mixture-of-experts lab";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<UndefinedMetricError>(m, "UndefinedMetricError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  m.def("generate",
        [](const std::string &generator, const std::string &params) {
          return bundle_dict(generate(generator, params));
        },
        py::arg("generator"), py::arg("params") = "{}",
        "Synthetic suite as a dict; params is a JSON object of generator options.");

  m.def("roc_auc",
        [](const std::vector<double> &s, const std::vector<double> &y) {
          return roc_auc(s, y);
        },
        py::arg("scores"), py::arg("labels"));
  m.def("cohen_kappa",
        [](const std::vector<int> &p, const std::vector<int> &t, std::size_t c) {
          return cohen_kappa(p, t, c);
        },
        py::arg("predicted"), py::arg("truth"), py::arg("classes") = 0);
  m.def("delta_improvement",
        [](const std::vector<double> &stl, const std::vector<double> &mtl) {
          return delta_improvement(stl, mtl);
        },
        py::arg("stl"), py::arg("mtl"));
  m.def("negative_transfer",
        [](const std::vector<double> &stl, const std::vector<double> &mtl) {
          return negative_transfer(stl, mtl);
        },
        py::arg("stl"), py::arg("mtl"));

  m.def("build_mask",
        [](std::size_t tasks, std::size_t experts, double alpha,
           const std::string &mode, std::uint64_t seed) {
          const GateMask g =
              build_mask(tasks, experts, alpha, parse_mask_mode(mode), seed);
          std::vector<std::vector<int>> rows(tasks);
          for (std::size_t k = 0; k < tasks; ++k)
            rows[k].assign(g.row(k).begin(), g.row(k).end());
          return rows;
        },
        py::arg("tasks"), py::arg("experts"), py::arg("alpha"),
        py::arg("mode") = "exclusivity", py::arg("seed") = 0);

  m.def("diversity_report",
        [](const std::vector<std::vector<double>> &outputs, std::size_t samples) {
          return report_dict(diversity_report(outputs, samples));
        },
        py::arg("outputs"), py::arg("samples"));

  m.def("learning_rate",
        [](double base, double factor, std::size_t interval, std::size_t epoch) {
          return StepDecaySchedule{base, factor, interval}.lr(epoch);
        },
        py::arg("base_lr"), py::arg("factor"), py::arg("interval"), py::arg("epoch"));

  m.def("gradcheck",
        [](std::uint64_t seed, std::size_t instances) {
          GradCheckOptions o;
          o.seed = seed;
          o.instances = instances;
          std::vector<py::dict> rows;
          for (const GradCheckResult &r : gradcheck_suite(o)) {
            py::dict row;
            row["name"] = r.name;
            row["max_error"] = r.max_error;
            row["passed"] = r.passed;
            rows.push_back(row);
          }
          return rows;
        },
        py::arg("seed") = 0, py::arg("instances") = 20);

  m.def("run_experiment",
        [](const std::string &config, bool write_outputs) {
          const ExperimentConfig c = nlohmann::json::parse(config).get<ExperimentConfig>();
          RunOptions o;
          o.write_outputs = write_outputs;
          RunRecord r;
          {
            py::gil_scoped_release release;
            r = run_experiment(c, o);
          }
          return run_dict(r);
        },
        py::arg("config"), py::arg("write_outputs") = false,
        "Trains one configuration given as a JSON string.");
}
