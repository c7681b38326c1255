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
 * @file   mmoeex_cli.cpp
 * @brief  Command-line front end: run, compare, diversity, gradcheck, gen.
 *
 * Exit codes: 0 success, 1 other failure, 2 configuration error,
 * 3 numerical abort.
 */
#include <mmoeex/diversity.hpp>
#include <mmoeex/errors.hpp>
#include <mmoeex/gradcheck.hpp>
#include <mmoeex/harness.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

namespace {

using namespace mmoeex;

/// MMOEEX_THREADS caps worker threads. Training is single-threaded, so any
/// positive value is accepted; malformed values are configuration errors.
void check_thread_env() {
  const char *v = std::getenv("MMOEEX_THREADS");
  if (!v || !*v)
    return;
  char *end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1)
    throw ConfigError("MMOEEX_THREADS must be a positive integer, got '" +
                      std::string(v) + "'");
}

int cmd_run(const std::string &config_path, const std::vector<std::string> &overrides,
            const std::optional<std::uint64_t> &seed, const std::string &output_dir,
            bool dump_activations, bool quiet) {
  std::vector<std::string> all = overrides;
  if (!output_dir.empty())
    all.push_back("output_dir=\"" + output_dir + "\"");
  const ExperimentConfig config = load_config(config_path, all, seed);
  RunOptions options;
  options.dump_activations = dump_activations;
  if (!quiet) {
    options.on_epoch = [](const EpochRecord &e) {
      double train = 0.0, metric = 0.0;
      for (double v : e.train_loss)
        train += v;
      for (double v : e.val_metric)
        metric += std::isnan(v) ? 0.0 : v;
      std::printf("epoch %3zu  lr %.6g  train_loss %.6f  val_metric_sum %.6f\n",
                  e.epoch, e.lr, train, metric);
      std::fflush(stdout);
    };
  }
  const RunRecord record = run_experiment(config, options);
  if (!record.complete) {
    std::cerr << "numerical abort: " << record.error << '\n';
    return 3;
  }
  for (std::size_t k = 0; k < record.test.size(); ++k)
    std::printf("%s %s %.6f (best epoch %zu)\n", record.test[k].task.c_str(),
                std::string(to_string(record.test[k].metric)).c_str(),
                record.test[k].value, record.best_epoch[k]);
  if (record.diversity)
    std::printf("diversity d_bar %.6f (all entries %.6f)\n",
                record.diversity->d_bar, record.diversity->d_bar_all);
  std::printf("outputs in %s (%.2f s)\n", config.output_dir.c_str(),
              record.wall_seconds);
  return 0;
}

int cmd_compare(const std::string &stl_dir, const std::vector<std::string> &mtl_dirs,
                const std::string &out) {
  const RunRecord stl = load_run(stl_dir);
  std::vector<RunRecord> mtl;
  for (const std::string &d : mtl_dirs)
    mtl.push_back(load_run(d));
  const std::string table = compare_runs(stl, mtl).to_csv();
  if (out.empty()) {
    std::cout << table;
  } else {
    std::ofstream f(out);
    if (!f)
      throw IoError("cannot write " + out);
    f << table;
  }
  return 0;
}

int cmd_diversity(const std::string &dump, const std::string &out_dir) {
  const ActivationDump d = load_activation_dump(dump);
  const DiversityReport report = diversity_report(d.outputs, d.samples);
  std::cout << render_heatmap(report);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    export_heatmap(report, std::filesystem::path(out_dir) / "diversity.csv",
                   std::filesystem::path(out_dir) / "diversity_heatmap.txt");
  }
  return 0;
}

int cmd_gradcheck(const GradCheckOptions &options) {
  bool ok = true;
  for (const GradCheckResult &r : gradcheck_suite(options)) {
    std::printf("%-22s instances %3zu  max_rel_err %.3e  %s\n", r.name.c_str(),
                r.instances, r.max_error, r.passed ? "ok" : "FAIL");
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

int cmd_gen(const std::string &generator, const std::vector<std::string> &params,
            const std::string &out) {
  nlohmann::json j = {{"dataset", {{"generator", generator}}}};
  for (const std::string &p : params)
    apply_override(j, "dataset.params." + p);
  const ExperimentConfig config = j.get<ExperimentConfig>();
  if (config.dataset.generator == "file")
    throw ConfigError("gen needs a synthetic generator");
  const DatasetBundle data = build_dataset(config.dataset);
  save_delimited(data, out);
  std::printf("wrote %zu samples x %zu steps x %zu features, %zu tasks to %s\n",
              data.samples, data.steps, data.features, data.tasks.size(),
              out.c_str());
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Multi-task mixture-of-experts lab"};
  app.require_subcommand(1);

  std::string config_path, output_dir;
  std::vector<std::string> overrides;
  std::uint64_t seed_value = 0;
  bool dump_activations = false, quiet = false;
  auto *run = app.add_subcommand("run", "Train and evaluate one configuration");
  run->add_option("--config", config_path, "JSON config file")->required();
  auto *seed_opt = run->add_option("--seed", seed_value, "Training seed");
  run->add_option("--override", overrides, "Dotted key=value override");
  run->add_option("--output-dir", output_dir, "Output directory");
  run->add_flag("--dump-activations", dump_activations,
                "Write expert activations used for the diversity report");
  run->add_flag("--quiet", quiet, "No per-epoch progress");

  std::string stl_dir, compare_out;
  std::vector<std::string> mtl_dirs;
  auto *compare = app.add_subcommand("compare", "Delta and NT table against STL");
  compare->add_option("--stl", stl_dir, "STL run directory")->required();
  compare->add_option("--mtl", mtl_dirs, "Multi-task run directories")->required();
  compare->add_option("--out", compare_out, "CSV path (default stdout)");

  std::string dump_path, diversity_out;
  auto *diversity = app.add_subcommand("diversity",
                                       "Diversity report from an activation dump");
  diversity->add_option("--dump", dump_path, "CSV or .jsonl dump")->required();
  diversity->add_option("--out-dir", diversity_out, "Write CSV and heatmap here");

  GradCheckOptions gc;
  auto *gradcheck = app.add_subcommand("gradcheck", "Finite-difference suite");
  gradcheck->add_option("--seed", gc.seed);
  gradcheck->add_option("--instances", gc.instances);
  gradcheck->add_option("--eps", gc.eps);
  gradcheck->add_option("--tolerance", gc.tolerance);

  std::string generator = "tabular", gen_out;
  std::vector<std::string> gen_params;
  auto *gen = app.add_subcommand("gen", "Write a synthetic dataset to disk");
  gen->add_option("--generator", generator, "tabular | temporal | manytask");
  gen->add_option("--param", gen_params, "Generator option key=value");
  gen->add_option("--out", gen_out, "CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    check_thread_env();
    if (*run)
      return cmd_run(config_path, overrides,
                     seed_opt->count() ? std::optional(seed_value) : std::nullopt,
                     output_dir, dump_activations, quiet);
    if (*compare)
      return cmd_compare(stl_dir, mtl_dirs, compare_out);
    if (*diversity)
      return cmd_diversity(dump_path, diversity_out);
    if (*gradcheck)
      return cmd_gradcheck(gc);
    if (*gen)
      return cmd_gen(generator, gen_params, gen_out);
  } catch (const ConfigError &e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError &e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return 3;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
