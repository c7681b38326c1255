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
 */
#include <mmoeex/errors.hpp>
#include <mmoeex/harness.hpp>
#include <mmoeex/log.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace mmoeex;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string &name) {
  const fs::path dir = fs::temp_directory_path() / "mmoeex_test_harness" / name;
  fs::remove_all(dir);
  return dir;
}

ExperimentConfig config_of(const std::string &kind, const fs::path &out = {}) {
  nlohmann::json j = nlohmann::json::parse(R"({
    "dataset": {"generator": "tabular",
                "params": {"seed": 3, "samples": 400, "features": 6, "tasks": 3}},
    "model": {"kind": "mmoeex", "experts": 4, "hidden_dim": 6,
              "alpha": 0.5, "mask_mode": "exclusivity"},
    "training": {"epochs": 3, "batch_size": 64, "lr": 0.01, "seed": 5}
  })");
  if (kind != "mmoeex")
    j["model"].merge_patch({{"kind", kind}, {"alpha", 0.0}, {"mask_mode", "none"}});
  j["output_dir"] = out.string();
  return j.get<ExperimentConfig>();
}

std::set<std::string> files_in(const fs::path &dir) {
  std::set<std::string> names;
  for (const auto &e : fs::directory_iterator(dir))
    names.insert(e.path().filename().string());
  return names;
}

std::string read_file(const fs::path &p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

} // namespace

TEST(Harness, OverridesSetDottedKeys) {
  nlohmann::json j = {{"training", {{"epochs", 5}}}};
  apply_override(j, "training.epochs=7");
  apply_override(j, "model.kind=mmoe");
  apply_override(j, "model.tower_hidden=[8,4]");
  EXPECT_EQ(j["training"]["epochs"], 7);
  EXPECT_EQ(j["model"]["kind"], "mmoe");
  EXPECT_EQ(j["model"]["tower_hidden"], nlohmann::json::array({8, 4}));
  EXPECT_THROW(apply_override(j, "no_equals_sign"), ConfigError);
}

TEST(Harness, UnknownKeysAndBadCombinationsAreRejected) {
  nlohmann::json j = {{"training", {{"epoch", 5}}}};
  EXPECT_THROW(j.get<ExperimentConfig>(), ConfigError);
  ExperimentConfig c = config_of("mmoe");
  c.model.alpha = 0.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = config_of("stl");
  c.training.maml = true;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Harness, ConfigJsonRoundTrip) {
  const ExperimentConfig c = config_of("mmoeex", "/tmp/x");
  const nlohmann::json j = c;
  const ExperimentConfig back = j.get<ExperimentConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
}

TEST(Harness, RunWritesExactOutputSet) {
  const fs::path dir = fresh_dir("gated");
  const RunRecord r = run_experiment(config_of("mmoeex", dir));
  ASSERT_TRUE(r.complete) << r.error;
  EXPECT_EQ(files_in(dir),
            (std::set<std::string>{"config.json", "metrics.csv", "history.csv",
                                   "mask.json", "diversity.csv",
                                   "diversity_heatmap.txt", "params.txt"}));
  EXPECT_EQ(r.history.size(), 3u);
  ASSERT_TRUE(r.diversity.has_value());
  EXPECT_EQ(r.diversity->experts, 4u);
  ASSERT_TRUE(r.mask.has_value());
  EXPECT_EQ(r.test.size(), 3u);

  const fs::path sb = fresh_dir("shared");
  ASSERT_TRUE(run_experiment(config_of("shared_bottom", sb)).complete);
  EXPECT_EQ(files_in(sb), (std::set<std::string>{"config.json", "metrics.csv",
                                                 "history.csv", "params.txt"}));
}

TEST(Harness, RunsReplayBitExactly) {
  const fs::path a = fresh_dir("replay_a"), b = fresh_dir("replay_b");
  const RunRecord ra = run_experiment(config_of("mmoeex", a));
  const RunRecord rb = run_experiment(config_of("mmoeex", b));
  for (const char *f : {"metrics.csv", "history.csv", "params.txt",
                        "diversity.csv", "mask.json"})
    EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
  EXPECT_EQ(ra.test, rb.test);

  // Replaying from the snapshot written by the first run.
  const ExperimentConfig again =
      load_config(a / "config.json", {"output_dir=" + (a.string() + "_replay")});
  fs::remove_all(a.string() + "_replay");
  run_experiment(again);
  EXPECT_EQ(read_file(a / "params.txt"),
            read_file(fs::path(a.string() + "_replay") / "params.txt"));
}

TEST(Harness, SeedChangesTheRun) {
  ExperimentConfig c = config_of("mmoeex");
  RunOptions quiet{false, false, {}};
  const RunRecord a = run_experiment(c, quiet);
  c.training.seed = 6;
  const RunRecord b = run_experiment(c, quiet);
  EXPECT_NE(a.history.back().train_loss, b.history.back().train_loss);
}

TEST(Harness, StlTrainsOneModelPerTask) {
  const fs::path dir = fresh_dir("stl");
  const RunRecord r = run_experiment(config_of("stl", dir));
  ASSERT_TRUE(r.complete);
  EXPECT_EQ(r.best_epoch.size(), 3u);
  std::vector<std::string> names;
  std::vector<Tensor> tensors;
  load_parameters(dir / "params.txt", names, tensors);
  std::set<std::string> prefixes;
  for (const std::string &n : names)
    prefixes.insert(n.substr(0, n.find('/')));
  EXPECT_EQ(prefixes, (std::set<std::string>{"task0", "task1", "task2"}));
}

TEST(Harness, CompareRunsFromDisk) {
  const fs::path s = fresh_dir("cmp_stl"), m = fresh_dir("cmp_mmoeex");
  run_experiment(config_of("stl", s));
  run_experiment(config_of("mmoeex", m));
  const RunRecord stl = load_run(s), mtl = load_run(m);
  EXPECT_EQ(run_label(mtl), "mmoeex");
  const ComparisonReport rep = compare_runs(stl, {mtl});
  ASSERT_EQ(rep.rows.size(), 1u);
  std::vector<double> sv, mv;
  for (const TaskResult &t : stl.test)
    sv.push_back(t.value);
  for (const TaskResult &t : mtl.test)
    mv.push_back(t.value);
  EXPECT_EQ(rep.rows[0].delta, delta_improvement(sv, mv));
  EXPECT_EQ(rep.rows[0].nt, negative_transfer(sv, mv));
  const std::string csv = rep.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "model,task0,task1,task2,delta_pct,nt");
}

TEST(Harness, ParameterDumpRoundTrip) {
  const fs::path dir = fresh_dir("params");
  fs::create_directories(dir);
  std::vector<Tensor> t{Tensor({2, 2}, {0.1, -1e-300, 3.0, 1.0 / 3.0}),
                        Tensor({3}, {1, 2, 3})};
  save_parameters({"a.weight", "a.bias"}, t, dir / "p.txt");
  std::vector<std::string> names;
  std::vector<Tensor> back;
  load_parameters(dir / "p.txt", names, back);
  EXPECT_EQ(names, (std::vector<std::string>{"a.weight", "a.bias"}));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].values, t[0].values);
  EXPECT_EQ(back[0].shape, t[0].shape);
  EXPECT_EQ(back[1].values, t[1].values);
}

TEST(Harness, DivergenceYieldsIncompleteRecord) {
  const fs::path dir = fresh_dir("nan");
  ExperimentConfig c = config_of("mmoeex", dir);
  c.training.optimizer = "sgd";
  c.training.lr = 1e300;
  const RunRecord r = run_experiment(c);
  EXPECT_FALSE(r.complete);
  EXPECT_NE(r.error.find("non-finite"), std::string::npos) << r.error;
  EXPECT_TRUE(fs::exists(dir / "error.txt"));
  EXPECT_TRUE(fs::exists(dir / "config.json"));
}

TEST(Harness, FileDatasetMatchesGenerator) {
  const fs::path dir = fresh_dir("file");
  fs::create_directories(dir);
  ExperimentConfig c = config_of("mmoeex");
  DatasetBundle d = build_dataset(c.dataset);
  save_delimited(d, dir / "data.csv");
  ExperimentConfig from_file = c;
  from_file.dataset.generator = "file";
  from_file.dataset.path = (dir / "data.csv").string();
  RunOptions quiet{false, false, {}};
  const RunRecord a = run_experiment(c, quiet);
  const RunRecord b = run_experiment(from_file, quiet);
  EXPECT_EQ(a.history.back().train_loss, b.history.back().train_loss);
  EXPECT_EQ(a.test, b.test);
}
