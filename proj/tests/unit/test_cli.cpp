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
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "mmoeex_test_cli";

int run_cli(const std::string &args, const std::string &env = "") {
  const std::string cmd = env + " '" MMOEEX_CLI_PATH "' " + args + " > '" +
                          (kDir / "out.txt").string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string last_output() {
  std::ifstream f(kDir / "out.txt");
  return {std::istreambuf_iterator<char>(f), {}};
}

fs::path write_config() {
  fs::create_directories(kDir);
  const fs::path p = kDir / "cfg.json";
  std::ofstream(p) << R"({
    "dataset": {"generator": "tabular",
                "params": {"seed": 1, "samples": 300, "features": 4, "tasks": 2}},
    "model": {"kind": "mmoeex", "experts": 3, "hidden_dim": 4,
              "alpha": 0.5, "mask_mode": "exclusivity"},
    "training": {"epochs": 2, "batch_size": 64, "lr": 0.01}
  })";
  return p;
}

} // namespace

TEST(Cli, RunSucceedsAndWritesOutputs) {
  const fs::path cfg = write_config();
  const fs::path out = kDir / "run";
  fs::remove_all(out);
  EXPECT_EQ(run_cli("run --quiet --dump-activations --config '" + cfg.string() +
                    "' --output-dir '" + out.string() + "'"),
            0)
      << last_output();
  EXPECT_TRUE(fs::exists(out / "metrics.csv"));
  EXPECT_TRUE(fs::exists(out / "activations.csv"));
  EXPECT_EQ(run_cli("diversity --dump '" + (out / "activations.csv").string() + "'"), 0)
      << last_output();
  EXPECT_NE(last_output().find("d_bar"), std::string::npos) << last_output();
}

TEST(Cli, ConfigErrorsExitWithTwo) {
  const fs::path cfg = write_config();
  EXPECT_EQ(run_cli("run --config '" + cfg.string() + "' --override model.kind=mmoe"), 2);
  EXPECT_NE(last_output().find("config error"), std::string::npos);
  EXPECT_EQ(run_cli("run --config '" + cfg.string() + "' --override training.bogus=1"), 2);
  EXPECT_EQ(run_cli("run --config '" + cfg.string() + "'", "MMOEEX_THREADS=zero"), 2);
}

TEST(Cli, DivergenceExitsWithThree) {
  const fs::path cfg = write_config();
  EXPECT_EQ(run_cli("run --quiet --config '" + cfg.string() +
                    "' --override training.optimizer=sgd --override training.lr=1e300"
                    " --output-dir '" + (kDir / "nan").string() + "'"),
            3)
      << last_output();
}

TEST(Cli, GenAndGradcheck) {
  fs::create_directories(kDir);
  EXPECT_EQ(run_cli("gen --generator temporal --param samples=20 --param steps=4 "
                    "--param window=2 --out '" + (kDir / "t.csv").string() + "'"),
            0)
      << last_output();
  EXPECT_TRUE(fs::exists(kDir / "t.csv.json"));
  EXPECT_EQ(run_cli("gradcheck --instances 2"), 0) << last_output();
  EXPECT_NE(run_cli("no-such-verb"), 0);
}
