// Copyright 2026 The fedshield Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fedshield/errors.hpp"
#include "fedshield/experiment/runner.hpp"
#include "testing.hpp"

namespace fedshield::experiment {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using testing::TempDir;

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

// Seconds-scale synthetic run: 9x9 images, two clients, two rounds.
json tiny_user(const std::string& defense, const fs::path& out) {
  return {
      {"output_dir", out.string()},
      {"dataset",
       {{"max_train", 48},
        {"max_test", 24},
        {"synthetic", {{"channels", 2}, {"height", 9}, {"width", 9}, {"num_classes", 3}}}}},
      {"arch", {{"width_divisor", 16}}},
      {"federation", {{"num_clients", 2}, {"rounds", 2}, {"batch_size", 8}}},
      {"defense", {{"kind", defense}, {"pretrain", {{"epochs", 2}, {"batch_size", 8}}}}},
      {"attack", {{"batch_size", 4}, {"local_epochs", 1}, {"iterations", 10}}},
  };
}

std::string config_error_path(const json& user) {
  try {
    resolve_config(user);
  } catch (const ConfigError& e) {
    return e.field_path();
  }
  return "<none>";
}

TEST(Config, SchemaErrorsNameTheField) {
  EXPECT_EQ(config_error_path({{"federation", {{"roundz", 3}}}}), "federation.roundz");
  EXPECT_EQ(config_error_path({{"federation", {{"rounds", "three"}}}}), "federation.rounds");
  EXPECT_EQ(config_error_path({{"attack", {{"lr", true}}}}), "attack.lr");
  EXPECT_EQ(config_error_path({{"threads", 0}}), "threads");
  EXPECT_EQ(config_error_path({{"dataset", {{"name", "cifar10"}}}}), "dataset.root");
  EXPECT_EQ(config_error_path({{"dataset", {{"name", "mnist"}}}}), "dataset.name");
  EXPECT_EQ(config_error_path({{"profile", "huge"}}), "profile");
  EXPECT_EQ(config_error_path({{"defense", {{"kind", "pretrain"}}}}), "defense.kind");
  EXPECT_EQ(config_error_path({{"seed", 5}}), "<none>");
}

TEST(Config, InvalidJsonFileRaisesConfigError) {
  TempDir dir;
  write_text(dir / "bad.json", "{\"seed\": ");
  EXPECT_THROW(load_config_file(dir / "bad.json"), ConfigError);
  EXPECT_THROW(load_config_file(dir / "absent.json"), ConfigError);
}

TEST(Config, PaperProfileDefaults) {
  const auto lr = [](const std::string& ds, const std::string& def) {
    const auto d = default_config(Profile::kPaper, ds, def);
    return std::make_pair(d["federation"]["client_lr"].get<double>(),
                          d["federation"]["rounds"].get<int>());
  };
  EXPECT_EQ(lr("cifar10", "proposed_fixed"), std::make_pair(1e-4, 400));
  EXPECT_EQ(lr("bloodmnist", "proposed_learnable"), std::make_pair(1e-3, 400));
  EXPECT_EQ(lr("cifar10", "dp_sgd"), std::make_pair(1e-2, 150));
  EXPECT_EQ(lr("bloodmnist", "dp_sgd"), std::make_pair(1e-1, 200));
  EXPECT_EQ(lr("cifar10", "bido"), std::make_pair(1e-4, 200));
  const auto mu = default_config(Profile::kPaper, "cifar10", "proposed_fixed")["sweep"];
  EXPECT_EQ(mu["parameter"], "defense.noise.mu");
  EXPECT_EQ(mu["values"], json({1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0}));
  const auto bido = default_config(Profile::kPaper, "cifar10", "bido")["sweep"]["values"];
  ASSERT_EQ(bido.size(), 6u);
  EXPECT_EQ(bido[0], json({{"lambda_x", 1.0}, {"lambda_y", 5.0}}));
  EXPECT_EQ(default_config(Profile::kPaper, "cifar10", "dp_sgd")["sweep"]["values"].size(), 6u);
}

TEST(Config, DeskProfileStaysWithinBudget) {
  for (const std::string ds : {"synthetic", "cifar10", "bloodmnist"}) {
    for (const std::string def : {"none", "proposed_fixed", "dp_sgd", "bido"}) {
      const auto d = default_config(Profile::kDesk, ds, def);
      EXPECT_LE(d["dataset"]["max_train"].get<int>(), 2000);
      EXPECT_LE(d["federation"]["rounds"].get<int>(), 30);
      EXPECT_EQ(d["attack"]["iterations"].get<int>(), 200);
    }
  }
}

TEST(Config, OverridesTakePrecedence) {
  const json user = {{"seed", 3}, {"threads", 2}, {"output_dir", "a"}};
  const auto doc = resolve_config(user, {Profile::kDesk, 11, "b", 1});
  EXPECT_EQ(doc["seed"], 11);
  EXPECT_EQ(doc["threads"], 1);
  EXPECT_EQ(doc["output_dir"], "b");
  EXPECT_EQ(parse_config(doc).federation.seed, 11u);
}

TEST(Config, SetAndGetPath) {
  json doc = default_config(Profile::kDesk, "synthetic", "bido");
  set_path(doc, "defense.bido", {{"lambda_x", 0.5}, {"lambda_y", 2.0}});
  EXPECT_EQ(get_path(doc, "defense.bido.lambda_x"), 0.5);
  set_path(doc, "attack.iterations", 7);
  EXPECT_EQ(parse_config(doc).attack.config.iterations, 7);
  EXPECT_THROW(set_path(doc, "attack.nope", 1), ConfigError);
  EXPECT_THROW(set_path(doc, "attack.iterations", "x"), ConfigError);
  EXPECT_THROW(get_path(doc, "defense.missing"), ConfigError);
}

TEST(Pretrain, RefusesOtherDefensesAndIsDeterministic) {
  TempDir dir;
  EXPECT_THROW(cmd_pretrain(resolve_config(tiny_user("dp_sgd", dir / "dp"))), ConfigError);
  const auto a = cmd_pretrain(resolve_config(tiny_user("proposed_learnable", dir / "a")));
  const auto b = cmd_pretrain(resolve_config(tiny_user("proposed_learnable", dir / "b")));
  ASSERT_EQ(a.size(), 2u);
  ASSERT_EQ(b.size(), 2u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(slurp(a[i]), slurp(b[i]));
    for (double s : defense::load_noise(a[i]).sigma) EXPECT_GT(s, 0.0);
  }
  EXPECT_TRUE(fs::exists(dir / "a" / "resolved_config.json"));
  EXPECT_TRUE(fs::exists(dir / "a" / "pretrain_log_client1.csv"));
}

TEST(Run, WritesOutputsAndReproducesBitwise) {
  TempDir dir;
  const auto doc_a = resolve_config(tiny_user("proposed_fixed", dir / "a"));
  const auto doc_b = resolve_config(tiny_user("proposed_fixed", dir / "b"));
  const auto a = cmd_run(doc_a);
  cmd_run(doc_b);
  EXPECT_TRUE(a.attacked);
  for (const char* f : {"resolved_config.json", "model.fsh", "training_log.csv", "metrics.csv",
                        "recon_report.json", "reconstruction.ppm", "clean_model.fsh"}) {
    EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
  }
  const auto table = io::read_csv(dir / "a" / "metrics.csv");
  EXPECT_EQ(table.header, metrics_columns());
  ASSERT_EQ(table.rows.size(), 1u);
  EXPECT_EQ(table.rows[0], a.row);
  EXPECT_EQ(table.rows[0][1], "proposed_fixed");
  for (const char* f : {"metrics.csv", "training_log.csv", "model.fsh", "reconstruction.fsh"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
  // The resolved config alone reproduces the run.
  json again = load_config_file(dir / "a" / "resolved_config.json");
  again["output_dir"] = (dir / "c").string();
  cmd_run(resolve_config(again));
  EXPECT_EQ(slurp(dir / "a" / "metrics.csv"), slurp(dir / "c" / "metrics.csv"));
}

TEST(Run, WithoutAttackLeavesFidelityColumnsEmpty) {
  TempDir dir;
  json user = tiny_user("none", dir / "r");
  user["attack"]["enabled"] = false;
  const auto s = cmd_run(resolve_config(user));
  EXPECT_FALSE(s.attacked);
  EXPECT_EQ(s.row[6], "nan");
  EXPECT_EQ(s.row[9], "nan");
  EXPECT_FALSE(fs::exists(dir / "r" / "recon_report.json"));
}

TEST(Sweep, RowsSortedAndFailuresRecorded) {
  TempDir dir;
  json user = tiny_user("proposed_fixed", dir / "s");
  user["sweep"] = {{"parameter", "defense.noise.sigma"}, {"values", {0.2, 0.0, 0.1}}};
  user["eval"] = {{"probe", false}};
  const auto s = cmd_sweep(resolve_config(user));
  ASSERT_EQ(s.table.rows.size(), 2u);
  ASSERT_EQ(s.failures.size(), 1u);
  EXPECT_EQ(s.failures[0].first, "0.0");
  EXPECT_EQ(io::read_csv(s.csv).rows, s.table.rows);
  EXPECT_TRUE(fs::exists(dir / "s" / "value_00" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(dir / "s" / "value_02" / "metrics.csv"));
  for (const auto& r : s.table.rows) EXPECT_EQ(r[9], "nan");
}

TEST(Sweep, RejectsBadSpecsBeforeRunning) {
  TempDir dir;
  json user = tiny_user("proposed_fixed", dir / "s");
  user["sweep"] = {{"parameter", ""}, {"values", {1.0}}};
  EXPECT_THROW(cmd_sweep(resolve_config(user)), ConfigError);
  user["sweep"] = {{"parameter", "defense.noise.mu"}, {"values", json::array()}};
  EXPECT_THROW(cmd_sweep(resolve_config(user)), ConfigError);
  user["sweep"] = {{"parameter", "defense.noise.nu"}, {"values", {1.0}}};
  EXPECT_THROW(cmd_sweep(resolve_config(user)), ConfigError);
  EXPECT_FALSE(fs::exists(dir / "s"));
}

void write_metrics(const fs::path& path, const std::vector<std::vector<std::string>>& rows) {
  io::write_csv(path, {metrics_columns(), rows});
}

std::vector<std::string> row(const std::string& defense, const std::string& acc,
                             const std::string& mse) {
  return {"synthetic", defense, "1", "0", acc, "0.5", mse, "0.1", "12", "0.125"};
}

TEST(Plot, SeriesLegendAndDeterminism) {
  TempDir dir;
  write_metrics(dir / "a.csv", {row("none", "0.9", "0.5"), row("dp_sgd", "0.7", "1.5")});
  write_metrics(dir / "b.csv", {row("proposed_fixed", "0.85", "2.5"), row("none", "0.8", "0.6")});
  cmd_plot({dir / "a.csv", dir / "b.csv"}, dir / "p1.svg");
  cmd_plot({dir / "a.csv", dir / "b.csv"}, dir / "p2.svg");
  const auto svg = slurp(dir / "p1.svg");
  EXPECT_EQ(svg, slurp(dir / "p2.svg"));
  std::size_t legends = 0;
  for (auto pos = svg.find("class=\"legend\""); pos != std::string::npos;
       pos = svg.find("class=\"legend\"", pos + 1)) {
    ++legends;
  }
  EXPECT_EQ(legends, 3u);
  EXPECT_NE(svg.find("MSE"), std::string::npos);
  EXPECT_NE(svg.find("client accuracy"), std::string::npos);
}

TEST(Plot, ErrorsLeaveNoFile) {
  TempDir dir;
  write_metrics(dir / "empty.csv", {});
  EXPECT_THROW(cmd_plot({dir / "empty.csv"}, dir / "e.svg"), Error);
  EXPECT_FALSE(fs::exists(dir / "e.svg"));
  auto header = metrics_columns();
  auto bad_row = row("none", "0.5", "1");
  header.erase(header.begin() + 6);
  bad_row.erase(bad_row.begin() + 6);
  io::write_csv(dir / "bad.csv", {header, {bad_row}});
  try {
    cmd_plot({dir / "bad.csv"}, dir / "b.svg");
    ADD_FAILURE() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("recon_mse_norm"), std::string::npos) << e.what();
  }
  EXPECT_FALSE(fs::exists(dir / "b.svg"));
}

#ifdef FEDSHIELD_CLI_PATH
int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd =
      std::string(FEDSHIELD_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, SchemaViolationExitsWithCodeTwo) {
  TempDir dir;
  write_text(dir / "c.json", R"({"federation": {"rounds": "ten"}})");
  EXPECT_EQ(run_cli("run --config " + (dir / "c.json").string(), dir / "log"), 2);
  EXPECT_NE(slurp(dir / "log").find("federation.rounds"), std::string::npos) << slurp(dir / "log");
  write_text(dir / "p.json", "{}");
  EXPECT_EQ(run_cli("pretrain --config " + (dir / "p.json").string() + " --out " +
                        (dir / "p").string(),
                    dir / "log2"),
            2);
  EXPECT_NE(run_cli("run --profile huge", dir / "log3"), 0);
  EXPECT_NE(run_cli("", dir / "log4"), 0);
}

TEST(Cli, RunWithFlagsWritesMetrics) {
  TempDir dir;
  json user = tiny_user("none", dir / "ignored");
  write_text(dir / "c.json", user.dump());
  EXPECT_EQ(run_cli("run --config " + (dir / "c.json").string() + " --seed 4 --threads 1 --out " +
                        (dir / "out").string(),
                    dir / "log"),
            0)
      << slurp(dir / "log");
  const auto table = io::read_csv(dir / "out" / "metrics.csv");
  ASSERT_EQ(table.rows.size(), 1u);
  EXPECT_EQ(table.rows[0][3], "4");
  EXPECT_FALSE(fs::exists(dir / "ignored"));
  EXPECT_EQ(run_cli("plot " + (dir / "out" / "metrics.csv").string() + " --out " +
                        (dir / "p.svg").string(),
                    dir / "log2"),
            0);
  EXPECT_TRUE(fs::exists(dir / "p.svg"));
}
#endif

}  // namespace
}  // namespace fedshield::experiment
