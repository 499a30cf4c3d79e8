// Copyright 2026 The GUME Authors.
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

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "gume/cli.hpp"

using namespace gume;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

int run(std::vector<std::string> args) { return dispatch(args); }

// A small synthetic data directory shared by the tests below.
const fs::path& data_dir() {
  static fixtures::TempDir dir("cli_data");
  static const bool made = [] {
    const int rc = run({"synth", "--out", (dir / "d").string(), "--users", "60", "--items", "40", "--seed", "3"});
    REQUIRE(rc == 0);
    return true;
  }();
  (void)made;
  static const fs::path path = dir / "d";
  return path;
}

const std::vector<std::string> kQuick{"--preset", "synthetic", "--epochs", "3", "--dim", "8"};

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("exit codes") {
  CHECK(run({}) == 1);
  CHECK(run({"frobnicate"}) == 1);
  CHECK(run({"train", "--bogus"}) == 1);
  CHECK(run({"--help"}) == 0);
  fixtures::TempDir out("cli_rc");
  CHECK(run({"train", "--data", (out / "absent").string(), "--out", (out / "o").string()}) == 2);
  CHECK(run(with({"train", "--data", data_dir().string(), "--out", (out / "o").string(), "--alpha", "-1"}, kQuick)) == 2);
  CHECK(run(with({"train", "--data", data_dir().string(), "--out", (out / "o").string(), "--lr", "1e200"}, kQuick)) == 3);
  if (const char* bin = std::getenv("GUME_BIN")) {
    const std::string cmd = std::string(bin) + " frobnicate > /dev/null 2>&1";
    CHECK(WEXITSTATUS(std::system(cmd.c_str())) == 1);
  }
}

TEST_CASE("config precedence: flag over file over preset") {
  fixtures::TempDir dir("cli_cfg");
  std::ofstream(dir / "c.json") << R"({"alpha": 0.5, "beta": 0.25, "embedding_dim": 12})";
  const auto c = resolve_config("synthetic", dir / "c.json", nlohmann::json{{"alpha", 0.125}});
  CHECK(c.objective.alpha == 0.125);
  CHECK(c.objective.beta == 0.25);
  CHECK(c.embedding_dim == 12);
  CHECK(c.batch_size == preset("synthetic").batch_size);
  CHECK(c.objective.gamma == preset("synthetic").objective.gamma);
  std::ofstream(dir / "typo.json") << R"({"alhpa": 0.5})";
  CHECK_THROWS_AS(resolve_config("default", dir / "typo.json", {}), ConfigError);
}

TEST_CASE("grid enumeration") {
  const auto all = enumerate_grid(TrainConfig{}, GridSpec{});
  CHECK(all.size() == 750);
  CHECK(all.front().objective.alpha == 1e-4);
  CHECK(all.back().objective.tau == 1.0);
  GridSpec one{{0.1}, {0.01}, {0.001}, {0.4}, 2};
  const auto single = enumerate_grid(TrainConfig{}, one);
  REQUIRE(single.size() == 1);
  CHECK(single[0].max_epochs == 2);

  const auto loaded = load_data(locate_data(data_dir()));
  TrainConfig base = preset("synthetic");
  base.embedding_dim = 8;
  const auto result = grid_search(loaded.dataset, loaded.features, base, one);
  REQUIRE(result.leaderboard.size() == 1);
  CHECK(result.best().config.objective.alpha == 0.1);
  CHECK(result.best().config.objective.tau == 0.4);

  fixtures::TempDir out("cli_grid");
  CHECK(run({"grid", "--data", data_dir().string(), "--out", (out / "g").string(), "--dry-run"}) == 0);
  CHECK(fs::exists(out / "g" / "manifest.json"));
}

TEST_CASE("synth and prepare write their files") {
  const auto& d = data_dir();
  for (const char* f : {"interactions.tsv", "features.json", "users.tsv", "items.tsv", "stats.json", "manifest.json"})
    CHECK(fs::exists(d / f));
  fixtures::TempDir out("cli_prep");
  REQUIRE(run({"prepare", "--data", d.string(), "--out", (out / "p").string(), "--k", "5"}) == 0);
  for (const char* f : {"visual.graph", "textual.graph", "enhanced.graph", "neighbors.tsv", "manifest.json"})
    CHECK(fs::exists(out / "p" / f));
  // Reproducible bit for bit.
  REQUIRE(run({"prepare", "--data", d.string(), "--out", (out / "q").string(), "--k", "5"}) == 0);
  CHECK(slurp(out / "p" / "enhanced.graph") == slurp(out / "q" / "enhanced.graph"));
  const auto g = SparseGraph::load(out / "p" / "visual.graph");
  CHECK(g.n_rows() == 40);
}

TEST_CASE("train twice, evaluate, tail report") {
  fixtures::TempDir out("cli_train");
  const auto args = [&](const std::string& name) {
    return with({"train", "--data", data_dir().string(), "--out", (out / name).string(), "--seed", "7"}, kQuick);
  };
  REQUIRE(run(args("a")) == 0);
  REQUIRE(run(args("b")) == 0);
  CHECK(slurp(out / "a" / "train_report.jsonl") == slurp(out / "b" / "train_report.jsonl"));
  CHECK(slurp(out / "a" / "metrics.json") == slurp(out / "b" / "metrics.json"));
  for (const char* f : {"config.json", "summary.json", "metrics.json", "tail_groups.tsv", "manifest.json"})
    CHECK(fs::exists(out / "a" / f));
  CHECK(fs::exists(out / "a" / "checkpoint" / "manifest.json"));
  CHECK(read_json(out / "a" / "config.json")["seed"] == 7);
  const auto manifest = read_json(out / "a" / "manifest.json");
  CHECK(manifest["run_id"] == read_json(out / "b" / "manifest.json")["run_id"]);
  CHECK(manifest["seed"] == 7);

  REQUIRE(run({"evaluate", "--data", data_dir().string(), "--checkpoint", (out / "a" / "checkpoint").string(), "--out",
               (out / "e").string()}) == 0);
  CHECK(read_json(out / "e" / "metrics.json") == read_json(out / "a" / "metrics.json"));
  CHECK(fs::exists(out / "e" / "comparison.tsv"));
  CHECK(fs::exists(out / "e" / "manifest.json"));

  REQUIRE(run({"tail-report", "--data", data_dir().string(), "--checkpoint", (out / "a" / "checkpoint").string(),
               "--out", (out / "t").string()}) == 0);
  CHECK(fs::exists(out / "t" / "tail_report.json"));
  CHECK(fs::exists(out / "t" / "manifest.json"));
}

TEST_CASE("ablate trains the full model and three variants") {
  fixtures::TempDir out("cli_ablate");
  REQUIRE(run(with({"ablate", "--data", data_dir().string(), "--out", (out / "a").string(), "--variants", "ge,al,um"},
                   kQuick)) == 0);
  const auto summary = read_json(out / "a" / "ablation.json");
  CHECK(fs::exists(out / "a" / "comparison.tsv"));
  CHECK(fs::exists(out / "a" / "manifest.json"));
  std::ifstream log(out / "a" / "ablation_log.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(log, line);) lines += line.empty() ? 0 : 1;
  CHECK(lines > 0);
  const auto cmp = slurp(out / "a" / "comparison.tsv");
  for (const char* label : {"full", "w/o_ge", "w/o_al", "w/o_um"}) CHECK(cmp.find(label) != std::string::npos);
  CHECK(run(with({"ablate", "--data", data_dir().string(), "--out", (out / "b").string(), "--variants", "xx"}, kQuick)) != 0);
}

TEST_CASE("gradcheck subcommand") {
  fixtures::TempDir out("cli_gc");
  CHECK(run({"gradcheck", "--out", (out / "g").string()}) == 0);
  CHECK(read_json(out / "g" / "gradcheck.json")["max_rel_error"].get<double>() < 1e-4);
  CHECK(fs::exists(out / "g" / "manifest.json"));
  CHECK(run({"gradcheck", "--step", "0.5", "--out", (out / "h").string()}) == 2);
}

TEST_CASE("thread cap") {
  fixtures::TempDir out("cli_threads");
  setenv("GUME_THREADS", "zero", 1);
  CHECK(run({"gradcheck", "--out", (out / "a").string()}) == 1);
  setenv("GUME_THREADS", "2", 1);
  CHECK(run({"gradcheck", "--out", (out / "b").string()}) == 0);
  unsetenv("GUME_THREADS");
}

TEST_CASE("manifest hashing") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
}

}  // TEST_SUITE
