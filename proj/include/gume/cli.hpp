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

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gume/dataio.hpp"
#include "gume/evaluation.hpp"
#include "gume/trainer.hpp"

namespace gume {

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a_file(const std::filesystem::path& path);

// Written into every output directory.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  nlohmann::json config;
  std::vector<std::pair<std::string, std::string>> input_hashes;  // path, hex digest
  std::uint64_t seed = 0;
  std::string run_id;  // derived from command, config and inputs
  std::string started_at;
  std::string finished_at;

  void add_input(const std::filesystem::path& path);
  void finalize();  // fills run_id and finished_at
  nlohmann::json to_json() const;
  void write(const std::filesystem::path& dir, const std::string& name = "manifest.json") const;
};

// Expected layout: interactions.tsv and features.json inside `dir`.
struct DataDir {
  std::filesystem::path root;
  std::filesystem::path interactions;
  std::filesystem::path features;
};
DataDir locate_data(const std::filesystem::path& dir);

enum class SplitMode { kAuto, kColumn, kRandom };

struct LoadedData {
  InteractionDataset dataset;
  std::vector<ModalityFeatureSet> features;
};
LoadedData load_data(const DataDir& dir, SplitMode mode = SplitMode::kAuto, std::uint64_t split_seed = 0);

// Built-in preset, then the config file, then explicit overrides.
TrainConfig resolve_config(const std::string& preset_name, const std::optional<std::filesystem::path>& file,
                           const nlohmann::json& overrides);

struct VariantRun {
  std::string label;
  std::uint64_t seed = 0;
  TrainReport report;
  MetricsReport test;
};

struct AblationResult {
  std::vector<std::string> labels;           // "full" first
  std::vector<VariantRun> runs;              // label-major, seed-minor
  std::vector<MetricsReport> mean_by_label;  // aligned with labels

  const MetricsReport& mean(const std::string& label) const;
};

// Variant codes: "ge", "al", "um". Each seed trains the full model and one run
// per ablated variant.
AblationResult run_ablation(const InteractionDataset& dataset, std::span<const ModalityFeatureSet> features,
                            const TrainConfig& base, const std::vector<std::string>& variants,
                            const std::vector<std::uint64_t>& seeds, std::ostream* log = nullptr);

// Mean group-k recall over groups [first, last] (1-based, inclusive) that have users.
double tail_recall(const MetricsReport& report, std::size_t first = 4, std::size_t last = 5);

struct GridSpec {
  std::vector<double> alphas{1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  std::vector<double> betas{1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  std::vector<double> gammas{1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  std::vector<double> taus{0.1, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::optional<std::size_t> max_epochs;
};

// Cartesian product in (alpha, beta, gamma, tau) order, tau fastest.
std::vector<TrainConfig> enumerate_grid(const TrainConfig& base, const GridSpec& spec);

struct GridEntry {
  TrainConfig config;
  double valid_recall = 0.0;
  std::size_t best_epoch = 0;
};

struct GridResult {
  std::vector<GridEntry> leaderboard;  // sorted by valid recall, then enumeration order
  const GridEntry& best() const { return leaderboard.front(); }
};

GridResult grid_search(const InteractionDataset& dataset, std::span<const ModalityFeatureSet> features,
                       const TrainConfig& base, const GridSpec& spec, std::ostream* log = nullptr);

// Entry point behind the `gume` executable. Returns the process exit status.
int dispatch(const std::vector<std::string>& args);
int dispatch(int argc, char** argv);

}  // namespace gume
