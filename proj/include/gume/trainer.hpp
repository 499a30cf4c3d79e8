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
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gume/common.hpp"
#include "gume/dataio.hpp"
#include "gume/encoders.hpp"
#include "gume/evaluation.hpp"
#include "gume/graphs.hpp"
#include "gume/model.hpp"
#include "gume/objectives.hpp"

namespace gume {

struct TrainConfig {
  std::size_t embedding_dim = 64;
  double learning_rate = 1e-3;
  std::size_t max_epochs = 1000;
  std::size_t early_stop_patience = 20;
  std::size_t batch_size = 2048;
  std::size_t ui_layers = 3;
  std::size_t item_graph_layers = 1;
  std::size_t knn_k = 10;
  ObjectiveWeights objective;
  UserAggregation user_agg = UserAggregation::kSum;
  bool no_graph_enhancement = false;
  bool no_alignment = false;
  bool no_user_modality = false;
  std::uint64_t seed = 1;
  bool full_batch = false;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  // Throws ConfigError on out-of-range values.
  void validate() const;
  ModelOptions model_options() const;

  nlohmann::json to_json() const;
  // Applies the keys of `j` on top of `base`. Unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::filesystem::path& path, TrainConfig base);
  static TrainConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// Named settings: "default", "synthetic", "baby", "sports", "clothing", "electronics".
TrainConfig preset(std::string_view name);
std::vector<std::string> preset_names();

// Effective config after the ablation switches: alignment off zeroes alpha and
// beta, user-modality off zeroes gamma. Graph enhancement is honoured when the
// graphs are built.
TrainConfig apply_ablation(TrainConfig config);

// Xavier-uniform for weight matrices and embeddings, zero for biases.
ParameterSet init_params(const TrainConfig& config, std::size_t n_users, std::size_t n_items,
                         std::span<const ModalityFeatureSet> features);

class Adam {
 public:
  Adam(const ParameterSet& shapes, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
       double epsilon = 1e-8);
  void step(ParameterSet& params, const ParameterSet& grads);
  std::size_t steps() const { return t_; }

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  std::size_t t_ = 0;
  ParameterSet m_;
  ParameterSet v_;
};

inline constexpr std::size_t kNegativeAttempts = 100;

// Uniform draw among items the user has no train interaction with.
std::uint32_t sample_negative(const InteractionDataset& dataset, std::uint32_t user, std::mt19937_64& rng,
                              std::size_t attempts = kNegativeAttempts);

// Every train interaction, shuffled, each with one sampled negative.
TripleBatch sample_epoch(const InteractionDataset& dataset, std::mt19937_64& rng);

// Scores for any user block from a forward state.
ScoreFn state_scorer(const ForwardState& state);

struct EpochRecord {
  std::size_t epoch = 0;
  LossBreakdown loss;  // mean over batches
  double valid_recall = 0.0;
  double valid_ndcg = 0.0;
  bool improved = false;

  nlohmann::json to_json() const;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_valid_recall = -1.0;
  std::size_t stopping_epoch = 0;
  std::string best_checkpoint_id;

  nlohmann::json summary_json() const;
  void write_jsonl(std::ostream& out) const;
};

struct TrainResult {
  TrainReport report;
  ParameterSet best_params;
};

// Everything one training run consumes.
struct TrainingData {
  const InteractionDataset* dataset = nullptr;
  std::span<const ModalityFeatureSet> features;
  const GraphBundle* graphs = nullptr;
};

// `epoch_log`, when given, receives one JSON line per epoch as it completes.
TrainResult train(const TrainingData& data, const TrainConfig& config, std::ostream* epoch_log = nullptr);

// Builds graphs honouring the graph-enhancement switch, then trains.
TrainResult train(const InteractionDataset& dataset, std::span<const ModalityFeatureSet> features,
                  const TrainConfig& config, std::ostream* epoch_log = nullptr);

// Objective value and gradient for fixed (batch, seed).
struct ObjectiveEval {
  LossBreakdown loss;
  ParameterSet grad;
};
ObjectiveEval evaluate_objective(const ParameterSet& params, const ModelInputs& inputs, const ModelOptions& options,
                                 const ObjectiveWeights& weights, const TripleBatch& batch, std::uint64_t seed);

struct GradcheckSpec {
  std::size_t n_users = 3;
  std::size_t n_items = 4;
  std::size_t d_v = 5;
  std::size_t d_t = 3;
  std::size_t dim = 4;
  std::size_t knn_k = 2;
  std::size_t ui_layers = 2;
  std::size_t item_graph_layers = 1;
  std::size_t n_entries = 60;
  double h = 1e-5;
  std::uint64_t seed = 7;
  ObjectiveWeights weights{0.5, 0.5, 0.5, 0.1, 0.5, std::nullopt, std::nullopt, true};
  // Only the L2 term (no BPR, no contrastive terms).
  bool regularization_only = false;
  UserAggregation user_agg = UserAggregation::kSum;
};

struct GradcheckEntry {
  std::string tensor;
  Eigen::Index row = 0;
  Eigen::Index col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0.0;

  bool passed(double tolerance = 1e-4) const { return max_rel_error < tolerance; }
  nlohmann::json to_json() const;
};

// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-7);

GradcheckReport gradcheck(const GradcheckSpec& spec);

// Directory with config.json, manifest.json and one raw little-endian file per tensor.
void save_checkpoint(const std::filesystem::path& dir, const ParameterSet& params, const TrainConfig& config,
                     const std::string& dtype = "float64-le");

struct Checkpoint {
  ParameterSet params;
  TrainConfig config;
};
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace gume
