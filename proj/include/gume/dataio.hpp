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
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "gume/common.hpp"

namespace gume {

enum class Split : std::uint8_t { kTrain = 0, kValid = 1, kTest = 2 };

struct Interaction {
  std::uint32_t user = 0;
  std::uint32_t item = 0;
  Split split = Split::kTrain;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

// Users, items and their deduplicated interactions with a train/valid/test
// assignment. Immutable after construction.
class InteractionDataset {
 public:
  InteractionDataset() = default;

  // Throws ValidationError on out-of-range indices, duplicate pairs or a user
  // whose interactions are all outside the train split.
  InteractionDataset(std::size_t n_users, std::size_t n_items,
                     std::vector<Interaction> interactions,
                     std::vector<std::string> user_tokens = {},
                     std::vector<std::string> item_tokens = {});

  std::size_t n_users() const { return n_users_; }
  std::size_t n_items() const { return n_items_; }
  std::size_t n_nodes() const { return n_users_ + n_items_; }
  const std::vector<Interaction>& interactions() const { return interactions_; }

  // Per-item count of train interactions.
  const std::vector<std::size_t>& item_degree() const { return item_degree_; }

  // Sorted item lists of one user for a split.
  std::span<const std::uint32_t> user_items(std::uint32_t user, Split split) const;
  bool has_interaction(std::uint32_t user, std::uint32_t item, Split split) const;
  std::size_t count(Split split) const;

  const std::vector<std::string>& user_tokens() const { return user_tokens_; }
  const std::vector<std::string>& item_tokens() const { return item_tokens_; }

 private:
  std::size_t n_users_ = 0;
  std::size_t n_items_ = 0;
  std::vector<Interaction> interactions_;
  std::vector<std::size_t> item_degree_;
  // Three CSR layouts (one per split) over users.
  std::vector<std::vector<std::size_t>> offsets_;
  std::vector<std::vector<std::uint32_t>> items_;
  std::vector<std::string> user_tokens_;
  std::vector<std::string> item_tokens_;
};

struct ColumnSplit {};

struct RandomSplit {
  std::uint64_t seed = 0;
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

using SplitPolicy = std::variant<ColumnSplit, RandomSplit>;

// Assigns splits per user. Users with fewer than three interactions keep all
// of them in train; everyone else gets at least one valid and one test
// interaction when the corresponding ratio is positive.
std::vector<Interaction> assign_random_split(std::span<const std::pair<std::uint32_t, std::uint32_t>> pairs,
                                             std::size_t n_users, const RandomSplit& policy);

// Fixed token -> index assignment, as persisted by save_index_maps.
struct IndexMaps {
  std::vector<std::string> user_tokens;  // position = index
  std::vector<std::string> item_tokens;
};

// TSV with header `user_id<TAB>item_id[<TAB>split]`. Tokens are mapped to dense
// indices in order of first appearance, or through `maps` when given (unknown
// tokens are then a parse error). Duplicate pairs keep the first row.
InteractionDataset load_interactions(const std::filesystem::path& path, const SplitPolicy& policy,
                                     const IndexMaps* maps = nullptr);

// Writes the split column so that a ColumnSplit reload reproduces the dataset.
void save_interactions(const InteractionDataset& dataset, const std::filesystem::path& path);

// `users.tsv` and `items.tsv` (token<TAB>index) under `dir`.
void save_index_maps(const InteractionDataset& dataset, const std::filesystem::path& dir);
// Reads `users.tsv` and `items.tsv`; indices must be exactly 0..n-1.
IndexMaps load_index_maps(const std::filesystem::path& dir);

enum class Modality : std::uint8_t { kVisual = 0, kTextual = 1 };

std::string_view to_string(Modality m);
Modality modality_from_string(std::string_view name);

struct ModalityFeatureSet {
  Modality modality = Modality::kVisual;
  Matrix matrix;  // n_items x d_m

  std::size_t dim() const { return static_cast<std::size_t>(matrix.cols()); }
};

// Row count, finiteness and dimension checks.
void validate_features(const ModalityFeatureSet& features, std::size_t n_items);

// Manifest: {"visual": {"path", "rows", "cols", "dtype": "float32-le"}, ...}.
// Relative paths resolve against the manifest's directory. The result is ordered
// visual before textual.
std::vector<ModalityFeatureSet> load_features(const std::filesystem::path& manifest_path,
                                              const InteractionDataset& dataset);

// Writes `<modality>.f32` files plus `features.json` into `dir`.
void save_features(std::span<const ModalityFeatureSet> features, const std::filesystem::path& dir);

struct SynthConfig {
  std::size_t n_users = 200;
  std::size_t n_items = 100;
  std::size_t n_factors = 8;
  std::size_t d_v = 32;
  std::size_t d_t = 16;
  double popularity_exponent = 1.2;
  double noise_scale = 0.1;
  std::uint64_t seed = 1;
  // How strongly a user's latent taste steers item choice relative to popularity.
  double taste_sharpness = 3.0;
  // Interactions per user are min_activity + Poisson(mean_activity - min_activity).
  double mean_activity = 10.0;
  std::size_t min_activity = 5;
};

struct SyntheticData {
  InteractionDataset dataset;
  std::vector<ModalityFeatureSet> features;
  Matrix item_factors;  // n_items x n_factors
  Matrix user_factors;  // n_users x n_factors
  std::vector<double> popularity;  // unnormalized per-item popularity weight
};

SyntheticData synthesize(const SynthConfig& config);

enum class UnpopularityDefinition { kItemFraction, kInteractionShare };

struct DatasetStats {
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::size_t n_behaviors = 0;
  double unpopularity = 0.0;  // per the definition passed to compute_stats
  double unpopularity_item_fraction = 0.0;
  double unpopularity_interaction_share = 0.0;
};

// Head items are the top max(1, round(head_fraction * n_items)) items by train
// degree, ties by ascending index.
std::vector<std::uint32_t> head_items(const InteractionDataset& dataset, double head_fraction = 0.2);

DatasetStats compute_stats(const InteractionDataset& dataset, double head_fraction = 0.2,
                           UnpopularityDefinition definition = UnpopularityDefinition::kItemFraction);

}  // namespace gume
