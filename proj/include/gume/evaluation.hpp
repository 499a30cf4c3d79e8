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
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gume/common.hpp"
#include "gume/dataio.hpp"

namespace gume {

struct KMetrics {
  std::size_t k = 0;
  double recall = 0.0;
  double ndcg = 0.0;
};

// Metrics restricted to the relevant items of one degree group. Users without a
// relevant item in the group are left out; with no such user the metrics are null.
struct GroupMetrics {
  std::size_t group = 0;  // 1 = highest degree
  std::size_t n_items = 0;
  std::size_t n_users = 0;
  std::size_t min_degree = 0;
  std::size_t max_degree = 0;
  std::optional<double> recall;
  std::optional<double> ndcg;
};

struct MetricsReport {
  Split split = Split::kTest;
  std::size_t n_users = 0;  // users with at least one relevant item
  std::vector<KMetrics> at_k;
  std::size_t group_k = 20;
  std::vector<GroupMetrics> groups;  // empty when there are fewer than 5 items

  double recall(std::size_t k) const;
  double ndcg(std::size_t k) const;
  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

// Scores for a block of users against every item (rows follow `users`).
using ScoreFn = std::function<Matrix(std::span<const std::uint32_t> users)>;

inline constexpr std::size_t kNumDegreeGroups = 5;

// Top-k item indices by descending score, ties by ascending index; items in
// `masked` (sorted) are skipped.
std::vector<std::uint32_t> top_k(std::span<const double> scores, std::size_t k,
                                 std::span<const std::uint32_t> masked = {});

// Binary-gain metrics of one ranked list against a sorted relevant set.
double recall_at_k(std::span<const std::uint32_t> ranked, std::span<const std::uint32_t> relevant, std::size_t k);
double ndcg_at_k(std::span<const std::uint32_t> ranked, std::span<const std::uint32_t> relevant, std::size_t k);

// Items sorted by train degree (descending, ties by index) cut into equal groups,
// remainder to the last. Fewer items than groups is a ConfigError.
std::vector<std::vector<std::uint32_t>> degree_groups(const InteractionDataset& dataset,
                                                      std::size_t n_groups = kNumDegreeGroups);

// Full ranking. For the test split the user's train and valid items are masked,
// for the valid split only train items.
MetricsReport rank_and_score(const ScoreFn& scores, const InteractionDataset& dataset, Split split = Split::kTest,
                             std::vector<std::size_t> ks = {10, 20}, std::size_t group_k = 20);
MetricsReport rank_and_score(const Matrix& scores, const InteractionDataset& dataset, Split split = Split::kTest,
                             std::vector<std::size_t> ks = {10, 20}, std::size_t group_k = 20);

std::vector<GroupMetrics> tail_group_metrics(const ScoreFn& scores, const InteractionDataset& dataset,
                                             Split split = Split::kTest, std::size_t k = 20);

// Train degree of each item, the same for every user.
Vector popularity_scores(const InteractionDataset& dataset);
ScoreFn popularity_scorer(const InteractionDataset& dataset);

struct ComparisonTable {
  nlohmann::json json;
  std::string tsv;
};

// One row per run, relative deltas against the first run. Needs two runs or more.
ComparisonTable compare_runs(std::span<const std::pair<std::string, MetricsReport>> runs);

// Mean of reports that share K values and grouping (e.g. across seeds).
MetricsReport average_reports(std::span<const MetricsReport> reports);

// group,n_items,n_users,recall,ndcg (plot-ready).
std::string group_csv(const MetricsReport& report);
std::string group_tsv(const MetricsReport& report);

}  // namespace gume
