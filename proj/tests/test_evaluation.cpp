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

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "gume/evaluation.hpp"

using namespace gume;

namespace {

// Ten users, item i is in the train set of users 0..9-i, so degrees run 10..1.
std::vector<Interaction> staircase() {
  std::vector<Interaction> out;
  for (std::uint32_t i = 0; i < 10; ++i)
    for (std::uint32_t u = 0; u + i < 10; ++u) out.push_back({u, i, Split::kTrain});
  return out;
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("per-user metrics") {
  const std::vector<std::uint32_t> ranked{4, 7, 1};
  const std::vector<std::uint32_t> both{4, 7};
  CHECK(recall_at_k(ranked, both, 2) == 1.0);
  CHECK(ndcg_at_k(ranked, both, 2) == 1.0);
  const std::vector<std::uint32_t> second{7};
  CHECK(recall_at_k(ranked, second, 2) == 1.0);
  CHECK(std::abs(ndcg_at_k(ranked, second, 2) - 1.0 / std::log2(3.0)) < 1e-15);
  CHECK(ndcg_at_k(ranked, second, 2) == doctest::Approx(0.63093).epsilon(1e-5));
  const std::vector<std::uint32_t> outside{1};
  CHECK(recall_at_k(ranked, outside, 2) == 0.0);
  CHECK(ndcg_at_k(ranked, outside, 2) == 0.0);
}

TEST_CASE("top_k breaks ties by index and skips masked items") {
  const std::vector<double> s{0.5, 0.9, 0.5, 0.9, 0.1};
  CHECK(top_k(s, 3) == std::vector<std::uint32_t>{1, 3, 0});
  const std::vector<std::uint32_t> mask{1, 2};
  CHECK(top_k(s, 3, mask) == std::vector<std::uint32_t>{3, 0, 4});
  CHECK(top_k(s, 10).size() == 5);
}

TEST_CASE("metrics agree with brute-force ranking") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n_items = 3 + rng() % 6;
    const std::size_t n_users = 2 + rng() % 5;
    const auto ds = fixtures::random_dataset(n_users, n_items, rng());
    // Coarse scores so that ties occur.
    Matrix scores(static_cast<Eigen::Index>(n_users), static_cast<Eigen::Index>(n_items));
    for (Eigen::Index k = 0; k < scores.size(); ++k) scores.data()[k] = static_cast<double>(rng() % 4);
    for (auto split : {Split::kTest, Split::kValid}) {
      if (ds.count(split) == 0) {
        CHECK_THROWS_AS(rank_and_score(scores, ds, split), ValidationError);
        continue;
      }
      const auto report = rank_and_score(scores, ds, split, {1, 2, 3, 5});
      for (std::size_t k : {1, 2, 3, 5}) {
        double rsum = 0, nsum = 0;
        std::size_t users = 0;
        for (std::uint32_t u = 0; u < n_users; ++u) {
          const auto rel = ds.user_items(u, split);
          if (rel.empty()) continue;
          std::vector<std::uint32_t> candidates;
          for (std::uint32_t i = 0; i < n_items; ++i) {
            const bool masked = ds.has_interaction(u, i, Split::kTrain) ||
                                (split == Split::kTest && ds.has_interaction(u, i, Split::kValid));
            if (!masked) candidates.push_back(i);
          }
          std::vector<double> row(n_items);
          for (std::size_t i = 0; i < n_items; ++i) row[i] = scores(u, static_cast<Eigen::Index>(i));
          const auto [r, n] = oracle::recall_ndcg(oracle::brute_ranking(row, candidates),
                                                  std::vector<std::uint32_t>(rel.begin(), rel.end()), k);
          rsum += r;
          nsum += n;
          ++users;
        }
        if (users == 0) continue;
        CHECK(std::abs(report.recall(k) - rsum / static_cast<double>(users)) < 1e-12);
        CHECK(std::abs(report.ndcg(k) - nsum / static_cast<double>(users)) < 1e-12);
      }
    }
  }
}

TEST_CASE("recall grows with K, NDCG stays within [0, 1], masked items never ranked") {
  std::mt19937_64 rng(2);
  const auto ds = fixtures::random_dataset(30, 40, 3);
  const Matrix scores = oracle::random_matrix(30, 40, rng);
  for (std::uint32_t u = 0; u < 30; ++u) {
    const auto rel = ds.user_items(u, Split::kTest);
    std::vector<std::uint32_t> mask;
    for (auto s : {Split::kTrain, Split::kValid})
      for (auto i : ds.user_items(u, s)) mask.push_back(i);
    std::sort(mask.begin(), mask.end());
    std::vector<double> row(scores.row(u).data(), scores.row(u).data() + 40);
    const auto ranked = top_k(row, 40, mask);
    for (auto i : ranked) CHECK_FALSE(std::binary_search(mask.begin(), mask.end(), i));
    if (rel.empty()) continue;
    double prev = 0;
    for (std::size_t k = 1; k <= ranked.size(); ++k) {
      const double r = recall_at_k(ranked, rel, k);
      CHECK(r >= prev);
      prev = r;
      const double n = ndcg_at_k(ranked, rel, k);
      CHECK(n >= 0.0);
      CHECK(n <= 1.0 + 1e-15);
    }
    // Relevant items promoted to the top give NDCG exactly 1.
    std::vector<double> boosted = row;
    for (auto i : rel) boosted[i] += 100.0;
    CHECK(std::abs(ndcg_at_k(top_k(boosted, 40, mask), rel, 20) - 1.0) < 1e-15);
  }
}

TEST_CASE("degree groups") {
  const InteractionDataset ds(10, 10, staircase());
  const auto g = degree_groups(ds);
  REQUIRE(g.size() == 5);
  CHECK(g[0] == std::vector<std::uint32_t>{0, 1});
  CHECK(g[4] == std::vector<std::uint32_t>{8, 9});
  const InteractionDataset odd(1, 7, {{0, 0, Split::kTrain}});
  CHECK(degree_groups(odd).back().size() == 3);
  CHECK_THROWS_AS(degree_groups(InteractionDataset(1, 4, {{0, 0, Split::kTrain}})), ConfigError);
}

TEST_CASE("group metrics restrict relevance to the group") {
  auto rows = staircase();
  rows.push_back({9, 1, Split::kTest});
  const InteractionDataset ds(10, 10, rows);
  const auto report = rank_and_score(Matrix(Matrix::Zero(10, 10)), ds);
  REQUIRE(report.groups.size() == 5);
  CHECK(report.groups[0].n_users == 1);
  CHECK(report.groups[0].recall.has_value());
  CHECK(*report.groups[0].recall == 1.0);
  for (std::size_t g = 1; g < 5; ++g) {
    CHECK(report.groups[g].n_users == 0);
    CHECK_FALSE(report.groups[g].recall.has_value());
    CHECK_FALSE(report.groups[g].ndcg.has_value());
  }
  CHECK(group_tsv(report).find("NA") != std::string::npos);
  CHECK(report.groups[0].min_degree == 9);
  CHECK(report.groups[0].max_degree == 10);
}

TEST_CASE("comparison tables") {
  const auto ds = fixtures::random_dataset(20, 12, 4);
  const auto a = rank_and_score(popularity_scorer(ds), ds);
  const std::vector<std::pair<std::string, MetricsReport>> same{{"a", a}, {"b", a}};
  const auto t = compare_runs(same);
  REQUIRE(t.json.size() == 2);
  std::size_t deltas = 0;
  for (const auto& row : t.json)
    for (const auto& [key, value] : row.items())
      if (key.ends_with("_delta") && !value.is_null()) {
        CHECK(value.get<double>() == 0.0);
        ++deltas;
      }
  CHECK(deltas >= 4);
  const std::vector<std::pair<std::string, MetricsReport>> one{{"a", a}};
  CHECK_THROWS_AS(compare_runs(one), ValidationError);
  CHECK(MetricsReport::from_json(a.to_json()).to_json() == a.to_json());
  const std::vector<MetricsReport> reps{a, a};
  CHECK(average_reports(reps).recall(20) == a.recall(20));
}

TEST_CASE("ranking the train split is rejected") {
  const auto ds = fixtures::random_dataset(5, 8, 1);
  CHECK_THROWS_AS(rank_and_score(Matrix(Matrix::Zero(5, 8)), ds, Split::kTrain), ValidationError);
  Matrix bad = Matrix::Zero(5, 8);
  bad(0, 0) = NAN;
  CHECK_THROWS(rank_and_score(bad, ds));
}

}  // TEST_SUITE
