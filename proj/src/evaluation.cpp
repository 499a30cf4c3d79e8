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

#include "gume/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

namespace gume {

namespace {

constexpr std::size_t kUserBlock = 1024;

std::string format_metric(const std::optional<double>& v) {
  return v ? fmt::format("{:.6f}", *v) : std::string("NA");
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> optional_from(const nlohmann::json& v) {
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

std::vector<std::uint32_t> relevant_in(std::span<const std::uint32_t> relevant, const std::vector<bool>& in_group) {
  std::vector<std::uint32_t> out;
  for (auto item : relevant) {
    if (in_group[item]) out.push_back(item);
  }
  return out;
}

}  // namespace

double MetricsReport::recall(std::size_t k) const {
  for (const auto& m : at_k) {
    if (m.k == k) return m.recall;
  }
  throw ValidationError(fmt::format("no metrics recorded at K={}", k));
}

double MetricsReport::ndcg(std::size_t k) const {
  for (const auto& m : at_k) {
    if (m.k == k) return m.ndcg;
  }
  throw ValidationError(fmt::format("no metrics recorded at K={}", k));
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["split"] = split == Split::kTest ? "test" : (split == Split::kValid ? "valid" : "train");
  j["n_users"] = n_users;
  for (const auto& m : at_k) {
    j["recall@" + std::to_string(m.k)] = m.recall;
    j["ndcg@" + std::to_string(m.k)] = m.ndcg;
  }
  j["group_k"] = group_k;
  j["groups"] = nlohmann::json::array();
  for (const auto& g : groups) {
    j["groups"].push_back({{"group", g.group},
                           {"n_items", g.n_items},
                           {"n_users", g.n_users},
                           {"min_degree", g.min_degree},
                           {"max_degree", g.max_degree},
                           {"recall", optional_json(g.recall)},
                           {"ndcg", optional_json(g.ndcg)}});
  }
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  const auto split = j.at("split").get<std::string>();
  r.split = split == "test" ? Split::kTest : (split == "valid" ? Split::kValid : Split::kTrain);
  r.n_users = j.at("n_users").get<std::size_t>();
  r.group_k = j.value("group_k", std::size_t{20});
  for (const auto& [key, value] : j.items()) {
    if (key.rfind("recall@", 0) != 0) continue;
    const auto k = static_cast<std::size_t>(std::stoul(key.substr(7)));
    r.at_k.push_back({k, value.get<double>(), j.at("ndcg@" + std::to_string(k)).get<double>()});
  }
  std::sort(r.at_k.begin(), r.at_k.end(), [](const KMetrics& a, const KMetrics& b) { return a.k < b.k; });
  for (const auto& g : j.value("groups", nlohmann::json::array())) {
    r.groups.push_back({g.at("group").get<std::size_t>(), g.at("n_items").get<std::size_t>(),
                        g.at("n_users").get<std::size_t>(), g.at("min_degree").get<std::size_t>(),
                        g.at("max_degree").get<std::size_t>(), optional_from(g.at("recall")),
                        optional_from(g.at("ndcg"))});
  }
  return r;
}

std::vector<std::uint32_t> top_k(std::span<const double> scores, std::size_t k, std::span<const std::uint32_t> masked) {
  std::vector<std::uint32_t> candidates;
  candidates.reserve(scores.size());
  std::size_t m = 0;
  for (std::uint32_t i = 0; i < scores.size(); ++i) {
    while (m < masked.size() && masked[m] < i) ++m;
    if (m < masked.size() && masked[m] == i) continue;
    candidates.push_back(i);
  }
  const auto better = [&](std::uint32_t a, std::uint32_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  k = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k), candidates.end(), better);
  candidates.resize(k);
  return candidates;
}

double recall_at_k(std::span<const std::uint32_t> ranked, std::span<const std::uint32_t> relevant, std::size_t k) {
  if (relevant.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
    if (std::binary_search(relevant.begin(), relevant.end(), ranked[r])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double ndcg_at_k(std::span<const std::uint32_t> ranked, std::span<const std::uint32_t> relevant, std::size_t k) {
  if (relevant.empty()) return 0.0;
  double dcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
    if (std::binary_search(relevant.begin(), relevant.end(), ranked[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  }
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, relevant.size()); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return dcg / idcg;
}

std::vector<std::vector<std::uint32_t>> degree_groups(const InteractionDataset& dataset, std::size_t n_groups) {
  const std::size_t n = dataset.n_items();
  if (n_groups == 0 || n < n_groups) {
    throw ConfigError(fmt::format("degree groups need at least {} items, got {}", n_groups, n));
  }
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0U);
  const auto& degree = dataset.item_degree();
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return degree[a] > degree[b]; });
  const std::size_t size = n / n_groups;
  std::vector<std::vector<std::uint32_t>> groups(n_groups);
  for (std::size_t g = 0; g < n_groups; ++g) {
    const std::size_t begin = g * size;
    const std::size_t end = g + 1 == n_groups ? n : begin + size;
    groups[g].assign(order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end));
    std::sort(groups[g].begin(), groups[g].end());
  }
  return groups;
}

MetricsReport rank_and_score(const ScoreFn& scores, const InteractionDataset& dataset, Split split,
                             std::vector<std::size_t> ks, std::size_t group_k) {
  if (split == Split::kTrain) throw ValidationError("ranking is evaluated on the valid or test split");
  if (ks.empty()) throw ConfigError("at least one K is required");
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  if (ks.front() == 0 || group_k == 0) throw ConfigError("K must be positive");
  const std::size_t max_k = std::max(ks.back(), group_k);

  const bool with_groups = dataset.n_items() >= kNumDegreeGroups;
  std::vector<std::vector<std::uint32_t>> groups;
  std::vector<std::vector<bool>> in_group;
  if (with_groups) {
    groups = degree_groups(dataset);
    for (const auto& g : groups) {
      std::vector<bool> mask(dataset.n_items(), false);
      for (auto i : g) mask[i] = true;
      in_group.push_back(std::move(mask));
    }
  }

  std::vector<std::uint32_t> users;
  for (std::uint32_t u = 0; u < dataset.n_users(); ++u) {
    if (!dataset.user_items(u, split).empty()) users.push_back(u);
  }
  if (users.empty()) throw ValidationError("no user has an interaction in the evaluated split");

  std::vector<double> recall_sum(ks.size(), 0.0);
  std::vector<double> ndcg_sum(ks.size(), 0.0);
  std::vector<double> g_recall(groups.size(), 0.0);
  std::vector<double> g_ndcg(groups.size(), 0.0);
  std::vector<std::size_t> g_users(groups.size(), 0);

  for (std::size_t start = 0; start < users.size(); start += kUserBlock) {
    const std::size_t end = std::min(users.size(), start + kUserBlock);
    const std::span<const std::uint32_t> block(users.data() + start, end - start);
    const Matrix s = scores(block);
    if (s.rows() != static_cast<Eigen::Index>(block.size()) || s.cols() != static_cast<Eigen::Index>(dataset.n_items())) {
      throw ShapeError("score block has the wrong shape");
    }
    if (!s.allFinite()) throw ValidationError("non-finite scores");
    for (std::size_t r = 0; r < block.size(); ++r) {
      const auto u = block[r];
      std::vector<std::uint32_t> masked(dataset.user_items(u, Split::kTrain).begin(),
                                        dataset.user_items(u, Split::kTrain).end());
      if (split == Split::kTest) {
        const auto valid = dataset.user_items(u, Split::kValid);
        masked.insert(masked.end(), valid.begin(), valid.end());
        std::sort(masked.begin(), masked.end());
      }
      const std::span<const double> row(s.data() + r * static_cast<std::size_t>(s.cols()),
                                        static_cast<std::size_t>(s.cols()));
      const auto ranked = top_k(row, max_k, masked);
      const auto relevant = dataset.user_items(u, split);
      for (std::size_t q = 0; q < ks.size(); ++q) {
        recall_sum[q] += recall_at_k(ranked, relevant, ks[q]);
        ndcg_sum[q] += ndcg_at_k(ranked, relevant, ks[q]);
      }
      for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto rel_g = relevant_in(relevant, in_group[g]);
        if (rel_g.empty()) continue;
        ++g_users[g];
        g_recall[g] += recall_at_k(ranked, rel_g, group_k);
        g_ndcg[g] += ndcg_at_k(ranked, rel_g, group_k);
      }
    }
  }

  MetricsReport report;
  report.split = split;
  report.n_users = users.size();
  report.group_k = group_k;
  const auto n = static_cast<double>(users.size());
  for (std::size_t q = 0; q < ks.size(); ++q) report.at_k.push_back({ks[q], recall_sum[q] / n, ndcg_sum[q] / n});
  const auto& degree = dataset.item_degree();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    GroupMetrics gm;
    gm.group = g + 1;
    gm.n_items = groups[g].size();
    gm.n_users = g_users[g];
    gm.min_degree = std::numeric_limits<std::size_t>::max();
    for (auto i : groups[g]) {
      gm.min_degree = std::min(gm.min_degree, degree[i]);
      gm.max_degree = std::max(gm.max_degree, degree[i]);
    }
    if (g_users[g] > 0) {
      gm.recall = g_recall[g] / static_cast<double>(g_users[g]);
      gm.ndcg = g_ndcg[g] / static_cast<double>(g_users[g]);
    }
    report.groups.push_back(gm);
  }
  return report;
}

MetricsReport rank_and_score(const Matrix& scores, const InteractionDataset& dataset, Split split,
                             std::vector<std::size_t> ks, std::size_t group_k) {
  if (scores.rows() != static_cast<Eigen::Index>(dataset.n_users())) throw ShapeError("score matrix needs one row per user");
  const ScoreFn fn = [&](std::span<const std::uint32_t> users) {
    Matrix out(static_cast<Eigen::Index>(users.size()), scores.cols());
    for (std::size_t r = 0; r < users.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = scores.row(users[r]);
    return out;
  };
  return rank_and_score(fn, dataset, split, std::move(ks), group_k);
}

std::vector<GroupMetrics> tail_group_metrics(const ScoreFn& scores, const InteractionDataset& dataset, Split split,
                                             std::size_t k) {
  if (dataset.n_items() < kNumDegreeGroups) {
    throw ConfigError(fmt::format("tail groups need at least {} items", kNumDegreeGroups));
  }
  return rank_and_score(scores, dataset, split, {k}, k).groups;
}

Vector popularity_scores(const InteractionDataset& dataset) {
  Vector out(static_cast<Eigen::Index>(dataset.n_items()));
  for (std::size_t i = 0; i < dataset.n_items(); ++i) out(static_cast<Eigen::Index>(i)) = static_cast<double>(dataset.item_degree()[i]);
  return out;
}

ScoreFn popularity_scorer(const InteractionDataset& dataset) {
  const Eigen::RowVectorXd pop = popularity_scores(dataset).transpose();
  return [pop](std::span<const std::uint32_t> users) {
    return Matrix(pop.replicate(static_cast<Eigen::Index>(users.size()), 1));
  };
}

ComparisonTable compare_runs(std::span<const std::pair<std::string, MetricsReport>> runs) {
  if (runs.size() < 2) throw ValidationError("comparison needs at least two runs");
  // Column set: every K of the first run, then per-group recall/ndcg.
  std::vector<std::pair<std::string, std::function<std::optional<double>(const MetricsReport&)>>> columns;
  for (const auto& m : runs.front().second.at_k) {
    const std::size_t k = m.k;
    columns.emplace_back("recall@" + std::to_string(k), [k](const MetricsReport& r) -> std::optional<double> { return r.recall(k); });
    columns.emplace_back("ndcg@" + std::to_string(k), [k](const MetricsReport& r) -> std::optional<double> { return r.ndcg(k); });
  }
  for (std::size_t g = 0; g < runs.front().second.groups.size(); ++g) {
    const auto gk = std::to_string(runs.front().second.group_k);
    columns.emplace_back("group" + std::to_string(g + 1) + "_recall@" + gk,
                         [g](const MetricsReport& r) -> std::optional<double> {
                           return g < r.groups.size() ? r.groups[g].recall : std::nullopt;
                         });
    columns.emplace_back("group" + std::to_string(g + 1) + "_ndcg@" + gk,
                         [g](const MetricsReport& r) -> std::optional<double> {
                           return g < r.groups.size() ? r.groups[g].ndcg : std::nullopt;
                         });
  }

  ComparisonTable table;
  table.json = nlohmann::json::array();
  std::ostringstream tsv;
  tsv << "run";
  for (const auto& [name, _] : columns) tsv << '\t' << name << '\t' << name << "_delta";
  tsv << '\n';
  const MetricsReport& base = runs.front().second;
  for (const auto& [label, report] : runs) {
    nlohmann::json row{{"run", label}};
    tsv << label;
    for (const auto& [name, get] : columns) {
      const auto value = get(report);
      const auto reference = get(base);
      std::optional<double> delta;
      if (value && reference) {
        if (*reference != 0.0) {
          delta = (*value - *reference) / *reference;
        } else if (*value == 0.0) {
          delta = 0.0;
        }
      }
      row[name] = optional_json(value);
      row[name + "_delta"] = optional_json(delta);
      tsv << '\t' << format_metric(value) << '\t' << format_metric(delta);
    }
    tsv << '\n';
    table.json.push_back(std::move(row));
  }
  table.tsv = tsv.str();
  return table;
}

MetricsReport average_reports(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw ValidationError("nothing to average");
  MetricsReport out = reports.front();
  const auto n = static_cast<double>(reports.size());
  for (auto& m : out.at_k) {
    m.recall = 0.0;
    m.ndcg = 0.0;
    for (const auto& r : reports) {
      m.recall += r.recall(m.k) / n;
      m.ndcg += r.ndcg(m.k) / n;
    }
  }
  for (std::size_t g = 0; g < out.groups.size(); ++g) {
    double recall = 0.0;
    double ndcg = 0.0;
    std::size_t present = 0;
    for (const auto& r : reports) {
      if (g >= r.groups.size() || !r.groups[g].recall) continue;
      recall += *r.groups[g].recall;
      ndcg += *r.groups[g].ndcg;
      ++present;
    }
    out.groups[g].recall = present ? std::optional(recall / static_cast<double>(present)) : std::nullopt;
    out.groups[g].ndcg = present ? std::optional(ndcg / static_cast<double>(present)) : std::nullopt;
  }
  return out;
}

std::string group_csv(const MetricsReport& report) {
  std::string out = fmt::format("group,n_items,n_users,recall@{0},ndcg@{0}\n", report.group_k);
  for (const auto& g : report.groups) {
    out += fmt::format("{},{},{},{},{}\n", g.group, g.n_items, g.n_users, g.recall ? fmt::format("{:.6f}", *g.recall) : "",
                       g.ndcg ? fmt::format("{:.6f}", *g.ndcg) : "");
  }
  return out;
}

std::string group_tsv(const MetricsReport& report) {
  std::string out = fmt::format("group\tn_items\tn_users\tmin_degree\tmax_degree\trecall@{0}\tndcg@{0}\n", report.group_k);
  for (const auto& g : report.groups) {
    out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}\n", g.group, g.n_items, g.n_users, g.min_degree, g.max_degree,
                       format_metric(g.recall), format_metric(g.ndcg));
  }
  return out;
}

}  // namespace gume
