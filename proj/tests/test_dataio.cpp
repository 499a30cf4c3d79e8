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

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "fixtures.hpp"
#include "gume/dataio.hpp"

using namespace gume;

namespace {

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = (static_cast<double>(i + j) / 2.0) + 1.0;
    i = j + 1;
  }
  return rank;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    sab += (a[k] - ma) * (b[k] - mb);
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_SUITE("dataio") {

TEST_CASE("dataset construction validates indices, duplicates and train coverage") {
  CHECK_THROWS_AS(InteractionDataset(1, 1, {{0, 1, Split::kTrain}}), ValidationError);
  CHECK_THROWS_AS(InteractionDataset(1, 2, {{0, 1, Split::kTrain}, {0, 1, Split::kTest}}), ValidationError);
  CHECK_THROWS_AS(InteractionDataset(1, 2, {{0, 1, Split::kTest}}), ValidationError);
  const InteractionDataset ds(2, 3, {{0, 0, Split::kTrain}, {0, 2, Split::kTest}, {1, 2, Split::kTrain}});
  CHECK(ds.item_degree() == std::vector<std::size_t>{1, 0, 1});
  CHECK(ds.count(Split::kTest) == 1);
  CHECK(ds.has_interaction(0, 2, Split::kTest));
  CHECK_FALSE(ds.has_interaction(0, 2, Split::kTrain));
}

TEST_CASE("interaction files: tokens, column split and line-numbered errors") {
  fixtures::TempDir dir("dataio");
  write_file(dir / "a.tsv", "user_id\titem_id\tsplit\nalice\tx\t0\nbob\ty\t0\nalice\ty\t2\nalice\tx\t1\n");
  const auto ds = load_interactions(dir / "a.tsv", ColumnSplit{});
  CHECK(ds.n_users() == 2);
  CHECK(ds.n_items() == 2);
  CHECK(ds.user_tokens() == std::vector<std::string>{"alice", "bob"});
  CHECK(ds.interactions().size() == 3);  // duplicate pair keeps the first row
  CHECK(ds.has_interaction(0, 1, Split::kTest));

  write_file(dir / "b.tsv", "user_id\titem_id\tsplit\nalice\tx\t0\nbob\ty\t7\n");
  try {
    load_interactions(dir / "b.tsv", ColumnSplit{});
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  write_file(dir / "c.tsv", "user_id\titem_id\nalice\tx\textra\n");
  CHECK_THROWS_AS(load_interactions(dir / "c.tsv", RandomSplit{}), ParseError);
  CHECK_THROWS_AS(load_interactions(dir / "missing.tsv", RandomSplit{}), ValidationError);
}

TEST_CASE("save then load reproduces splits and degrees") {
  const auto ds = fixtures::random_dataset(12, 9, 3);
  fixtures::TempDir dir("roundtrip");
  save_interactions(ds, dir / "i.tsv");
  save_index_maps(ds, dir.path());
  const IndexMaps maps = load_index_maps(dir.path());
  const auto back = load_interactions(dir / "i.tsv", ColumnSplit{}, &maps);
  CHECK(back.interactions() == ds.interactions());
  CHECK(back.item_degree() == ds.item_degree());
}

TEST_CASE("random split partitions every user's interactions and is reproducible") {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  for (std::uint32_t u = 0; u < 30; ++u)
    for (std::uint32_t i = 0; i < 1 + u % 12; ++i) pairs.emplace_back(u, i);
  const RandomSplit policy{42, 0.8, 0.1, 0.1};
  const auto a = assign_random_split(pairs, 30, policy);
  const auto b = assign_random_split(pairs, 30, policy);
  CHECK(a == b);
  std::multiset<std::pair<std::uint32_t, std::uint32_t>> all(pairs.begin(), pairs.end());
  std::multiset<std::pair<std::uint32_t, std::uint32_t>> got;
  for (const auto& x : a) got.emplace(x.user, x.item);
  CHECK(all == got);
  for (const auto& x : a) {
    if (1 + x.user % 12 < 3) CHECK(x.split == Split::kTrain);
  }
  const InteractionDataset ds(30, 12, a);
  for (std::uint32_t u = 0; u < 30; ++u) CHECK(!ds.user_items(u, Split::kTrain).empty());
}

TEST_CASE("feature manifests") {
  const auto ds = fixtures::random_dataset(4, 12, 1);
  fixtures::TempDir dir("features");
  const auto features = fixtures::random_features(12, 5, 3, 2);
  save_features(features, dir.path());
  const auto back = load_features(dir / "features.json", ds);
  REQUIRE(back.size() == 2);
  CHECK(back[0].modality == Modality::kVisual);
  CHECK(back[0].matrix.isApprox(features[0].matrix.cast<float>().cast<double>(), 0.0));

  std::vector<ModalityFeatureSet> ten{{Modality::kVisual, Matrix::Ones(10, 2)}};
  fixtures::TempDir dir2("features10");
  save_features(ten, dir2.path());
  CHECK_THROWS_AS(load_features(dir2 / "features.json", ds), ShapeError);

  ModalityFeatureSet nan{Modality::kTextual, Matrix::Zero(12, 2)};
  nan.matrix(3, 1) = std::nan("");
  CHECK_THROWS_AS(validate_features(nan, 12), ValidationError);
  CHECK_NOTHROW(validate_features({Modality::kVisual, Matrix::Zero(12, 3)}, 12));
}

TEST_CASE("synthetic generator: determinism, long tail, informative features") {
  const SynthConfig config;
  const auto a = synthesize(config);
  const auto b = synthesize(config);
  CHECK(a.dataset.interactions() == b.dataset.interactions());
  CHECK(a.features[0].matrix == b.features[0].matrix);
  CHECK(a.dataset.n_users() == 200);
  CHECK(a.dataset.n_items() == 100);

  // Concentration counted directly from all interactions.
  std::vector<std::size_t> count(100, 0);
  for (const auto& x : a.dataset.interactions()) ++count[x.item];
  std::sort(count.begin(), count.end(), std::greater<>());
  const double head = std::accumulate(count.begin(), count.begin() + 20, 0.0);
  const double total = std::accumulate(count.begin(), count.end(), 0.0);
  CHECK(head / total >= 0.6);

  CHECK(compute_stats(a.dataset).unpopularity == doctest::Approx(0.8));

  std::vector<double> norms;
  std::vector<double> degree;
  for (Eigen::Index i = 0; i < a.item_factors.rows(); ++i) {
    norms.push_back(a.item_factors.row(i).norm());
    degree.push_back(static_cast<double>(a.dataset.item_degree()[static_cast<std::size_t>(i)]));
  }
  CHECK(pearson(average_ranks(norms), average_ranks(degree)) > 0.0);

  SynthConfig clean = config;
  clean.noise_scale = 0.0;
  const auto c = synthesize(clean);
  for (const auto& f : c.features) {
    // Exact linear image: least-squares residual against the factors vanishes.
    const Matrix coef = c.item_factors.colPivHouseholderQr().solve(f.matrix);
    CHECK((c.item_factors * coef - f.matrix).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("dataset statistics") {
  const InteractionDataset one(1, 1, {{0, 0, Split::kTrain}});
  CHECK(head_items(one) == std::vector<std::uint32_t>{0});
  CHECK(compute_stats(one).unpopularity == 0.0);
  // Items 0..4 with train degrees 5,1,1,1,1: head = {0} holds 5/9 of interactions.
  std::vector<Interaction> xs;
  for (std::uint32_t u = 0; u < 5; ++u) xs.push_back({u, 0, Split::kTrain});
  for (std::uint32_t i = 1; i < 5; ++i) xs.push_back({i, i, Split::kTrain});
  const InteractionDataset ds(5, 5, xs);
  const auto st = compute_stats(ds, 0.2, UnpopularityDefinition::kInteractionShare);
  CHECK(st.unpopularity == doctest::Approx(4.0 / 9.0).epsilon(1e-12));
  CHECK(st.unpopularity_item_fraction == doctest::Approx(0.8));
}

}  // TEST_SUITE
