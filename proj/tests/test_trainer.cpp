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
#include <sstream>

#include <fmt/format.h>

#include "fixtures.hpp"
#include "gume/trainer.hpp"

using namespace gume;

namespace {

const SyntheticData& synthetic() {
  static const SyntheticData data = synthesize(SynthConfig{});
  return data;
}

TrainConfig quick_config(std::size_t epochs) {
  TrainConfig c = preset("synthetic");
  c.embedding_dim = 16;
  c.max_epochs = epochs;
  c.early_stop_patience = epochs;
  return c;
}

bool same_params(const ParameterSet& a, const ParameterSet& b) {
  std::vector<Matrix> left;
  a.for_each([&](const std::string&, const Matrix& t) { left.push_back(t); });
  std::size_t k = 0;
  bool same = true;
  b.for_each([&](const std::string&, const Matrix& t) { same = same && left[k++] == t; });
  return same;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("parameter initialization") {
  const auto feats = fixtures::random_features(30, 8, 6, 1);
  TrainConfig c;
  const auto a = init_params(c, 20, 30, feats);
  const auto b = init_params(c, 20, 30, feats);
  CHECK(same_params(a, b));
  CHECK(a.transforms[0].w2.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 128.0));
  CHECK(std::sqrt(6.0 / 128.0) == doctest::Approx(0.2165).epsilon(1e-4));
  a.for_each([&](const std::string& name, const Matrix& t) {
    const auto leaf = name.substr(name.rfind('.') + 1);
    if (leaf.starts_with('b')) CHECK(t.isZero());
    else CHECK(t.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols())));
  });
  c.seed = 2;
  CHECK_FALSE(same_params(a, init_params(c, 20, 30, feats)));
}

TEST_CASE("predicted scores are inner products of the final representations") {
  const auto ds = fixtures::random_dataset(2, 3, 4, false);
  const auto feats = fixtures::random_features(3, 4, 4, 4);
  const auto inputs = make_model_inputs(feats, build_graphs(ds, feats, 1, true));
  const auto params = fixtures::random_params(2, 3, 3, feats, 5);
  const auto state = forward(params, inputs, ModelOptions{1, 1, UserAggregation::kSum});
  const Matrix s = predict_scores(state);
  for (Eigen::Index u = 0; u < 2; ++u)
    for (Eigen::Index i = 0; i < 3; ++i) {
      double dot = 0;
      for (Eigen::Index c = 0; c < 3; ++c) dot += state.representation(u, c) * state.representation(2 + i, c);
      CHECK(std::abs(s(u, i) - dot) < 1e-12);
    }
  // Identical rows score their squared norm.
  ForwardState copy = state;
  copy.representation.row(2) = copy.representation.row(0);
  CHECK(std::abs(predict_scores(copy)(0, 0) - copy.representation.row(0).squaredNorm()) < 1e-12);
  // With the enhanced part zero the score is the ID-only product.
  copy.representation = copy.id_extended;
  CHECK(std::abs(predict_scores(copy)(1, 2) - copy.id_extended.row(1).dot(copy.id_extended.row(4))) < 1e-12);
  const std::vector<std::uint32_t> one{1};
  CHECK(predict_scores(state, one).row(0) == s.row(1));
}

TEST_CASE("training lowers the ranking loss") {
  const auto& syn = synthetic();
  const auto result = train(syn.dataset, syn.features, quick_config(30));
  REQUIRE(result.report.epochs.size() == 30);
  CHECK(result.report.epochs.back().loss.l_bpr < result.report.epochs.front().loss.l_bpr);
}

TEST_CASE("a zero learning rate leaves parameters untouched") {
  const auto& syn = synthetic();
  auto c = quick_config(1);
  c.learning_rate = 0.0;
  const auto result = train(syn.dataset, syn.features, c);
  CHECK(same_params(result.best_params, init_params(c, syn.dataset.n_users(), syn.dataset.n_items(), syn.features)));
}

TEST_CASE("ablation switches") {
  TrainConfig c;
  CHECK(apply_ablation(c).objective.alpha == c.objective.alpha);
  c.no_alignment = true;
  auto a = apply_ablation(c);
  CHECK(a.objective.alpha == 0.0);
  CHECK(a.objective.beta == 0.0);
  CHECK(a.objective.gamma == c.objective.gamma);
  c.no_user_modality = true;
  CHECK(apply_ablation(c).objective.gamma == 0.0);

  const auto& syn = synthetic();
  auto q = quick_config(3);
  q.no_alignment = true;
  for (const auto& e : train(syn.dataset, syn.features, q).report.epochs) CHECK(e.loss.l_al == 0.0);

  // Every switch on: only ranking and regularization remain.
  const auto ds = fixtures::random_dataset(3, 4, 8, false);
  const auto feats = fixtures::random_features(4, 3, 3, 8);
  const auto inputs = make_model_inputs(feats, build_graphs(ds, feats, 2, false));
  const auto params = fixtures::random_params(3, 4, 4, feats, 9);
  const auto state = forward(params, inputs, ModelOptions{});
  TrainConfig all;
  all.no_alignment = all.no_user_modality = all.no_graph_enhancement = true;
  const auto l = total_loss(state, params, apply_ablation(all).objective, TripleBatch{{0, 1}, {0, 1}, {2, 3}}, 1);
  CHECK(l.total == l.l_bpr + l.l_reg);
}

TEST_CASE("without graph enhancement the adjacency is the plain bipartite graph") {
  const auto& syn = synthetic();
  const auto plain = build_graphs(syn.dataset, syn.features, 10, false);
  CHECK(plain.adjacency == build_enhanced_adjacency(syn.dataset, SemanticNeighborSet::empty(syn.dataset.n_items())));
  CHECK(plain.neighbors.edges.empty());
  CHECK_FALSE(build_graphs(syn.dataset, syn.features, 10, true).adjacency == plain.adjacency);
}

TEST_CASE("gradient check") {
  const auto full = gradcheck(GradcheckSpec{});
  CHECK(full.entries.size() >= 50);
  CHECK(full.passed(1e-4));

  GradcheckSpec mean;
  mean.user_agg = UserAggregation::kMean;
  mean.weights.nce_normalize = false;
  mean.weights.tau_bm = 0.7;
  CHECK(gradcheck(mean).passed(1e-4));

  // Quadratic objective: central differences are exact up to rounding.
  GradcheckSpec reg;
  reg.regularization_only = true;
  reg.h = 1e-3;
  const auto r = gradcheck(reg);
  CHECK(r.max_rel_error < 1e-10);

  GradcheckSpec coarse = GradcheckSpec{};
  coarse.h = 1e-4;
  const auto fine = gradcheck(GradcheckSpec{});
  CHECK(fine.max_rel_error <= gradcheck(coarse).max_rel_error);
}

TEST_CASE("the regularizer gradient is exactly 2 delta theta") {
  const auto ds = fixtures::random_dataset(3, 4, 2, false);
  const auto feats = fixtures::random_features(4, 3, 2, 2);
  const auto inputs = make_model_inputs(feats, build_graphs(ds, feats, 2, true));
  const auto params = fixtures::random_params(3, 4, 4, feats, 3);
  const auto state = forward(params, inputs, ModelOptions{});
  ObjectiveWeights w;
  w.alpha = w.beta = w.gamma = 0.0;
  w.delta = 0.3;
  auto grad = params.zeros_like();
  auto sg = StateGradient::zeros(state);
  total_loss(state, params, w, TripleBatch{{0}, {0}, {1}}, 1, &sg, &grad);
  std::vector<Matrix> g;
  grad.for_each([&](const std::string&, const Matrix& t) { g.push_back(t); });
  std::size_t k = 0;
  double worst = 0;
  params.for_each([&](const std::string&, const Matrix& t) {
    const Matrix expect = 2.0 * 0.3 * t;
    for (Eigen::Index j = 0; j < t.size(); ++j)
      worst = std::max(worst, relative_error(g[k].data()[j], expect.data()[j]));
    ++k;
  });
  CHECK(worst < 1e-10);
}

TEST_CASE("training is deterministic") {
  const auto& syn = synthetic();
  const auto c = quick_config(3);
  std::ostringstream a, b;
  train(syn.dataset, syn.features, c, &a);
  train(syn.dataset, syn.features, c, &b);
  CHECK(a.str() == b.str());
  CHECK_FALSE(a.str().empty());
}

TEST_CASE("early stopping keeps the best validation epoch") {
  const auto& syn = synthetic();
  auto c = quick_config(40);
  c.early_stop_patience = 2;
  c.learning_rate = 0.01;
  const auto r = train(syn.dataset, syn.features, c).report;
  CHECK(r.stopping_epoch <= c.max_epochs);
  CHECK(r.stopping_epoch == r.epochs.size());
  for (const auto& e : r.epochs) CHECK(r.best_valid_recall >= e.valid_recall);
  CHECK(r.epochs[r.best_epoch - 1].improved);
  if (r.stopping_epoch < c.max_epochs) CHECK(r.stopping_epoch - r.best_epoch == c.early_stop_patience);
  CHECK(r.best_checkpoint_id == fmt::format("epoch-{:04d}", r.best_epoch));
}

TEST_CASE("moving test interactions does not change training") {
  const auto& syn = synthetic();
  const auto& ds = syn.dataset;
  std::vector<Interaction> moved;
  std::mt19937_64 rng(3);
  for (const auto& x : ds.interactions()) {
    if (x.split != Split::kTest) {
      moved.push_back(x);
      continue;
    }
    std::uint32_t j;
    do {
      j = static_cast<std::uint32_t>(rng() % ds.n_items());
    } while (ds.has_interaction(x.user, j, Split::kTrain) || ds.has_interaction(x.user, j, Split::kValid) ||
             ds.has_interaction(x.user, j, Split::kTest));
    moved.push_back({x.user, j, Split::kTest});
  }
  const InteractionDataset other(ds.n_users(), ds.n_items(), moved);
  const auto c = quick_config(1);
  const auto a = train(ds, syn.features, c).report.epochs.front();
  const auto b = train(other, syn.features, c).report.epochs.front();
  CHECK(a.loss.total == b.loss.total);
  CHECK(a.loss.l_bpr == b.loss.l_bpr);
  CHECK(a.valid_recall == b.valid_recall);
}

TEST_CASE("checkpoints round-trip exactly") {
  fixtures::TempDir dir("ckpt");
  const auto ds = fixtures::random_dataset(5, 7, 3);
  const auto feats = fixtures::random_features(7, 4, 3, 3);
  const auto inputs = make_model_inputs(feats, build_graphs(ds, feats, 2, true));
  TrainConfig c;
  c.embedding_dim = 6;
  c.objective.tau_um = 0.1;
  const auto params = fixtures::random_params(5, 7, 6, feats, 4);
  save_checkpoint(dir / "ck", params, c);
  const auto loaded = load_checkpoint(dir / "ck");
  CHECK(same_params(params, loaded.params));
  CHECK(loaded.config.to_json() == c.to_json());
  const auto opts = c.model_options();
  CHECK(predict_scores(forward(params, inputs, opts)) == predict_scores(forward(loaded.params, inputs, opts)));

  save_checkpoint(dir / "ck32", params, c, "float32-le");
  const auto narrow = load_checkpoint(dir / "ck32");
  CHECK(oracle::max_abs_diff(narrow.params.id_embedding, params.id_embedding) < 1e-6);
  CHECK_THROWS_AS(save_checkpoint(dir / "bad", params, c, "int8"), ValidationError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing"), ValidationError);
}

TEST_CASE("config parsing") {
  CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json{{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json{{"alpha", -1.0}}), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json{{"tau", 0.0}}), ConfigError);
  const auto c = TrainConfig::from_json(nlohmann::json{{"alpha", 0.5}, {"embedding_dim", 8}});
  CHECK(c.objective.alpha == 0.5);
  CHECK(c.embedding_dim == 8);
  CHECK(TrainConfig::from_json(c.to_json()).to_json() == c.to_json());
  for (const auto& name : preset_names()) {
    const auto p = preset(name);
    CHECK_NOTHROW(p.validate());
    CHECK(p.objective.alpha == 0.01);
    if (name != "synthetic") CHECK(p.objective.beta == 0.01);
  }
  CHECK(preset("baby").objective.bm_temperature() == 0.4);
  CHECK(preset("clothing").objective.um_temperature() == 0.2);
  CHECK(preset("clothing").objective.gamma == 0.1);
  CHECK(preset("sports").objective.um_temperature() == 0.1);
  CHECK(preset("baby").item_graph_layers == 2);
  CHECK(preset("sports").item_graph_layers == 1);
  CHECK_THROWS_AS(preset("nope"), ConfigError);
}

TEST_CASE("divergence is reported") {
  const auto& syn = synthetic();
  auto c = quick_config(5);
  c.learning_rate = 1e200;
  CHECK_THROWS_AS(train(syn.dataset, syn.features, c), DivergenceError);
}

TEST_CASE("negative sampling") {
  const InteractionDataset ds(2, 3, {{0, 0, Split::kTrain}, {0, 1, Split::kTrain}, {0, 2, Split::kTrain},
                                     {1, 0, Split::kTrain}, {1, 1, Split::kTest}});
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(sample_negative(ds, 0, rng), ValidationError);
  for (int k = 0; k < 50; ++k) CHECK(sample_negative(ds, 1, rng) != 0);
  const auto& syn = synthetic();
  const auto batch = sample_epoch(syn.dataset, rng);
  CHECK(batch.size() == syn.dataset.count(Split::kTrain));
  for (std::size_t k = 0; k < batch.size(); ++k) {
    CHECK(syn.dataset.has_interaction(batch.users[k], batch.pos_items[k], Split::kTrain));
    CHECK_FALSE(syn.dataset.has_interaction(batch.users[k], batch.neg_items[k], Split::kTrain));
  }
}

}  // TEST_SUITE
