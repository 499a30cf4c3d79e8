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

#include "gume/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <map>

#include <fmt/format.h>

namespace gume {

namespace fs = std::filesystem;

namespace {

// Stream ids for mix_seed so that each consumer of randomness is independent.
constexpr std::uint64_t kInitStream = 10;
constexpr std::uint64_t kSampleStream = 11;
constexpr std::uint64_t kLossStream = 12;

bool is_bias(const std::string& name) {
  const auto dot = name.rfind('.');
  return dot != std::string::npos && name.compare(dot + 1, 1, "b") == 0;
}

std::string agg_name(UserAggregation agg) { return agg == UserAggregation::kMean ? "mean" : "sum"; }

UserAggregation agg_from(const std::string& s) {
  if (s == "sum") return UserAggregation::kSum;
  if (s == "mean") return UserAggregation::kMean;
  throw ConfigError("user_agg must be 'sum' or 'mean', got '" + s + "'");
}

template <typename T>
T get_key(const nlohmann::json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

std::size_t get_count(const nlohmann::json& j, const std::string& key) {
  if (!j.is_number_integer() || j.get<long long>() < 0) {
    throw ConfigError("config key '" + key + "' must be a non-negative integer");
  }
  return j.get<std::size_t>();
}

}  // namespace

// ---- config ----

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(embedding_dim >= 1, "embedding_dim must be >= 1");
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), "learning_rate must be >= 0");
  require(max_epochs >= 1, "max_epochs must be >= 1");
  require(early_stop_patience >= 1, "early_stop_patience must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(knn_k >= 1, "knn_k must be >= 1");
  require(objective.alpha >= 0 && objective.beta >= 0 && objective.gamma >= 0 && objective.delta >= 0,
          "loss weights must be >= 0");
  require(objective.tau > 0, "tau must be > 0");
  require(!objective.tau_bm || *objective.tau_bm > 0, "tau_bm must be > 0");
  require(!objective.tau_um || *objective.tau_um > 0, "tau_um must be > 0");
  require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1, "adam betas must lie in [0, 1)");
  require(adam_epsilon > 0, "adam_epsilon must be > 0");
}

ModelOptions TrainConfig::model_options() const { return {ui_layers, item_graph_layers, user_agg}; }

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j;
  j["embedding_dim"] = embedding_dim;
  j["learning_rate"] = learning_rate;
  j["max_epochs"] = max_epochs;
  j["early_stop_patience"] = early_stop_patience;
  j["batch_size"] = batch_size;
  j["ui_layers"] = ui_layers;
  j["item_graph_layers"] = item_graph_layers;
  j["knn_k"] = knn_k;
  j["alpha"] = objective.alpha;
  j["beta"] = objective.beta;
  j["gamma"] = objective.gamma;
  j["delta"] = objective.delta;
  j["tau"] = objective.tau;
  j["tau_bm"] = objective.tau_bm ? nlohmann::json(*objective.tau_bm) : nlohmann::json(nullptr);
  j["tau_um"] = objective.tau_um ? nlohmann::json(*objective.tau_um) : nlohmann::json(nullptr);
  j["nce_normalize"] = objective.nce_normalize;
  j["user_agg"] = agg_name(user_agg);
  j["no_graph_enhancement"] = no_graph_enhancement;
  j["no_alignment"] = no_alignment;
  j["no_user_modality"] = no_user_modality;
  j["seed"] = seed;
  j["full_batch"] = full_batch;
  j["adam_beta1"] = adam_beta1;
  j["adam_beta2"] = adam_beta2;
  j["adam_epsilon"] = adam_epsilon;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "embedding_dim") c.embedding_dim = get_count(v, key);
    else if (key == "learning_rate") c.learning_rate = get_key<double>(v, key);
    else if (key == "max_epochs") c.max_epochs = get_count(v, key);
    else if (key == "early_stop_patience") c.early_stop_patience = get_count(v, key);
    else if (key == "batch_size") c.batch_size = get_count(v, key);
    else if (key == "ui_layers") c.ui_layers = get_count(v, key);
    else if (key == "item_graph_layers") c.item_graph_layers = get_count(v, key);
    else if (key == "knn_k") c.knn_k = get_count(v, key);
    else if (key == "alpha") c.objective.alpha = get_key<double>(v, key);
    else if (key == "beta") c.objective.beta = get_key<double>(v, key);
    else if (key == "gamma") c.objective.gamma = get_key<double>(v, key);
    else if (key == "delta") c.objective.delta = get_key<double>(v, key);
    else if (key == "tau") c.objective.tau = get_key<double>(v, key);
    else if (key == "tau_bm") c.objective.tau_bm = v.is_null() ? std::nullopt : std::optional(get_key<double>(v, key));
    else if (key == "tau_um") c.objective.tau_um = v.is_null() ? std::nullopt : std::optional(get_key<double>(v, key));
    else if (key == "nce_normalize") c.objective.nce_normalize = get_key<bool>(v, key);
    else if (key == "user_agg") c.user_agg = agg_from(get_key<std::string>(v, key));
    else if (key == "no_graph_enhancement") c.no_graph_enhancement = get_key<bool>(v, key);
    else if (key == "no_alignment") c.no_alignment = get_key<bool>(v, key);
    else if (key == "no_user_modality") c.no_user_modality = get_key<bool>(v, key);
    else if (key == "seed") c.seed = get_key<std::uint64_t>(v, key);
    else if (key == "full_batch") c.full_batch = get_key<bool>(v, key);
    else if (key == "adam_beta1") c.adam_beta1 = get_key<double>(v, key);
    else if (key == "adam_beta2") c.adam_beta2 = get_key<double>(v, key);
    else if (key == "adam_epsilon") c.adam_epsilon = get_key<double>(v, key);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

TrainConfig TrainConfig::load(const fs::path& path) { return load(path, TrainConfig{}); }

TrainConfig TrainConfig::load(const fs::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j, std::move(base));
}

void TrainConfig::save(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

TrainConfig preset(std::string_view name) {
  TrainConfig c;
  c.objective.alpha = 1e-2;
  c.objective.beta = 0.01;
  if (name == "default") return c;
  if (name == "synthetic") {
    c.max_epochs = 100;
    c.batch_size = 256;
    // Picked by validation Recall@20 over beta, gamma in {1e-3, 1e-2, 1e-1} and tau in {0.2, 0.6, 1.0}.
    c.objective.beta = 0.001;
    c.objective.gamma = 0.001;
    c.objective.tau = 1.0;
    return c;
  }
  if (name == "baby") {
    c.item_graph_layers = 2;
    c.objective.tau_bm = 0.4;
    c.objective.gamma = 0.01;
    c.objective.tau_um = 0.1;
    return c;
  }
  if (name == "sports") {
    c.objective.tau_bm = 0.2;
    c.objective.gamma = 0.01;
    c.objective.tau_um = 0.1;
    return c;
  }
  if (name == "clothing" || name == "electronics") {
    c.objective.tau_bm = 0.2;
    c.objective.gamma = 0.1;
    c.objective.tau_um = 0.2;
    return c;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "'");
}

std::vector<std::string> preset_names() { return {"default", "synthetic", "baby", "sports", "clothing", "electronics"}; }

TrainConfig apply_ablation(TrainConfig config) {
  if (config.no_alignment) {
    config.objective.alpha = 0.0;
    config.objective.beta = 0.0;
  }
  if (config.no_user_modality) config.objective.gamma = 0.0;
  return config;
}

// ---- parameters and optimizer ----

ParameterSet init_params(const TrainConfig& config, std::size_t n_users, std::size_t n_items,
                         std::span<const ModalityFeatureSet> features) {
  ParameterSet p = make_parameter_shapes(n_users, n_items, config.embedding_dim, features);
  std::mt19937_64 rng(mix_seed(config.seed, kInitStream));
  p.for_each([&](const std::string& name, Matrix& t) {
    if (is_bias(name)) {
      t.setZero();
      return;
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = dist(rng);
  });
  return p;
}

Adam::Adam(const ParameterSet& shapes, double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon), m_(shapes.zeros_like()),
      v_(shapes.zeros_like()) {}

void Adam::step(ParameterSet& params, const ParameterSet& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::vector<Matrix*> p;
  std::vector<const Matrix*> g;
  std::vector<Matrix*> m;
  std::vector<Matrix*> v;
  params.for_each([&](const std::string&, Matrix& t) { p.push_back(&t); });
  grads.for_each([&](const std::string&, const Matrix& t) { g.push_back(&t); });
  m_.for_each([&](const std::string&, Matrix& t) { m.push_back(&t); });
  v_.for_each([&](const std::string&, Matrix& t) { v.push_back(&t); });
  for (std::size_t k = 0; k < p.size(); ++k) {
    *m[k] = beta1_ * *m[k] + (1.0 - beta1_) * *g[k];
    *v[k] = beta2_ * *v[k] + (1.0 - beta2_) * g[k]->cwiseAbs2();
    p[k]->array() -= lr_ * (m[k]->array() / c1) / ((v[k]->array() / c2).sqrt() + eps_);
  }
}

// ---- sampling ----

std::uint32_t sample_negative(const InteractionDataset& dataset, std::uint32_t user, std::mt19937_64& rng,
                              std::size_t attempts) {
  std::uniform_int_distribution<std::uint32_t> dist(0, static_cast<std::uint32_t>(dataset.n_items() - 1));
  for (std::size_t a = 0; a < attempts; ++a) {
    const auto item = dist(rng);
    if (!dataset.has_interaction(user, item, Split::kTrain)) return item;
  }
  throw ValidationError(fmt::format("no negative item found for user {} after {} attempts", user, attempts));
}

TripleBatch sample_epoch(const InteractionDataset& dataset, std::mt19937_64& rng) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  pairs.reserve(dataset.count(Split::kTrain));
  for (std::uint32_t u = 0; u < dataset.n_users(); ++u) {
    for (auto i : dataset.user_items(u, Split::kTrain)) pairs.emplace_back(u, i);
  }
  std::shuffle(pairs.begin(), pairs.end(), rng);
  TripleBatch out;
  out.users.reserve(pairs.size());
  out.pos_items.reserve(pairs.size());
  out.neg_items.reserve(pairs.size());
  for (const auto& [u, i] : pairs) {
    out.users.push_back(u);
    out.pos_items.push_back(i);
    out.neg_items.push_back(sample_negative(dataset, u, rng));
  }
  return out;
}

ScoreFn state_scorer(const ForwardState& state) {
  return [&state](std::span<const std::uint32_t> users) { return predict_scores(state, users); };
}

// ---- reports ----

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch},
          {"loss", loss.to_json()},
          {"valid", {{"recall@20", valid_recall}, {"ndcg@20", valid_ndcg}}},
          {"improved", improved}};
}

nlohmann::json TrainReport::summary_json() const {
  return {{"best_epoch", best_epoch},
          {"best_valid_recall@20", best_valid_recall},
          {"stopping_epoch", stopping_epoch},
          {"best_checkpoint_id", best_checkpoint_id},
          {"epochs", epochs.size()}};
}

void TrainReport::write_jsonl(std::ostream& out) const {
  for (const auto& e : epochs) out << e.to_json().dump() << '\n';
}

// ---- training ----

ObjectiveEval evaluate_objective(const ParameterSet& params, const ModelInputs& inputs, const ModelOptions& options,
                                 const ObjectiveWeights& weights, const TripleBatch& batch, std::uint64_t seed) {
  const ForwardState state = forward(params, inputs, options);
  StateGradient upstream = StateGradient::zeros(state);
  ObjectiveEval out{{}, params.zeros_like()};
  out.loss = total_loss(state, params, weights, batch, seed, &upstream, &out.grad);
  if (out.loss.first_non_finite().empty()) backward(params, inputs, options, state, upstream, out.grad);
  return out;
}

TrainResult train(const TrainingData& data, const TrainConfig& raw_config, std::ostream* epoch_log) {
  if (data.dataset == nullptr || data.graphs == nullptr) throw ValidationError("training data is incomplete");
  raw_config.validate();
  const TrainConfig config = apply_ablation(raw_config);
  const InteractionDataset& dataset = *data.dataset;
  if (dataset.count(Split::kTrain) == 0) throw ValidationError("train split is empty");
  if (dataset.count(Split::kValid) == 0) throw ValidationError("valid split is empty");

  const ModelInputs inputs = make_model_inputs(data.features, *data.graphs);
  const ModelOptions options = config.model_options();
  ParameterSet params = init_params(config, dataset.n_users(), dataset.n_items(), data.features);
  Adam adam(params, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon);
  std::mt19937_64 rng(mix_seed(config.seed, kSampleStream));

  TrainResult result{{}, params};
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const TripleBatch triples = sample_epoch(dataset, rng);
    const std::size_t batch_size = config.full_batch ? triples.size() : config.batch_size;
    LossBreakdown epoch_loss;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < triples.size(); start += batch_size, ++batch_index) {
      const std::size_t end = std::min(triples.size(), start + batch_size);
      TripleBatch batch;
      batch.users.assign(triples.users.begin() + static_cast<std::ptrdiff_t>(start), triples.users.begin() + static_cast<std::ptrdiff_t>(end));
      batch.pos_items.assign(triples.pos_items.begin() + static_cast<std::ptrdiff_t>(start), triples.pos_items.begin() + static_cast<std::ptrdiff_t>(end));
      batch.neg_items.assign(triples.neg_items.begin() + static_cast<std::ptrdiff_t>(start), triples.neg_items.begin() + static_cast<std::ptrdiff_t>(end));
      const std::uint64_t seed = mix_seed(mix_seed(config.seed, kLossStream), epoch * 1000003ULL + batch_index);
      ObjectiveEval eval = evaluate_objective(params, inputs, options, config.objective, batch, seed);
      if (const auto term = eval.loss.first_non_finite(); !term.empty()) {
        throw DivergenceError(term, fmt::format("non-finite {} at epoch {} batch {}", term, epoch, batch_index));
      }
      adam.step(params, eval.grad);
      if (!params.all_finite()) {
        throw DivergenceError("parameters", fmt::format("non-finite parameters after epoch {} batch {}", epoch, batch_index));
      }
      LossBreakdown weighted = eval.loss;
      weighted /= static_cast<double>(triples.size()) / static_cast<double>(end - start);
      epoch_loss += weighted;
    }

    const ForwardState state = forward(params, inputs, options);
    const MetricsReport valid = rank_and_score(state_scorer(state), dataset, Split::kValid, {20}, 20);
    EpochRecord record{epoch, epoch_loss, valid.recall(20), valid.ndcg(20), false};
    if (record.valid_recall > result.report.best_valid_recall) {
      record.improved = true;
      result.report.best_valid_recall = record.valid_recall;
      result.report.best_epoch = epoch;
      result.report.best_checkpoint_id = fmt::format("epoch-{:04d}", epoch);
      result.best_params = params;
      since_best = 0;
    } else {
      ++since_best;
    }
    result.report.epochs.push_back(record);
    result.report.stopping_epoch = epoch;
    if (epoch_log != nullptr) *epoch_log << record.to_json().dump() << std::endl;
    if (since_best >= config.early_stop_patience) break;
  }
  return result;
}

TrainResult train(const InteractionDataset& dataset, std::span<const ModalityFeatureSet> features,
                  const TrainConfig& config, std::ostream* epoch_log) {
  config.validate();
  const GraphBundle graphs = build_graphs(dataset, features, config.knn_k, !config.no_graph_enhancement);
  return train(TrainingData{&dataset, features, &graphs}, config, epoch_log);
}

// ---- gradient check ----

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

nlohmann::json GradcheckReport::to_json() const {
  nlohmann::json j;
  j["max_rel_error"] = max_rel_error;
  j["n_entries"] = entries.size();
  j["entries"] = nlohmann::json::array();
  for (const auto& e : entries) {
    j["entries"].push_back({{"tensor", e.tensor},
                            {"row", e.row},
                            {"col", e.col},
                            {"analytic", e.analytic},
                            {"numeric", e.numeric},
                            {"rel_error", e.rel_error}});
  }
  return j;
}

GradcheckReport gradcheck(const GradcheckSpec& spec) {
  if (spec.n_items < 2 || spec.n_users < 1) throw ConfigError("gradcheck needs at least 1 user and 2 items");
  if (!(spec.h > 0)) throw ConfigError("finite-difference step must be > 0");
  std::mt19937_64 rng(spec.seed);

  // Each user takes between 1 and n_items - 1 items so that negatives exist.
  std::vector<Interaction> interactions;
  for (std::uint32_t u = 0; u < spec.n_users; ++u) {
    std::vector<std::uint32_t> items(spec.n_items);
    std::iota(items.begin(), items.end(), 0U);
    std::shuffle(items.begin(), items.end(), rng);
    const std::size_t take = 1 + rng() % (spec.n_items - 1);
    for (std::size_t k = 0; k < take; ++k) interactions.push_back({u, items[k], Split::kTrain});
  }
  const InteractionDataset dataset(spec.n_users, spec.n_items, interactions);

  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<ModalityFeatureSet> features{{Modality::kVisual, Matrix(spec.n_items, spec.d_v)},
                                           {Modality::kTextual, Matrix(spec.n_items, spec.d_t)}};
  for (auto& f : features) {
    for (Eigen::Index k = 0; k < f.matrix.size(); ++k) f.matrix.data()[k] = normal(rng);
  }
  const GraphBundle graphs = build_graphs(dataset, features, std::min(spec.knn_k, spec.n_items - 1), true);
  const ModelInputs inputs = make_model_inputs(features, graphs);
  const ModelOptions options{spec.ui_layers, spec.item_graph_layers, spec.user_agg};

  TrainConfig config;
  config.embedding_dim = spec.dim;
  config.seed = spec.seed;
  ParameterSet params = init_params(config, spec.n_users, spec.n_items, features);
  // Non-zero biases so that their gradients are exercised away from the origin.
  params.for_each([&](const std::string&, Matrix& t) {
    for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] += 0.1 * normal(rng);
  });

  TripleBatch batch;
  for (std::uint32_t u = 0; u < spec.n_users; ++u) {
    for (auto i : dataset.user_items(u, Split::kTrain)) {
      batch.users.push_back(u);
      batch.pos_items.push_back(i);
      batch.neg_items.push_back(sample_negative(dataset, u, rng));
    }
  }
  const std::uint64_t loss_seed = mix_seed(spec.seed, kLossStream);

  // The L2-only variant still goes through total_loss; only its regularizer is read.
  ObjectiveWeights reg_weights = spec.weights;
  reg_weights.alpha = reg_weights.beta = reg_weights.gamma = 0.0;
  const ForwardState base_state = forward(params, inputs, options);
  auto value = [&](const ParameterSet& p) {
    if (spec.regularization_only) return total_loss(base_state, p, reg_weights, batch, loss_seed).l_reg;
    const ForwardState state = forward(p, inputs, options);
    return total_loss(state, p, spec.weights, batch, loss_seed).total;
  };
  ParameterSet analytic;
  if (spec.regularization_only) {
    analytic = params.zeros_like();
    StateGradient unused = StateGradient::zeros(base_state);
    total_loss(base_state, params, reg_weights, batch, loss_seed, &unused, &analytic);
  } else {
    analytic = evaluate_objective(params, inputs, options, spec.weights, batch, loss_seed).grad;
  }

  struct Slot {
    std::size_t tensor;
    Eigen::Index index;
  };
  std::vector<std::string> names;
  std::vector<Slot> slots;
  params.for_each([&](const std::string& name, const Matrix& t) {
    for (Eigen::Index k = 0; k < t.size(); ++k) slots.push_back({names.size(), k});
    names.push_back(name);
  });
  std::shuffle(slots.begin(), slots.end(), rng);
  slots.resize(std::min(slots.size(), spec.n_entries));

  auto tensor_at = [](ParameterSet& p, std::size_t index) -> Matrix& {
    Matrix* found = nullptr;
    std::size_t k = 0;
    p.for_each([&](const std::string&, Matrix& t) {
      if (k++ == index) found = &t;
    });
    return *found;
  };

  GradcheckReport report;
  for (const auto& slot : slots) {
    ParameterSet probe = params;
    Matrix& t = tensor_at(probe, slot.tensor);
    const double original = t.data()[slot.index];
    t.data()[slot.index] = original + spec.h;
    const double plus = value(probe);
    t.data()[slot.index] = original - spec.h;
    const double minus = value(probe);
    const double numeric = (plus - minus) / (2.0 * spec.h);
    const double a = tensor_at(analytic, slot.tensor).data()[slot.index];
    GradcheckEntry e{names[slot.tensor], slot.index / t.cols(), slot.index % t.cols(), a, numeric,
                     relative_error(a, numeric)};
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.entries.push_back(e);
  }
  return report;
}

// ---- checkpoints ----

void save_checkpoint(const fs::path& dir, const ParameterSet& params, const TrainConfig& config,
                     const std::string& dtype) {
  if (dtype != "float64-le" && dtype != "float32-le") throw ConfigError("checkpoint dtype must be float64-le or float32-le");
  fs::create_directories(dir);
  config.save(dir / "config.json");
  nlohmann::json manifest;
  manifest["format"] = "gume-checkpoint";
  manifest["version"] = 1;
  manifest["dtype"] = dtype;
  manifest["n_users"] = params.n_users();
  manifest["n_items"] = params.n_items();
  manifest["dim"] = params.dim();
  manifest["modalities"] = nlohmann::json::array();
  for (auto m : params.modalities) manifest["modalities"].push_back(std::string(to_string(m)));
  manifest["tensors"] = nlohmann::json::array();
  const std::string ext = dtype == "float64-le" ? ".f64" : ".f32";
  params.for_each([&](const std::string& name, const Matrix& t) {
    const std::string file = name + ext;
    std::ofstream out(dir / file, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + (dir / file).string());
    if (dtype == "float64-le") {
      out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    } else {
      const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f = t.cast<float>();
      out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
    }
    manifest["tensors"].push_back({{"name", name}, {"file", file}, {"rows", t.rows()}, {"cols", t.cols()}});
  });
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ValidationError("missing checkpoint manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("bad checkpoint manifest: " + std::string(e.what()));
  }
  const std::string dtype = manifest.at("dtype").get<std::string>();
  if (dtype != "float64-le" && dtype != "float32-le") throw ValidationError("unsupported checkpoint dtype " + dtype);

  Checkpoint ck;
  ck.config = TrainConfig::load(dir / "config.json");
  ParameterSet& p = ck.params;
  for (const auto& m : manifest.at("modalities")) p.modalities.push_back(modality_from_string(m.get<std::string>()));
  p.user_modality.resize(p.modalities.size());
  p.transforms.resize(p.modalities.size());
  p.gates.resize(p.modalities.size());

  std::map<std::string, nlohmann::json> tensors;
  for (const auto& t : manifest.at("tensors")) tensors[t.at("name").get<std::string>()] = t;
  p.for_each([&](const std::string& name, Matrix& t) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw ValidationError("checkpoint lacks tensor " + name);
    const auto rows = it->second.at("rows").get<Eigen::Index>();
    const auto cols = it->second.at("cols").get<Eigen::Index>();
    const fs::path file = dir / it->second.at("file").get<std::string>();
    std::ifstream raw(file, std::ios::binary);
    if (!raw) throw ValidationError("cannot open " + file.string());
    t.resize(rows, cols);
    const std::size_t width = dtype == "float64-le" ? sizeof(double) : sizeof(float);
    const auto bytes = static_cast<std::streamsize>(static_cast<std::size_t>(rows * cols) * width);
    if (dtype == "float64-le") {
      raw.read(reinterpret_cast<char*>(t.data()), bytes);
    } else {
      Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f(rows, cols);
      raw.read(reinterpret_cast<char*>(f.data()), bytes);
      t = f.cast<double>();
    }
    if (raw.gcount() != bytes || raw.peek() != EOF) throw ShapeError("size mismatch in " + file.string());
  });
  if (p.n_users() != manifest.at("n_users").get<std::size_t>() || p.dim() != manifest.at("dim").get<std::size_t>()) {
    throw ShapeError("checkpoint tensors disagree with the manifest");
  }
  return ck;
}

}  // namespace gume
