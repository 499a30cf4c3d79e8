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

#include "gume/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace gume {

static_assert(std::endian::native == std::endian::little, "raw matrix files are little-endian");

namespace {

std::uint64_t pair_key(std::uint32_t user, std::uint32_t item) {
  return (static_cast<std::uint64_t>(user) << 32) | item;
}

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    fields.emplace_back(line.substr(start, tab == std::string_view::npos ? line.npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return fields;
}

// Moves the first interaction (in dataset order) of any user lacking a train
// interaction into train.
void ensure_train_per_user(std::vector<Interaction>& interactions, std::size_t n_users) {
  std::vector<bool> has_train(n_users, false);
  for (const auto& x : interactions) {
    if (x.split == Split::kTrain) has_train[x.user] = true;
  }
  for (auto& x : interactions) {
    if (!has_train[x.user]) {
      x.split = Split::kTrain;
      has_train[x.user] = true;
    }
  }
}

}  // namespace

InteractionDataset::InteractionDataset(std::size_t n_users, std::size_t n_items,
                                       std::vector<Interaction> interactions,
                                       std::vector<std::string> user_tokens,
                                       std::vector<std::string> item_tokens)
    : n_users_(n_users),
      n_items_(n_items),
      interactions_(std::move(interactions)),
      user_tokens_(std::move(user_tokens)),
      item_tokens_(std::move(item_tokens)) {
  if (!user_tokens_.empty() && user_tokens_.size() != n_users_) {
    throw ValidationError("user token map size does not match n_users");
  }
  if (!item_tokens_.empty() && item_tokens_.size() != n_items_) {
    throw ValidationError("item token map size does not match n_items");
  }
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(interactions_.size());
  item_degree_.assign(n_items_, 0);
  std::vector<bool> has_train(n_users_, false);
  std::vector<bool> has_any(n_users_, false);
  for (const auto& x : interactions_) {
    if (x.user >= n_users_ || x.item >= n_items_) {
      throw ValidationError("interaction (" + std::to_string(x.user) + ", " + std::to_string(x.item) +
                            ") out of range [0, " + std::to_string(n_users_) + ") x [0, " +
                            std::to_string(n_items_) + ")");
    }
    if (!seen.insert(pair_key(x.user, x.item)).second) {
      throw ValidationError("duplicate interaction (" + std::to_string(x.user) + ", " +
                            std::to_string(x.item) + ")");
    }
    has_any[x.user] = true;
    if (x.split == Split::kTrain) {
      ++item_degree_[x.item];
      has_train[x.user] = true;
    }
  }
  for (std::size_t u = 0; u < n_users_; ++u) {
    if (has_any[u] && !has_train[u]) {
      throw ValidationError("user " + std::to_string(u) + " has no train interaction");
    }
  }

  offsets_.assign(3, std::vector<std::size_t>(n_users_ + 1, 0));
  items_.assign(3, {});
  for (const auto& x : interactions_) ++offsets_[static_cast<int>(x.split)][x.user + 1];
  for (int s = 0; s < 3; ++s) {
    auto& off = offsets_[s];
    std::partial_sum(off.begin(), off.end(), off.begin());
    items_[s].resize(off.back());
  }
  std::vector<std::vector<std::size_t>> cursor(3);
  for (int s = 0; s < 3; ++s) cursor[s].assign(offsets_[s].begin(), offsets_[s].end() - 1);
  for (const auto& x : interactions_) {
    const int s = static_cast<int>(x.split);
    items_[s][cursor[s][x.user]++] = x.item;
  }
  for (int s = 0; s < 3; ++s) {
    for (std::size_t u = 0; u < n_users_; ++u) {
      std::sort(items_[s].begin() + static_cast<std::ptrdiff_t>(offsets_[s][u]),
                items_[s].begin() + static_cast<std::ptrdiff_t>(offsets_[s][u + 1]));
    }
  }
}

std::span<const std::uint32_t> InteractionDataset::user_items(std::uint32_t user, Split split) const {
  const int s = static_cast<int>(split);
  return std::span<const std::uint32_t>(items_[s]).subspan(offsets_[s][user],
                                                          offsets_[s][user + 1] - offsets_[s][user]);
}

bool InteractionDataset::has_interaction(std::uint32_t user, std::uint32_t item, Split split) const {
  const auto items = user_items(user, split);
  return std::binary_search(items.begin(), items.end(), item);
}

std::size_t InteractionDataset::count(Split split) const {
  return items_.empty() ? 0 : items_[static_cast<int>(split)].size();
}

std::vector<Interaction> assign_random_split(std::span<const std::pair<std::uint32_t, std::uint32_t>> pairs,
                                             std::size_t n_users, const RandomSplit& policy) {
  const double total = policy.train + policy.valid + policy.test;
  if (policy.train < 0 || policy.valid < 0 || policy.test < 0 || std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be non-negative and sum to 1");
  }
  std::vector<std::vector<std::size_t>> by_user(n_users);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    if (pairs[k].first >= n_users) throw ValidationError("user index out of range in split");
    by_user[pairs[k].first].push_back(k);
  }
  std::mt19937_64 rng(policy.seed);
  std::vector<Interaction> out;
  out.reserve(pairs.size());
  for (std::size_t u = 0; u < n_users; ++u) {
    auto& idx = by_user[u];
    const std::size_t n = idx.size();
    std::size_t n_valid = 0;
    std::size_t n_test = 0;
    if (n >= 3) {
      std::shuffle(idx.begin(), idx.end(), rng);
      auto portion = [n](double ratio) -> std::size_t {
        if (ratio <= 0) return 0;
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratio)));
      };
      n_test = portion(policy.test);
      n_valid = portion(policy.valid);
      while (n_test + n_valid >= n) {
        if (n_valid >= n_test && n_valid > 0) {
          --n_valid;
        } else {
          --n_test;
        }
      }
    }
    for (std::size_t r = 0; r < n; ++r) {
      Split s = Split::kTrain;
      if (r < n_test) {
        s = Split::kTest;
      } else if (r < n_test + n_valid) {
        s = Split::kValid;
      }
      out.push_back({pairs[idx[r]].first, pairs[idx[r]].second, s});
    }
  }
  return out;
}

InteractionDataset load_interactions(const std::filesystem::path& path, const SplitPolicy& policy,
                                     const IndexMaps* maps) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open interactions file " + path.string());
  const bool from_column = std::holds_alternative<ColumnSplit>(policy);

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError(path.string(), 1, "missing header");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_tabs(line);
  if (header.size() < 2 || header.size() > 3 || header[0] != "user_id" || header[1] != "item_id" ||
      (header.size() == 3 && header[2] != "split")) {
    throw ParseError(path.string(), 1, "expected header user_id<TAB>item_id[<TAB>split]");
  }
  const bool has_split_column = header.size() == 3;
  if (from_column && !has_split_column) {
    throw ParseError(path.string(), 1, "split column required by the column split policy");
  }

  std::unordered_map<std::string, std::uint32_t> user_index;
  std::unordered_map<std::string, std::uint32_t> item_index;
  std::vector<std::string> user_tokens;
  std::vector<std::string> item_tokens;
  std::unordered_set<std::uint64_t> seen;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  std::vector<Split> column;

  if (maps != nullptr) {
    user_tokens = maps->user_tokens;
    item_tokens = maps->item_tokens;
    for (std::size_t k = 0; k < user_tokens.size(); ++k) user_index.emplace(user_tokens[k], static_cast<std::uint32_t>(k));
    for (std::size_t k = 0; k < item_tokens.size(); ++k) item_index.emplace(item_tokens[k], static_cast<std::uint32_t>(k));
  }
  const bool frozen = maps != nullptr;
  std::size_t current_line = 0;
  auto intern = [&](std::unordered_map<std::string, std::uint32_t>& map, std::vector<std::string>& tokens,
                    const std::string& token) {
    if (frozen) {
      const auto it = map.find(token);
      if (it == map.end()) throw ParseError(path.string(), current_line, "token '" + token + "' missing from index map");
      return it->second;
    }
    auto [it, inserted] = map.try_emplace(token, static_cast<std::uint32_t>(tokens.size()));
    if (inserted) tokens.push_back(token);
    return it->second;
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != header.size()) {
      throw ParseError(path.string(), line_no,
                       "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    }
    if (fields[0].empty() || fields[1].empty()) throw ParseError(path.string(), line_no, "empty id");
    Split s = Split::kTrain;
    if (has_split_column) {
      if (fields[2] == "0") {
        s = Split::kTrain;
      } else if (fields[2] == "1") {
        s = Split::kValid;
      } else if (fields[2] == "2") {
        s = Split::kTest;
      } else {
        throw ParseError(path.string(), line_no, "split must be 0, 1 or 2, got '" + fields[2] + "'");
      }
    }
    current_line = line_no;
    const auto u = intern(user_index, user_tokens, fields[0]);
    const auto i = intern(item_index, item_tokens, fields[1]);
    if (!seen.insert(pair_key(u, i)).second) continue;
    pairs.emplace_back(u, i);
    column.push_back(s);
  }

  std::vector<Interaction> interactions;
  if (from_column) {
    interactions.reserve(pairs.size());
    for (std::size_t k = 0; k < pairs.size(); ++k) interactions.push_back({pairs[k].first, pairs[k].second, column[k]});
  } else {
    interactions = assign_random_split(pairs, user_tokens.size(), std::get<RandomSplit>(policy));
  }
  ensure_train_per_user(interactions, user_tokens.size());
  const std::size_t n_users = user_tokens.size();
  const std::size_t n_items = item_tokens.size();
  return InteractionDataset(n_users, n_items, std::move(interactions), std::move(user_tokens),
                            std::move(item_tokens));
}

void save_interactions(const InteractionDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "user_id\titem_id\tsplit\n";
  const auto& ut = dataset.user_tokens();
  const auto& it = dataset.item_tokens();
  for (const auto& x : dataset.interactions()) {
    out << (ut.empty() ? std::to_string(x.user) : ut[x.user]) << '\t'
        << (it.empty() ? std::to_string(x.item) : it[x.item]) << '\t' << static_cast<int>(x.split) << '\n';
  }
}

IndexMaps load_index_maps(const std::filesystem::path& dir) {
  auto read = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw ValidationError("cannot open index map " + p.string());
    std::vector<std::string> tokens;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line_no == 1) {
        if (line != "token\tindex") throw ParseError(p.string(), 1, "expected header token<TAB>index");
        continue;
      }
      if (line.empty()) continue;
      const auto fields = split_tabs(line);
      if (fields.size() != 2) throw ParseError(p.string(), line_no, "expected 2 fields");
      if (fields[1] != std::to_string(tokens.size())) throw ParseError(p.string(), line_no, "indices must be consecutive from 0");
      tokens.push_back(fields[0]);
    }
    return tokens;
  };
  return {read(dir / "users.tsv"), read(dir / "items.tsv")};
}

void save_index_maps(const InteractionDataset& dataset, const std::filesystem::path& dir) {
  auto write = [](const std::filesystem::path& p, const std::vector<std::string>& tokens, std::size_t n) {
    std::ofstream out(p);
    if (!out) throw ValidationError("cannot write " + p.string());
    out << "token\tindex\n";
    for (std::size_t k = 0; k < n; ++k) out << (tokens.empty() ? std::to_string(k) : tokens[k]) << '\t' << k << '\n';
  };
  write(dir / "users.tsv", dataset.user_tokens(), dataset.n_users());
  write(dir / "items.tsv", dataset.item_tokens(), dataset.n_items());
}

std::string_view to_string(Modality m) { return m == Modality::kVisual ? "visual" : "textual"; }

Modality modality_from_string(std::string_view name) {
  if (name == "visual") return Modality::kVisual;
  if (name == "textual") return Modality::kTextual;
  throw ValidationError("unknown modality '" + std::string(name) + "'");
}

void validate_features(const ModalityFeatureSet& features, std::size_t n_items) {
  const auto name = std::string(to_string(features.modality));
  if (static_cast<std::size_t>(features.matrix.rows()) != n_items) {
    throw ShapeError(name + " features have " + std::to_string(features.matrix.rows()) + " rows, expected " +
                     std::to_string(n_items));
  }
  if (features.matrix.cols() == 0) throw ShapeError(name + " features have zero columns");
  if (!features.matrix.allFinite()) throw ValidationError(name + " features contain NaN or Inf");
}

std::vector<ModalityFeatureSet> load_features(const std::filesystem::path& manifest_path,
                                              const InteractionDataset& dataset) {
  std::ifstream in(manifest_path);
  if (!in) throw ValidationError("cannot open feature manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("feature manifest " + manifest_path.string() + ": " + e.what());
  }
  if (!manifest.is_object() || manifest.empty()) throw ValidationError("feature manifest must be a non-empty object");

  std::vector<ModalityFeatureSet> result;
  for (const auto& [key, entry] : manifest.items()) {
    ModalityFeatureSet fs;
    fs.modality = modality_from_string(key);
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::string dtype;
    std::filesystem::path file;
    try {
      rows = entry.at("rows").get<std::size_t>();
      cols = entry.at("cols").get<std::size_t>();
      dtype = entry.at("dtype").get<std::string>();
      file = entry.at("path").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("feature manifest entry '" + key + "': " + e.what());
    }
    if (dtype != "float32-le") throw ValidationError("unsupported dtype '" + dtype + "' for " + key);
    if (rows != dataset.n_items()) {
      throw ShapeError(key + " manifest declares " + std::to_string(rows) + " rows but dataset has " +
                       std::to_string(dataset.n_items()) + " items");
    }
    if (file.is_relative()) file = manifest_path.parent_path() / file;
    std::ifstream raw(file, std::ios::binary);
    if (!raw) throw ValidationError("cannot open feature file " + file.string());
    std::vector<float> buffer(rows * cols);
    raw.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(buffer.size() * sizeof(float)));
    if (raw.gcount() != static_cast<std::streamsize>(buffer.size() * sizeof(float)) || raw.peek() != EOF) {
      throw ShapeError("feature file " + file.string() + " size does not match " + std::to_string(rows) + "x" +
                       std::to_string(cols) + " float32");
    }
    fs.matrix = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                    buffer.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols))
                    .cast<double>();
    validate_features(fs, dataset.n_items());
    result.push_back(std::move(fs));
  }
  std::sort(result.begin(), result.end(),
            [](const auto& a, const auto& b) { return a.modality < b.modality; });
  return result;
}

void save_features(std::span<const ModalityFeatureSet> features, const std::filesystem::path& dir) {
  nlohmann::json manifest = nlohmann::json::object();
  for (const auto& fs : features) {
    const std::string name(to_string(fs.modality));
    const std::string file = name + ".f32";
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f = fs.matrix.cast<float>();
    std::ofstream out(dir / file, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + (dir / file).string());
    out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
    manifest[name] = {{"path", file}, {"rows", fs.matrix.rows()}, {"cols", fs.matrix.cols()}, {"dtype", "float32-le"}};
  }
  std::ofstream out(dir / "features.json");
  out << manifest.dump(2) << '\n';
}

SyntheticData synthesize(const SynthConfig& config) {
  if (config.n_users < 2 || config.n_items < 2 || config.n_factors < 2 || config.d_v < 2 || config.d_t < 2) {
    throw ConfigError("synthetic counts and dimensions must be >= 2");
  }
  if (!(config.popularity_exponent > 0)) throw ConfigError("popularity_exponent must be > 0");
  if (config.noise_scale < 0 || config.taste_sharpness < 0) throw ConfigError("noise_scale and taste_sharpness must be >= 0");
  if (config.mean_activity < static_cast<double>(config.min_activity)) {
    throw ConfigError("mean_activity must be >= min_activity");
  }

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto n_users = static_cast<Eigen::Index>(config.n_users);
  const auto n_items = static_cast<Eigen::Index>(config.n_items);
  const auto n_factors = static_cast<Eigen::Index>(config.n_factors);

  SyntheticData out;
  Matrix directions(n_items, n_factors);
  for (Eigen::Index i = 0; i < directions.size(); ++i) directions.data()[i] = normal(rng);
  directions.rowwise().normalize();

  std::vector<std::size_t> rank(config.n_items);
  std::iota(rank.begin(), rank.end(), 0);
  std::shuffle(rank.begin(), rank.end(), rng);
  out.popularity.resize(config.n_items);
  for (std::size_t i = 0; i < config.n_items; ++i) {
    out.popularity[i] = std::pow(static_cast<double>(rank[i] + 1), -config.popularity_exponent);
  }
  const double max_pop = *std::max_element(out.popularity.begin(), out.popularity.end());

  // Popular items get proportionally longer latent vectors.
  out.item_factors = directions;
  for (Eigen::Index i = 0; i < n_items; ++i) {
    out.item_factors.row(i) *= 1.0 + out.popularity[static_cast<std::size_t>(i)] / max_pop;
  }

  out.user_factors.resize(n_users, n_factors);
  for (Eigen::Index i = 0; i < out.user_factors.size(); ++i) out.user_factors.data()[i] = normal(rng);
  out.user_factors.rowwise().normalize();

  // Sampling without replacement via exponential keys: key_i = log(U_i) / p_i,
  // keep the largest. p_i is proportional to popularity_i * exp(sharpness * taste).
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::poisson_distribution<std::size_t> extra(config.mean_activity - static_cast<double>(config.min_activity));
  const Matrix affinity = out.user_factors * directions.transpose();
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  std::vector<std::pair<double, std::uint32_t>> keys(config.n_items);
  for (Eigen::Index u = 0; u < n_users; ++u) {
    const std::size_t n = std::min(config.n_items, config.min_activity + extra(rng));
    double max_logit = -std::numeric_limits<double>::infinity();
    std::vector<double> logits(config.n_items);
    for (std::size_t i = 0; i < config.n_items; ++i) {
      logits[i] = std::log(out.popularity[i]) + config.taste_sharpness * affinity(u, static_cast<Eigen::Index>(i));
      max_logit = std::max(max_logit, logits[i]);
    }
    for (std::size_t i = 0; i < config.n_items; ++i) {
      const double weight = std::exp(logits[i] - max_logit);
      double r = uniform(rng);
      while (r <= 0.0) r = uniform(rng);
      keys[i] = {std::log(r) / weight, static_cast<std::uint32_t>(i)};
    }
    std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(n), keys.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
    for (std::size_t r = 0; r < n; ++r) pairs.emplace_back(static_cast<std::uint32_t>(u), keys[r].second);
  }

  auto modality_features = [&](Modality m, std::size_t dim) {
    Matrix projection(n_factors, static_cast<Eigen::Index>(dim));
    for (Eigen::Index k = 0; k < projection.size(); ++k) projection.data()[k] = normal(rng) / std::sqrt(static_cast<double>(n_factors));
    Matrix f = out.item_factors * projection;
    if (config.noise_scale > 0) {
      for (Eigen::Index k = 0; k < f.size(); ++k) f.data()[k] += config.noise_scale * normal(rng);
    }
    return ModalityFeatureSet{m, std::move(f)};
  };
  out.features.push_back(modality_features(Modality::kVisual, config.d_v));
  out.features.push_back(modality_features(Modality::kTextual, config.d_t));

  auto interactions = assign_random_split(pairs, config.n_users, RandomSplit{config.seed, 0.8, 0.1, 0.1});
  out.dataset = InteractionDataset(config.n_users, config.n_items, std::move(interactions));
  return out;
}

std::vector<std::uint32_t> head_items(const InteractionDataset& dataset, double head_fraction) {
  if (!(head_fraction > 0 && head_fraction <= 1)) throw ConfigError("head_fraction must be in (0, 1]");
  const std::size_t n = dataset.n_items();
  if (n == 0) return {};
  const std::size_t n_head =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(head_fraction * static_cast<double>(n))));
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const auto& deg = dataset.item_degree();
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return deg[a] > deg[b]; });
  order.resize(std::min(n_head, n));
  return order;
}

DatasetStats compute_stats(const InteractionDataset& dataset, double head_fraction,
                           UnpopularityDefinition definition) {
  DatasetStats stats;
  stats.n_users = dataset.n_users();
  stats.n_items = dataset.n_items();
  stats.n_behaviors = dataset.interactions().size();
  const auto head = head_items(dataset, head_fraction);
  std::vector<bool> is_head(dataset.n_items(), false);
  for (auto i : head) is_head[i] = true;
  if (stats.n_items > 0) {
    stats.unpopularity_item_fraction =
        1.0 - static_cast<double>(head.size()) / static_cast<double>(stats.n_items);
  }
  std::size_t tail_behaviors = 0;
  for (const auto& x : dataset.interactions()) tail_behaviors += is_head[x.item] ? 0 : 1;
  if (stats.n_behaviors > 0) {
    stats.unpopularity_interaction_share =
        static_cast<double>(tail_behaviors) / static_cast<double>(stats.n_behaviors);
  }
  stats.unpopularity = definition == UnpopularityDefinition::kItemFraction ? stats.unpopularity_item_fraction
                                                                          : stats.unpopularity_interaction_share;
  return stats;
}

}  // namespace gume
