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

#include "gume/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gume {

namespace fs = std::filesystem;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex(std::uint64_t v) { return fmt::format("{:016x}", v); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

SplitMode split_mode_from(const std::string& s) {
  if (s == "auto") return SplitMode::kAuto;
  if (s == "column") return SplitMode::kColumn;
  if (s == "random") return SplitMode::kRandom;
  throw UsageError("--split must be auto, column or random");
}

void apply_thread_cap() {
  const char* env = std::getenv("GUME_THREADS");
  if (env == nullptr || *env == '\0') return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw UsageError("GUME_THREADS must be a positive integer");
#ifdef _OPENMP
  omp_set_num_threads(static_cast<int>(n));
#endif
  Eigen::setNbThreads(static_cast<int>(n));
}

// Training flags shared by train, ablate, grid and tail-report.
struct ConfigFlags {
  std::string preset = "default";
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> dim;
  std::optional<std::size_t> ui_layers;
  std::optional<std::size_t> item_graph_layers;
  std::optional<std::size_t> knn_k;
  std::optional<std::size_t> patience;
  std::optional<double> learning_rate;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<double> gamma;
  std::optional<double> delta;
  std::optional<double> tau;
  std::optional<double> tau_bm;
  std::optional<double> tau_um;
  std::optional<std::string> user_agg;
  bool no_graph_enhancement = false;
  bool no_alignment = false;
  bool no_user_modality = false;
  bool full_batch = false;
  bool raw_nce = false;

  void attach(CLI::App* app) {
    app->add_option("--preset", preset, "Built-in settings: default, synthetic, baby, sports, clothing, electronics");
    app->add_option("--config", config, "JSON config file (overrides the preset)");
    app->add_option("--seed", seed);
    app->add_option("--epochs", max_epochs, "max_epochs");
    app->add_option("--batch-size", batch_size);
    app->add_option("--dim", dim, "embedding_dim");
    app->add_option("--layers", ui_layers, "ui_layers");
    app->add_option("--item-layers", item_graph_layers, "item_graph_layers");
    app->add_option("--k", knn_k, "knn_k");
    app->add_option("--patience", patience, "early_stop_patience");
    app->add_option("--lr", learning_rate, "learning_rate");
    app->add_option("--alpha", alpha);
    app->add_option("--beta", beta);
    app->add_option("--gamma", gamma);
    app->add_option("--delta", delta);
    app->add_option("--tau", tau);
    app->add_option("--tau-bm", tau_bm);
    app->add_option("--tau-um", tau_um);
    app->add_option("--user-agg", user_agg, "sum or mean");
    app->add_flag("--no-graph-enhancement", no_graph_enhancement);
    app->add_flag("--no-alignment", no_alignment);
    app->add_flag("--no-user-modality", no_user_modality);
    app->add_flag("--full-batch", full_batch);
    app->add_flag("--raw-nce", raw_nce, "Skip L2 normalization inside InfoNCE");
  }

  nlohmann::json overrides() const {
    nlohmann::json j = nlohmann::json::object();
    auto put = [&](const char* key, const auto& opt) {
      if (opt) j[key] = *opt;
    };
    put("seed", seed);
    put("max_epochs", max_epochs);
    put("batch_size", batch_size);
    put("embedding_dim", dim);
    put("ui_layers", ui_layers);
    put("item_graph_layers", item_graph_layers);
    put("knn_k", knn_k);
    put("early_stop_patience", patience);
    put("learning_rate", learning_rate);
    put("alpha", alpha);
    put("beta", beta);
    put("gamma", gamma);
    put("delta", delta);
    put("tau", tau);
    put("tau_bm", tau_bm);
    put("tau_um", tau_um);
    put("user_agg", user_agg);
    if (no_graph_enhancement) j["no_graph_enhancement"] = true;
    if (no_alignment) j["no_alignment"] = true;
    if (no_user_modality) j["no_user_modality"] = true;
    if (full_batch) j["full_batch"] = true;
    if (raw_nce) j["nce_normalize"] = false;
    return j;
  }

  TrainConfig resolve(RunManifest& manifest) const {
    std::optional<fs::path> file;
    if (config) {
      file = *config;
      manifest.add_input(*file);
    }
    TrainConfig c = resolve_config(preset, file, overrides());
    manifest.config = c.to_json();
    manifest.seed = c.seed;
    return c;
  }
};

struct DataFlags {
  std::string data;
  std::string split = "auto";
  std::uint64_t split_seed = 0;

  void attach(CLI::App* app) {
    app->add_option("--data", data, "Directory with interactions.tsv and features.json")->required();
    app->add_option("--split", split, "auto, column or random");
    app->add_option("--split-seed", split_seed, "Seed of the random 8:1:1 split");
  }

  LoadedData load(RunManifest& manifest) const {
    const DataDir dir = locate_data(data);
    manifest.add_input(dir.interactions);
    manifest.add_input(dir.features);
    return load_data(dir, split_mode_from(split), split_seed);
  }
};

void log_line(const std::string& s) { std::cerr << s << std::endl; }

MetricsReport evaluate_params(const ParameterSet& params, const TrainConfig& config, const InteractionDataset& dataset,
                              std::span<const ModalityFeatureSet> features, const GraphBundle& graphs,
                              std::vector<std::size_t> ks = {10, 20}) {
  const ModelInputs inputs = make_model_inputs(features, graphs);
  const ForwardState state = forward(params, inputs, config.model_options());
  return rank_and_score(state_scorer(state), dataset, Split::kTest, std::move(ks), 20);
}

std::vector<std::size_t> parse_ks(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& part : split_list(s)) {
    try {
      out.push_back(std::stoul(part));
    } catch (const std::exception&) {
      throw UsageError("--ks expects a comma-separated list of integers");
    }
  }
  if (out.empty()) throw UsageError("--ks is empty");
  return out;
}

std::vector<double> parse_doubles(const std::string& s, const char* flag) {
  std::vector<double> out;
  for (const auto& part : split_list(s)) {
    try {
      out.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw UsageError(std::string(flag) + " expects a comma-separated list of numbers");
    }
  }
  return out;
}

// ---- subcommands ----

struct SynthFlags {
  std::string out;
  SynthConfig config;
};

void run_synth(const SynthFlags& f, RunManifest& manifest) {
  const fs::path out(f.out);
  fs::create_directories(out);
  const SyntheticData data = synthesize(f.config);
  save_interactions(data.dataset, out / "interactions.tsv");
  save_index_maps(data.dataset, out);
  save_features(data.features, out);
  const DatasetStats stats = compute_stats(data.dataset);
  write_json(out / "stats.json", {{"n_users", stats.n_users},
                                  {"n_items", stats.n_items},
                                  {"n_behaviors", stats.n_behaviors},
                                  {"unpopularity_item_fraction", stats.unpopularity_item_fraction},
                                  {"unpopularity_interaction_share", stats.unpopularity_interaction_share},
                                  {"head_interaction_share", 1.0 - stats.unpopularity_interaction_share}});
  manifest.seed = f.config.seed;
  manifest.config = {{"n_users", f.config.n_users},
                     {"n_items", f.config.n_items},
                     {"n_factors", f.config.n_factors},
                     {"d_v", f.config.d_v},
                     {"d_t", f.config.d_t},
                     {"popularity_exponent", f.config.popularity_exponent},
                     {"noise_scale", f.config.noise_scale},
                     {"taste_sharpness", f.config.taste_sharpness},
                     {"mean_activity", f.config.mean_activity},
                     {"min_activity", f.config.min_activity},
                     {"seed", f.config.seed}};
  manifest.finalize();
  manifest.write(out);
  log_line(fmt::format("synth: {} users, {} items, {} interactions -> {}", stats.n_users, stats.n_items,
                       stats.n_behaviors, out.string()));
}

struct PrepareFlags {
  DataFlags data;
  std::optional<std::string> out;
  std::size_t k = 10;
  bool no_graph_enhancement = false;
};

void run_prepare(const PrepareFlags& f, RunManifest& manifest) {
  const LoadedData loaded = f.data.load(manifest);
  const fs::path out = f.out ? fs::path(*f.out) : fs::path(f.data.data);
  fs::create_directories(out);
  const GraphBundle graphs = build_graphs(loaded.dataset, loaded.features, f.k, !f.no_graph_enhancement);
  for (std::size_t m = 0; m < loaded.features.size(); ++m) {
    graphs.item_graphs[m].save(out / (std::string(to_string(loaded.features[m].modality)) + ".graph"));
  }
  graphs.adjacency.save(out / "enhanced.graph");

  std::ostringstream tsv;
  tsv << "item\tneighbor\titem_token\tneighbor_token\n";
  const auto& tokens = loaded.dataset.item_tokens();
  for (const auto& [i, j] : graphs.neighbors.edges) {
    tsv << i << '\t' << j << '\t' << (tokens.empty() ? std::to_string(i) : tokens[i]) << '\t'
        << (tokens.empty() ? std::to_string(j) : tokens[j]) << '\n';
  }
  write_text(out / "neighbors.tsv", tsv.str());
  save_index_maps(loaded.dataset, out);

  const auto degrees = tail_degree_report(loaded.dataset, graphs.neighbors);
  const auto groups = degree_groups(loaded.dataset);
  std::ostringstream deg;
  deg << "group\tn_items\tmean_degree_before\tmean_degree_after\n";
  for (std::size_t g = 0; g < groups.size(); ++g) {
    double before = 0.0;
    double after = 0.0;
    for (auto i : groups[g]) {
      before += static_cast<double>(degrees[i].before);
      after += static_cast<double>(degrees[i].after);
    }
    const auto n = static_cast<double>(groups[g].size());
    deg << fmt::format("{}\t{}\t{:.6f}\t{:.6f}\n", g + 1, groups[g].size(), before / n, after / n);
  }
  write_text(out / "degree_change.tsv", deg.str());

  manifest.config = {{"knn_k", f.k}, {"graph_enhancement", !f.no_graph_enhancement}};
  manifest.finalize();
  // Keep the generator's manifest when writing next to the data.
  manifest.write(out, f.out ? "manifest.json" : "prepare_manifest.json");
  log_line(fmt::format("prepare: {} semantic-neighbour edges, adjacency nnz {} -> {}",
                       graphs.neighbors.edges.size() / 2, graphs.adjacency.nnz(), out.string()));
}

struct TrainFlags {
  DataFlags data;
  ConfigFlags config;
  std::string out;
  std::string checkpoint_dtype = "float64-le";
};

void run_train(const TrainFlags& f, RunManifest& manifest) {
  const LoadedData loaded = f.data.load(manifest);
  const TrainConfig config = f.config.resolve(manifest);
  const fs::path out(f.out);
  fs::create_directories(out);
  config.save(out / "config.json");

  const GraphBundle graphs = build_graphs(loaded.dataset, loaded.features, config.knn_k, !config.no_graph_enhancement);
  std::ofstream log(out / "train_report.jsonl");
  const TrainResult result = train(TrainingData{&loaded.dataset, loaded.features, &graphs}, config, &log);
  save_checkpoint(out / "checkpoint", result.best_params, config, f.checkpoint_dtype);
  write_json(out / "summary.json", result.report.summary_json());

  const MetricsReport test = evaluate_params(result.best_params, config, loaded.dataset, loaded.features, graphs);
  write_json(out / "metrics.json", test.to_json());
  write_text(out / "tail_groups.tsv", group_tsv(test));
  manifest.finalize();
  manifest.write(out);
  log_line(fmt::format("train: best valid recall@20 {:.4f} at epoch {}; test recall@20 {:.4f} ndcg@20 {:.4f}",
                       result.report.best_valid_recall, result.report.best_epoch, test.recall(20), test.ndcg(20)));
}

struct EvaluateFlags {
  DataFlags data;
  std::string checkpoint;
  std::string out;
  std::string ks = "10,20";
  bool group_csv = false;
};

void run_evaluate(const EvaluateFlags& f, RunManifest& manifest) {
  const LoadedData loaded = f.data.load(manifest);
  manifest.add_input(fs::path(f.checkpoint) / "manifest.json");
  const Checkpoint ck = load_checkpoint(f.checkpoint);
  manifest.config = ck.config.to_json();
  manifest.seed = ck.config.seed;
  if (ck.params.n_users() != loaded.dataset.n_users() || ck.params.n_items() != loaded.dataset.n_items()) {
    throw ShapeError("checkpoint was trained on a dataset of a different size");
  }
  const fs::path out(f.out);
  fs::create_directories(out);
  const auto ks = parse_ks(f.ks);
  const GraphBundle graphs =
      build_graphs(loaded.dataset, loaded.features, ck.config.knn_k, !ck.config.no_graph_enhancement);
  const MetricsReport model = evaluate_params(ck.params, ck.config, loaded.dataset, loaded.features, graphs, ks);
  const MetricsReport pop = rank_and_score(popularity_scorer(loaded.dataset), loaded.dataset, Split::kTest, ks, 20);

  write_json(out / "metrics.json", model.to_json());
  write_text(out / "tail_groups.tsv", group_tsv(model));
  const std::vector<std::pair<std::string, MetricsReport>> runs{{"model", model}, {"popularity", pop}};
  const ComparisonTable table = compare_runs(runs);
  write_text(out / "comparison.tsv", table.tsv);
  write_json(out / "comparison.json", table.json);
  if (f.group_csv) write_text(out / "groups.csv", group_csv(model));
  manifest.finalize();
  manifest.write(out);
  log_line(fmt::format("evaluate: recall@20 {:.4f} (popularity {:.4f})", model.recall(20), pop.recall(20)));
}

struct AblateFlags {
  DataFlags data;
  ConfigFlags config;
  std::string out;
  std::string variants = "ge,al,um";
  std::string seeds;
};

void run_ablate(const AblateFlags& f, RunManifest& manifest) {
  const LoadedData loaded = f.data.load(manifest);
  const TrainConfig base = f.config.resolve(manifest);
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_list(f.seeds)) {
    try {
      seeds.push_back(std::stoull(s));
    } catch (const std::exception&) {
      throw UsageError("--seeds expects a comma-separated list of integers");
    }
  }
  if (seeds.empty()) seeds.push_back(base.seed);
  const auto variants = split_list(f.variants);
  const fs::path out(f.out);
  fs::create_directories(out);

  std::ofstream log(out / "ablation_log.jsonl");
  const AblationResult result = run_ablation(loaded.dataset, loaded.features, base, variants, seeds, &log);

  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : result.runs) {
    runs.push_back({{"variant", r.label}, {"seed", r.seed}, {"summary", r.report.summary_json()}, {"test", r.test.to_json()}});
  }
  std::vector<std::pair<std::string, MetricsReport>> table_rows;
  nlohmann::json means = nlohmann::json::object();
  for (std::size_t k = 0; k < result.labels.size(); ++k) {
    table_rows.emplace_back(result.labels[k], result.mean_by_label[k]);
    means[result.labels[k]] = result.mean_by_label[k].to_json();
    std::string file_label = result.labels[k];
    std::erase(file_label, '/');
    write_text(out / ("tail_groups_" + file_label + ".tsv"), group_tsv(result.mean_by_label[k]));
  }
  write_json(out / "ablation.json", {{"runs", runs}, {"mean", means}});
  const ComparisonTable table = compare_runs(table_rows);
  write_text(out / "comparison.tsv", table.tsv);
  write_json(out / "comparison.json", table.json);
  manifest.finalize();
  manifest.write(out);
  for (std::size_t k = 0; k < result.labels.size(); ++k) {
    log_line(fmt::format("ablate: {:<8} recall@20 {:.4f} tail(4-5) recall@20 {:.4f}", result.labels[k],
                         result.mean_by_label[k].recall(20), tail_recall(result.mean_by_label[k])));
  }
}

struct GradcheckFlags {
  std::size_t entries = 60;
  double h = 1e-5;
  std::uint64_t seed = 7;
  double tolerance = 1e-4;
  std::optional<std::string> out;
};

bool run_gradcheck(const GradcheckFlags& f, RunManifest& manifest) {
  GradcheckSpec spec;
  spec.n_entries = f.entries;
  spec.h = f.h;
  spec.seed = f.seed;
  const GradcheckReport report = gradcheck(spec);
  nlohmann::json j = report.to_json();
  j["tolerance"] = f.tolerance;
  j["passed"] = report.passed(f.tolerance);
  std::cout << fmt::format("gradcheck: {} entries, max relative error {:.3e} ({})", report.entries.size(),
                           report.max_rel_error, report.passed(f.tolerance) ? "pass" : "FAIL")
            << std::endl;
  if (f.out) {
    const fs::path out(*f.out);
    fs::create_directories(out);
    write_json(out / "gradcheck.json", j);
    manifest.seed = f.seed;
    manifest.config = {{"entries", f.entries}, {"h", f.h}, {"tolerance", f.tolerance}};
    manifest.finalize();
    manifest.write(out);
  }
  return report.passed(f.tolerance);
}

struct TailReportFlags {
  DataFlags data;
  std::optional<std::string> checkpoint;
  std::string out;
  std::size_t k = 20;
  std::size_t knn_k = 10;
};

void run_tail_report(const TailReportFlags& f, RunManifest& manifest) {
  const LoadedData loaded = f.data.load(manifest);
  const fs::path out(f.out);
  fs::create_directories(out);
  std::size_t knn_k = f.knn_k;
  std::optional<Checkpoint> ck;
  if (f.checkpoint) {
    manifest.add_input(fs::path(*f.checkpoint) / "manifest.json");
    ck = load_checkpoint(*f.checkpoint);
    knn_k = ck->config.knn_k;
    manifest.config = ck->config.to_json();
  }
  const GraphBundle enhanced = build_graphs(loaded.dataset, loaded.features, knn_k, true);
  const auto degrees = tail_degree_report(loaded.dataset, enhanced.neighbors);
  const auto groups = degree_groups(loaded.dataset);

  nlohmann::json j;
  j["k"] = f.k;
  j["groups"] = nlohmann::json::array();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    double before = 0.0;
    double after = 0.0;
    for (auto i : groups[g]) {
      before += static_cast<double>(degrees[i].before);
      after += static_cast<double>(degrees[i].after);
    }
    const auto n = static_cast<double>(groups[g].size());
    j["groups"].push_back({{"group", g + 1}, {"n_items", groups[g].size()}, {"mean_degree_before", before / n},
                           {"mean_degree_after", after / n}});
  }
  const MetricsReport pop = rank_and_score(popularity_scorer(loaded.dataset), loaded.dataset, Split::kTest, {f.k}, f.k);
  j["popularity"] = pop.to_json();
  write_text(out / "tail_groups_popularity.tsv", group_tsv(pop));
  if (ck) {
    const GraphBundle graphs = ck->config.no_graph_enhancement
                                   ? build_graphs(loaded.dataset, loaded.features, knn_k, false)
                                   : enhanced;
    const MetricsReport model = evaluate_params(ck->params, ck->config, loaded.dataset, loaded.features, graphs, {f.k});
    j["model"] = model.to_json();
    write_text(out / "tail_groups.tsv", group_tsv(model));
    write_text(out / "groups.csv", group_csv(model));
  }
  write_json(out / "tail_report.json", j);
  manifest.finalize();
  manifest.write(out);
  log_line("tail-report: written to " + out.string());
}

struct GridFlags {
  DataFlags data;
  ConfigFlags config;
  std::string out;
  std::optional<std::string> alphas;
  std::optional<std::string> betas;
  std::optional<std::string> gammas;
  std::optional<std::string> taus;
  std::optional<std::size_t> trial_epochs;
  bool dry_run = false;
};

void run_grid(const GridFlags& f, RunManifest& manifest) {
  GridSpec spec;
  if (f.alphas) spec.alphas = parse_doubles(*f.alphas, "--alphas");
  if (f.betas) spec.betas = parse_doubles(*f.betas, "--betas");
  if (f.gammas) spec.gammas = parse_doubles(*f.gammas, "--gammas");
  if (f.taus) spec.taus = parse_doubles(*f.taus, "--taus");
  spec.max_epochs = f.trial_epochs;
  const fs::path out(f.out);
  fs::create_directories(out);
  if (f.dry_run) {
    const TrainConfig base = f.config.resolve(manifest);
    const auto configs = enumerate_grid(base, spec);
    nlohmann::json listing = nlohmann::json::array();
    for (const auto& c : configs) listing.push_back(c.to_json());
    write_json(out / "grid_plan.json", {{"combinations", configs.size()}, {"configs", listing}});
    manifest.finalize();
    manifest.write(out);
    std::cout << configs.size() << " combinations" << std::endl;
    return;
  }
  const LoadedData loaded = f.data.load(manifest);
  const TrainConfig base = f.config.resolve(manifest);
  std::ofstream log(out / "grid_log.jsonl");
  const GridResult result = grid_search(loaded.dataset, loaded.features, base, spec, &log);
  std::ostringstream tsv;
  tsv << "rank\talpha\tbeta\tgamma\ttau\tvalid_recall@20\tbest_epoch\n";
  for (std::size_t r = 0; r < result.leaderboard.size(); ++r) {
    const auto& e = result.leaderboard[r];
    tsv << fmt::format("{}\t{}\t{}\t{}\t{}\t{:.6f}\t{}\n", r + 1, e.config.objective.alpha, e.config.objective.beta,
                       e.config.objective.gamma, e.config.objective.tau, e.valid_recall, e.best_epoch);
  }
  write_text(out / "leaderboard.tsv", tsv.str());
  result.best().config.save(out / "best_config.json");
  manifest.finalize();
  manifest.write(out);
  log_line(fmt::format("grid: {} trials, best valid recall@20 {:.4f}", result.leaderboard.size(),
                       result.best().valid_recall));
}

}  // namespace

// ---- manifest ----

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::uint64_t fnv1a_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    hash = fnv1a(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())), hash);
  }
  return hash;
}

void RunManifest::add_input(const fs::path& path) { input_hashes.emplace_back(path.string(), hex(fnv1a_file(path))); }

void RunManifest::finalize() {
  std::string key = command + '\n' + config.dump() + '\n' + std::to_string(seed);
  for (const auto& [path, digest] : input_hashes) key += '\n' + digest;
  run_id = hex(fnv1a(key));
  finished_at = utc_now();
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json inputs = nlohmann::json::array();
  for (const auto& [path, digest] : input_hashes) inputs.push_back({{"path", path}, {"fnv1a64", digest}});
  return {{"run_id", run_id}, {"command", command},       {"argv", argv},
          {"seed", seed},     {"config", config},         {"inputs", inputs},
          {"started_at", started_at}, {"finished_at", finished_at}};
}

void RunManifest::write(const fs::path& dir, const std::string& name) const { write_json(dir / name, to_json()); }

// ---- data and config ----

DataDir locate_data(const fs::path& dir) {
  DataDir d{dir, dir / "interactions.tsv", dir / "features.json"};
  if (!fs::exists(d.interactions)) throw ValidationError("missing " + d.interactions.string());
  if (!fs::exists(d.features)) throw ValidationError("missing " + d.features.string());
  return d;
}

LoadedData load_data(const DataDir& dir, SplitMode mode, std::uint64_t split_seed) {
  if (mode == SplitMode::kAuto) {
    std::ifstream in(dir.interactions);
    std::string header;
    std::getline(in, header);
    mode = header.find("\tsplit") != std::string::npos ? SplitMode::kColumn : SplitMode::kRandom;
  }
  SplitPolicy policy = ColumnSplit{};
  if (mode == SplitMode::kRandom) policy = RandomSplit{split_seed, 0.8, 0.1, 0.1};
  std::optional<IndexMaps> maps;
  if (fs::exists(dir.root / "users.tsv") && fs::exists(dir.root / "items.tsv")) maps = load_index_maps(dir.root);
  LoadedData out;
  out.dataset = load_interactions(dir.interactions, policy, maps ? &*maps : nullptr);
  out.features = load_features(dir.features, out.dataset);
  return out;
}

TrainConfig resolve_config(const std::string& preset_name, const std::optional<fs::path>& file,
                           const nlohmann::json& overrides) {
  TrainConfig c = preset(preset_name);
  if (file) c = TrainConfig::load(*file, c);
  return TrainConfig::from_json(overrides, c);
}

// ---- experiments ----

const MetricsReport& AblationResult::mean(const std::string& label) const {
  for (std::size_t k = 0; k < labels.size(); ++k) {
    if (labels[k] == label) return mean_by_label[k];
  }
  throw ValidationError("no ablation variant '" + label + "'");
}

double tail_recall(const MetricsReport& report, std::size_t first, std::size_t last) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& g : report.groups) {
    if (g.group < first || g.group > last || !g.recall) continue;
    sum += *g.recall;
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

AblationResult run_ablation(const InteractionDataset& dataset, std::span<const ModalityFeatureSet> features,
                            const TrainConfig& base, const std::vector<std::string>& variants,
                            const std::vector<std::uint64_t>& seeds, std::ostream* log) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  std::vector<std::pair<std::string, TrainConfig>> plan{{"full", base}};
  plan.front().second.no_graph_enhancement = false;
  plan.front().second.no_alignment = false;
  plan.front().second.no_user_modality = false;
  for (const auto& v : variants) {
    TrainConfig c = plan.front().second;
    if (v == "ge") c.no_graph_enhancement = true;
    else if (v == "al") c.no_alignment = true;
    else if (v == "um") c.no_user_modality = true;
    else throw UsageError("unknown ablation variant '" + v + "' (expected ge, al or um)");
    plan.emplace_back("w/o_" + v, c);
  }

  const GraphBundle enhanced = build_graphs(dataset, features, base.knn_k, true);
  std::optional<GraphBundle> plain;
  AblationResult result;
  for (const auto& [label, config] : plan) {
    result.labels.push_back(label);
    std::vector<MetricsReport> per_seed;
    for (auto seed : seeds) {
      TrainConfig c = config;
      c.seed = seed;
      if (c.no_graph_enhancement && !plain) plain = build_graphs(dataset, features, base.knn_k, false);
      const GraphBundle& graphs = c.no_graph_enhancement ? *plain : enhanced;
      const TrainResult trained = train(TrainingData{&dataset, features, &graphs}, c);
      const MetricsReport test = evaluate_params(trained.best_params, c, dataset, features, graphs);
      if (log != nullptr) {
        *log << nlohmann::json{{"variant", label}, {"seed", seed}, {"summary", trained.report.summary_json()},
                               {"test", test.to_json()}}.dump()
             << std::endl;
      }
      per_seed.push_back(test);
      result.runs.push_back({label, seed, trained.report, test});
    }
    result.mean_by_label.push_back(average_reports(per_seed));
  }
  return result;
}

std::vector<TrainConfig> enumerate_grid(const TrainConfig& base, const GridSpec& spec) {
  if (spec.alphas.empty() || spec.betas.empty() || spec.gammas.empty() || spec.taus.empty()) {
    throw ConfigError("every grid axis needs at least one value");
  }
  std::vector<TrainConfig> out;
  for (double a : spec.alphas) {
    for (double b : spec.betas) {
      for (double g : spec.gammas) {
        for (double t : spec.taus) {
          TrainConfig c = base;
          c.objective.alpha = a;
          c.objective.beta = b;
          c.objective.gamma = g;
          c.objective.tau = t;
          c.objective.tau_bm.reset();
          c.objective.tau_um.reset();
          if (spec.max_epochs) c.max_epochs = *spec.max_epochs;
          c.validate();
          out.push_back(c);
        }
      }
    }
  }
  return out;
}

GridResult grid_search(const InteractionDataset& dataset, std::span<const ModalityFeatureSet> features,
                       const TrainConfig& base, const GridSpec& spec, std::ostream* log) {
  const auto configs = enumerate_grid(base, spec);
  const GraphBundle graphs = build_graphs(dataset, features, base.knn_k, !base.no_graph_enhancement);
  GridResult result;
  for (const auto& c : configs) {
    const TrainResult trained = train(TrainingData{&dataset, features, &graphs}, c);
    result.leaderboard.push_back({c, trained.report.best_valid_recall, trained.report.best_epoch});
    if (log != nullptr) {
      *log << nlohmann::json{{"config", c.to_json()}, {"valid_recall@20", trained.report.best_valid_recall}}.dump()
           << std::endl;
    }
  }
  std::stable_sort(result.leaderboard.begin(), result.leaderboard.end(),
                   [](const GridEntry& a, const GridEntry& b) { return a.valid_recall > b.valid_recall; });
  return result;
}

// ---- dispatch ----

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"GUME multimodal long-tail recommender"};
  app.name("gume");
  app.require_subcommand(1);

  SynthFlags synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic long-tail dataset with two modalities");
  synth_cmd->add_option("--out", synth.out)->required();
  synth_cmd->add_option("--users", synth.config.n_users);
  synth_cmd->add_option("--items", synth.config.n_items);
  synth_cmd->add_option("--factors", synth.config.n_factors);
  synth_cmd->add_option("--dv", synth.config.d_v, "Visual feature width");
  synth_cmd->add_option("--dt", synth.config.d_t, "Textual feature width");
  synth_cmd->add_option("--exponent", synth.config.popularity_exponent);
  synth_cmd->add_option("--noise", synth.config.noise_scale);
  synth_cmd->add_option("--sharpness", synth.config.taste_sharpness);
  synth_cmd->add_option("--mean-activity", synth.config.mean_activity);
  synth_cmd->add_option("--min-activity", synth.config.min_activity);
  synth_cmd->add_option("--seed", synth.config.seed);

  PrepareFlags prepare;
  auto* prepare_cmd = app.add_subcommand("prepare", "Build item graphs, semantic neighbours and the enhanced graph");
  prepare.data.attach(prepare_cmd);
  prepare_cmd->add_option("--out", prepare.out, "Output directory (default: the data directory)");
  prepare_cmd->add_option("--k", prepare.k, "Top-K per item");
  prepare_cmd->add_flag("--no-graph-enhancement", prepare.no_graph_enhancement);

  TrainFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_flags.data.attach(train_cmd);
  train_flags.config.attach(train_cmd);
  train_cmd->add_option("--out", train_flags.out)->required();
  train_cmd->add_option("--checkpoint-dtype", train_flags.checkpoint_dtype, "float64-le or float32-le");

  EvaluateFlags evaluate;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Full-ranking test metrics of a checkpoint");
  evaluate.data.attach(evaluate_cmd);
  evaluate_cmd->add_option("--checkpoint", evaluate.checkpoint)->required();
  evaluate_cmd->add_option("--out", evaluate.out)->required();
  evaluate_cmd->add_option("--ks", evaluate.ks, "Comma-separated cutoffs");
  evaluate_cmd->add_flag("--group-csv", evaluate.group_csv, "Also write per-group CSV");

  AblateFlags ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train the full model and its ablations");
  ablate.data.attach(ablate_cmd);
  ablate.config.attach(ablate_cmd);
  ablate_cmd->add_option("--out", ablate.out)->required();
  ablate_cmd->add_option("--variants", ablate.variants, "Subset of ge,al,um");
  ablate_cmd->add_option("--seeds", ablate.seeds, "Comma-separated seeds (default: config seed)");

  GradcheckFlags gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  gc_cmd->add_option("--entries", gc.entries);
  gc_cmd->add_option("--step", gc.h, "Finite-difference step");
  gc_cmd->add_option("--seed", gc.seed);
  gc_cmd->add_option("--tolerance", gc.tolerance);
  gc_cmd->add_option("--out", gc.out);

  TailReportFlags tail;
  auto* tail_cmd = app.add_subcommand("tail-report", "Degree change and per-group metrics for tail items");
  tail.data.attach(tail_cmd);
  tail_cmd->add_option("--checkpoint", tail.checkpoint);
  tail_cmd->add_option("--out", tail.out)->required();
  tail_cmd->add_option("--k", tail.k, "Cutoff");
  tail_cmd->add_option("--knn-k", tail.knn_k, "Top-K used when no checkpoint is given");

  GridFlags grid;
  auto* grid_cmd = app.add_subcommand("grid", "Grid search over loss weights and temperature");
  grid.data.attach(grid_cmd);
  grid.config.attach(grid_cmd);
  grid_cmd->add_option("--out", grid.out)->required();
  grid_cmd->add_option("--alphas", grid.alphas);
  grid_cmd->add_option("--betas", grid.betas);
  grid_cmd->add_option("--gammas", grid.gammas);
  grid_cmd->add_option("--taus", grid.taus);
  grid_cmd->add_option("--trial-epochs", grid.trial_epochs, "max_epochs per trial");
  grid_cmd->add_flag("--dry-run", grid.dry_run, "Only count the combinations");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::kUsage);
  }

  RunManifest manifest;
  manifest.argv = args;
  manifest.started_at = utc_now();
  try {
    apply_thread_cap();
    if (*synth_cmd) {
      manifest.command = "synth";
      run_synth(synth, manifest);
    } else if (*prepare_cmd) {
      manifest.command = "prepare";
      run_prepare(prepare, manifest);
    } else if (*train_cmd) {
      manifest.command = "train";
      run_train(train_flags, manifest);
    } else if (*evaluate_cmd) {
      manifest.command = "evaluate";
      run_evaluate(evaluate, manifest);
    } else if (*ablate_cmd) {
      manifest.command = "ablate";
      run_ablate(ablate, manifest);
    } else if (*gc_cmd) {
      manifest.command = "gradcheck";
      if (!run_gradcheck(gc, manifest)) return static_cast<int>(ExitCode::kValidation);
    } else if (*tail_cmd) {
      manifest.command = "tail-report";
      run_tail_report(tail, manifest);
    } else if (*grid_cmd) {
      manifest.command = "grid";
      run_grid(grid, manifest);
    }
  } catch (const DivergenceError& e) {
    std::cerr << "gume: divergence in " << e.term() << ": " << e.what() << std::endl;
    return static_cast<int>(e.code());
  } catch (const Error& e) {
    std::cerr << "gume: " << e.what() << std::endl;
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "gume: " << e.what() << std::endl;
    return static_cast<int>(ExitCode::kValidation);
  }
  return static_cast<int>(ExitCode::kOk);
}

int dispatch(int argc, char** argv) {
  std::vector<std::string> args;
  for (int k = 1; k < argc; ++k) args.emplace_back(argv[k]);
  return dispatch(args);
}

}  // namespace gume
