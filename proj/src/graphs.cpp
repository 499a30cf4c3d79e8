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

#include "gume/graphs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace gume {

SparseGraph::SparseGraph(std::size_t n_rows, std::size_t n_cols)
    : n_rows_(n_rows), n_cols_(n_cols), offsets_(n_rows + 1, 0) {}

SparseGraph SparseGraph::from_entries(std::size_t n_rows, std::size_t n_cols, std::vector<Entry> entries) {
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return a.row < b.row || (a.row == b.row && a.col < b.col);
  });
  SparseGraph g(n_rows, n_cols);
  g.cols_.reserve(entries.size());
  g.weights_.reserve(entries.size());
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& e = entries[k];
    if (e.row >= n_rows || e.col >= n_cols) {
      throw ValidationError("graph entry (" + std::to_string(e.row) + ", " + std::to_string(e.col) + ") out of range");
    }
    if (k > 0 && entries[k - 1].row == e.row && entries[k - 1].col == e.col) {
      throw ValidationError("duplicate graph entry (" + std::to_string(e.row) + ", " + std::to_string(e.col) + ")");
    }
    if (!std::isfinite(e.weight)) throw ValidationError("non-finite graph weight");
    ++g.offsets_[e.row + 1];
    g.cols_.push_back(e.col);
    g.weights_.push_back(e.weight);
  }
  for (std::size_t r = 0; r < n_rows; ++r) g.offsets_[r + 1] += g.offsets_[r];
  return g;
}

SparseGraph SparseGraph::from_dense(const Matrix& dense) {
  std::vector<Entry> entries;
  for (Eigen::Index r = 0; r < dense.rows(); ++r) {
    for (Eigen::Index c = 0; c < dense.cols(); ++c) {
      if (dense(r, c) != 0.0) {
        entries.push_back({static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c), dense(r, c)});
      }
    }
  }
  return from_entries(static_cast<std::size_t>(dense.rows()), static_cast<std::size_t>(dense.cols()),
                      std::move(entries));
}

bool SparseGraph::contains(std::size_t r, std::size_t c) const {
  const auto cols = row_cols(r);
  return std::binary_search(cols.begin(), cols.end(), static_cast<std::uint32_t>(c));
}

double SparseGraph::weight(std::size_t r, std::size_t c) const {
  const auto cols = row_cols(r);
  const auto it = std::lower_bound(cols.begin(), cols.end(), static_cast<std::uint32_t>(c));
  if (it == cols.end() || *it != c) return 0.0;
  return row_weights(r)[static_cast<std::size_t>(it - cols.begin())];
}

std::vector<SparseGraph::Entry> SparseGraph::entries() const {
  std::vector<Entry> out;
  out.reserve(nnz());
  for (std::size_t r = 0; r < n_rows_; ++r) {
    for (std::size_t k = offsets_[r]; k < offsets_[r + 1]; ++k) {
      out.push_back({static_cast<std::uint32_t>(r), cols_[k], weights_[k]});
    }
  }
  return out;
}

Matrix SparseGraph::multiply(const Matrix& dense) const {
  if (static_cast<std::size_t>(dense.rows()) != n_cols_) {
    throw ShapeError("sparse multiply: " + std::to_string(n_cols_) + " columns vs " + std::to_string(dense.rows()) +
                     " rows");
  }
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(n_rows_), dense.cols());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(n_rows_); ++r) {
    for (std::size_t k = offsets_[r]; k < offsets_[r + 1]; ++k) {
      out.row(r).noalias() += weights_[k] * dense.row(cols_[k]);
    }
  }
  return out;
}

Matrix SparseGraph::multiply_transposed(const Matrix& dense) const {
  if (static_cast<std::size_t>(dense.rows()) != n_rows_) {
    throw ShapeError("sparse transposed multiply: " + std::to_string(n_rows_) + " rows vs " +
                     std::to_string(dense.rows()) + " rows");
  }
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(n_cols_), dense.cols());
  for (std::size_t r = 0; r < n_rows_; ++r) {
    for (std::size_t k = offsets_[r]; k < offsets_[r + 1]; ++k) {
      out.row(cols_[k]).noalias() += weights_[k] * dense.row(static_cast<Eigen::Index>(r));
    }
  }
  return out;
}

SparseGraph SparseGraph::transposed() const {
  auto e = entries();
  for (auto& x : e) std::swap(x.row, x.col);
  return from_entries(n_cols_, n_rows_, std::move(e));
}

Matrix SparseGraph::to_dense() const {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(n_rows_), static_cast<Eigen::Index>(n_cols_));
  for (std::size_t r = 0; r < n_rows_; ++r) {
    for (std::size_t k = offsets_[r]; k < offsets_[r + 1]; ++k) out(static_cast<Eigen::Index>(r), cols_[k]) = weights_[k];
  }
  return out;
}

void SparseGraph::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  const std::uint64_t header[3] = {n_rows_, n_cols_, nnz()};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  std::vector<std::uint32_t> rows;
  rows.reserve(nnz());
  for (std::size_t r = 0; r < n_rows_; ++r) rows.insert(rows.end(), offsets_[r + 1] - offsets_[r], static_cast<std::uint32_t>(r));
  std::vector<float> w(weights_.begin(), weights_.end());
  out.write(reinterpret_cast<const char*>(rows.data()), static_cast<std::streamsize>(rows.size() * 4));
  out.write(reinterpret_cast<const char*>(cols_.data()), static_cast<std::streamsize>(cols_.size() * 4));
  out.write(reinterpret_cast<const char*>(w.data()), static_cast<std::streamsize>(w.size() * 4));
}

SparseGraph SparseGraph::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open graph file " + path.string());
  std::uint64_t header[3] = {0, 0, 0};
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (in.gcount() != sizeof(header)) throw ShapeError("truncated graph header in " + path.string());
  const std::size_t nnz = header[2];
  std::vector<std::uint32_t> rows(nnz);
  std::vector<std::uint32_t> cols(nnz);
  std::vector<float> w(nnz);
  in.read(reinterpret_cast<char*>(rows.data()), static_cast<std::streamsize>(nnz * 4));
  in.read(reinterpret_cast<char*>(cols.data()), static_cast<std::streamsize>(nnz * 4));
  in.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(nnz * 4));
  if (!in || in.peek() != EOF) throw ShapeError("graph file " + path.string() + " size does not match header");
  std::vector<Entry> entries(nnz);
  for (std::size_t k = 0; k < nnz; ++k) entries[k] = {rows[k], cols[k], static_cast<double>(w[k])};
  return from_entries(header[0], header[1], std::move(entries));
}

SparseGraph cosine_topk(const Matrix& features, std::size_t k) {
  if (k == 0) throw ConfigError("top-k requires k >= 1");
  const Eigen::Index n = features.rows();
  Matrix unit = features;
  std::vector<bool> valid(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = unit.row(i).norm();
    valid[static_cast<std::size_t>(i)] = norm > 0.0;
    if (norm > 0.0) unit.row(i) /= norm;
  }

  std::vector<std::vector<SparseGraph::Entry>> per_row(static_cast<std::size_t>(n));
  constexpr Eigen::Index kBlock = 256;
  for (Eigen::Index start = 0; start < n; start += kBlock) {
    const Eigen::Index len = std::min(kBlock, n - start);
    const Matrix sims = unit.middleRows(start, len) * unit.transpose();
#pragma omp parallel for schedule(dynamic, 8)
    for (Eigen::Index b = 0; b < len; ++b) {
      const Eigen::Index i = start + b;
      if (!valid[static_cast<std::size_t>(i)]) continue;
      std::vector<std::pair<double, std::uint32_t>> cand;
      cand.reserve(static_cast<std::size_t>(n));
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i || !valid[static_cast<std::size_t>(j)]) continue;
        cand.emplace_back(sims(b, j), static_cast<std::uint32_t>(j));
      }
      const std::size_t keep = std::min(k, cand.size());
      std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                        [](const auto& x, const auto& y) { return x.first > y.first || (x.first == y.first && x.second < y.second); });
      auto& row = per_row[static_cast<std::size_t>(i)];
      for (std::size_t r = 0; r < keep; ++r) {
        row.push_back({static_cast<std::uint32_t>(i), cand[r].second, cand[r].first});
      }
    }
  }
  std::vector<SparseGraph::Entry> entries;
  for (auto& row : per_row) entries.insert(entries.end(), row.begin(), row.end());
  return SparseGraph::from_entries(static_cast<std::size_t>(n), static_cast<std::size_t>(n), std::move(entries));
}

SparseGraph normalize_sym(const SparseGraph& graph) {
  if (!graph.square()) throw ShapeError("normalize_sym requires a square graph");
  const std::size_t n = graph.n_rows();
  std::vector<double> inv_sqrt(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    double deg = 0.0;
    for (double w : graph.row_weights(r)) deg += std::abs(w);
    inv_sqrt[r] = deg > 0.0 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  auto entries = graph.entries();
  for (auto& e : entries) e.weight = e.weight * inv_sqrt[e.row] * inv_sqrt[e.col];
  return SparseGraph::from_entries(n, n, std::move(entries));
}

SparseGraph drop_negative(const SparseGraph& graph) {
  auto entries = graph.entries();
  std::erase_if(entries, [](const SparseGraph::Entry& e) { return e.weight < 0.0; });
  return SparseGraph::from_entries(graph.n_rows(), graph.n_cols(), std::move(entries));
}

SemanticNeighborSet SemanticNeighborSet::empty(std::size_t n_items) {
  SemanticNeighborSet s;
  s.neighbors.resize(n_items);
  return s;
}

SemanticNeighborSet semantic_neighbors(std::span<const SparseGraph> topk_graphs) {
  if (topk_graphs.empty()) throw ConfigError("semantic_neighbors needs at least one modality graph");
  const std::size_t n = topk_graphs.front().n_rows();
  for (const auto& g : topk_graphs) {
    if (g.n_rows() != n || g.n_cols() != n) throw ShapeError("modality graphs disagree on item count");
  }
  SemanticNeighborSet out = SemanticNeighborSet::empty(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto first = topk_graphs.front().row_cols(i);
    std::vector<std::uint32_t> common(first.begin(), first.end());
    for (std::size_t m = 1; m < topk_graphs.size(); ++m) {
      const auto other = topk_graphs[m].row_cols(i);
      std::vector<std::uint32_t> next;
      std::set_intersection(common.begin(), common.end(), other.begin(), other.end(), std::back_inserter(next));
      common = std::move(next);
    }
    std::erase(common, static_cast<std::uint32_t>(i));
    for (auto j : common) {
      out.edges.emplace_back(static_cast<std::uint32_t>(i), j);
      out.edges.emplace_back(j, static_cast<std::uint32_t>(i));
    }
    out.neighbors[i] = std::move(common);
  }
  std::sort(out.edges.begin(), out.edges.end());
  out.edges.erase(std::unique(out.edges.begin(), out.edges.end()), out.edges.end());
  return out;
}

SparseGraph train_matrix(const InteractionDataset& dataset) {
  std::vector<SparseGraph::Entry> entries;
  entries.reserve(dataset.count(Split::kTrain));
  for (const auto& x : dataset.interactions()) {
    if (x.split == Split::kTrain) entries.push_back({x.user, x.item, 1.0});
  }
  return SparseGraph::from_entries(dataset.n_users(), dataset.n_items(), std::move(entries));
}

SparseGraph enhanced_adjacency_raw(const InteractionDataset& dataset, const SemanticNeighborSet& neighbors) {
  if (neighbors.n_items() != dataset.n_items()) throw ShapeError("neighbour set and dataset disagree on item count");
  const auto n_users = static_cast<std::uint32_t>(dataset.n_users());
  const std::size_t n = dataset.n_nodes();
  std::vector<SparseGraph::Entry> entries;
  for (const auto& x : dataset.interactions()) {
    if (x.split != Split::kTrain) continue;
    entries.push_back({x.user, n_users + x.item, 1.0});
    entries.push_back({n_users + x.item, x.user, 1.0});
  }
  for (const auto& [i, j] : neighbors.edges) entries.push_back({n_users + i, n_users + j, 1.0});
  for (const auto& e : entries) {
    const bool row_user = e.row < n_users;
    const bool col_user = e.col < n_users;
    if (row_user && col_user) throw std::logic_error("user-user entry in enhanced adjacency");
  }
  return SparseGraph::from_entries(n, n, std::move(entries));
}

SparseGraph build_enhanced_adjacency(const InteractionDataset& dataset, const SemanticNeighborSet& neighbors) {
  return normalize_sym(enhanced_adjacency_raw(dataset, neighbors));
}

std::vector<DegreeChange> tail_degree_report(const InteractionDataset& dataset, const SemanticNeighborSet& neighbors) {
  if (neighbors.n_items() != dataset.n_items()) throw ShapeError("neighbour set and dataset disagree on item count");
  std::vector<DegreeChange> out(dataset.n_items());
  for (std::size_t i = 0; i < out.size(); ++i) out[i].before = out[i].after = dataset.item_degree()[i];
  for (const auto& [i, j] : neighbors.edges) ++out[i].after;
  return out;
}

GraphBundle build_graphs(const InteractionDataset& dataset, std::span<const ModalityFeatureSet> features,
                         std::size_t knn_k, bool graph_enhancement) {
  if (features.empty()) throw ConfigError("at least one modality is required");
  GraphBundle bundle;
  for (const auto& fs : features) {
    validate_features(fs, dataset.n_items());
    bundle.topk.push_back(cosine_topk(fs.matrix, knn_k));
    bundle.item_graphs.push_back(normalize_sym(drop_negative(bundle.topk.back())));
  }
  bundle.neighbors = graph_enhancement ? semantic_neighbors(bundle.topk) : SemanticNeighborSet::empty(dataset.n_items());
  bundle.train = train_matrix(dataset);
  bundle.adjacency = build_enhanced_adjacency(dataset, bundle.neighbors);
  return bundle;
}

}  // namespace gume
