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
#include <utility>
#include <vector>

#include "gume/common.hpp"
#include "gume/dataio.hpp"

namespace gume {

// Compressed sparse row matrix. Entries within a row are sorted by column and
// unique. Explicitly stored zeros are kept: a top-K neighbour with cosine 0 is
// still a neighbour.
class SparseGraph {
 public:
  struct Entry {
    std::uint32_t row = 0;
    std::uint32_t col = 0;
    double weight = 0.0;
  };

  SparseGraph() = default;
  SparseGraph(std::size_t n_rows, std::size_t n_cols);

  // Throws ValidationError on out-of-range indices, duplicates or non-finite weights.
  static SparseGraph from_entries(std::size_t n_rows, std::size_t n_cols, std::vector<Entry> entries);
  static SparseGraph from_dense(const Matrix& dense);  // keeps nonzeros only

  std::size_t n_rows() const { return n_rows_; }
  std::size_t n_cols() const { return n_cols_; }
  std::size_t nnz() const { return cols_.size(); }
  bool square() const { return n_rows_ == n_cols_; }

  std::span<const std::uint32_t> row_cols(std::size_t r) const {
    return std::span<const std::uint32_t>(cols_).subspan(offsets_[r], offsets_[r + 1] - offsets_[r]);
  }
  std::span<const double> row_weights(std::size_t r) const {
    return std::span<const double>(weights_).subspan(offsets_[r], offsets_[r + 1] - offsets_[r]);
  }

  bool contains(std::size_t r, std::size_t c) const;
  double weight(std::size_t r, std::size_t c) const;  // 0 when absent
  std::vector<Entry> entries() const;

  // this * dense
  Matrix multiply(const Matrix& dense) const;
  // this^T * dense
  Matrix multiply_transposed(const Matrix& dense) const;
  SparseGraph transposed() const;
  Matrix to_dense() const;

  // Header (n_rows, n_cols, nnz as u64 LE), then u32 rows, u32 cols, f32 weights.
  void save(const std::filesystem::path& path) const;
  static SparseGraph load(const std::filesystem::path& path);

  friend bool operator==(const SparseGraph&, const SparseGraph&) = default;

 private:
  std::size_t n_rows_ = 0;
  std::size_t n_cols_ = 0;
  std::vector<std::size_t> offsets_{0};
  std::vector<std::uint32_t> cols_;
  std::vector<double> weights_;
};

// Row i keeps the k largest cosine similarities to j != i. Zero-norm items have
// no neighbours and are never anyone's neighbour. Ties go to the lower index.
SparseGraph cosine_topk(const Matrix& features, std::size_t k);

// w_ij / sqrt(deg_i * deg_j) with deg = row sum of |w|; zero degree gives 0.
SparseGraph normalize_sym(const SparseGraph& graph);

// Drops strictly negative weights, keeping the sparsity pattern of the rest.
SparseGraph drop_negative(const SparseGraph& graph);

struct SemanticNeighborSet {
  // neighbors[i] = items in the top-K of i in every modality, ascending.
  std::vector<std::vector<std::uint32_t>> neighbors;
  // Directed edges, symmetrized, sorted, unique.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;

  std::size_t n_items() const { return neighbors.size(); }
  static SemanticNeighborSet empty(std::size_t n_items);
};

SemanticNeighborSet semantic_neighbors(std::span<const SparseGraph> topk_graphs);

// Binary user-item train matrix R (n_users x n_items).
SparseGraph train_matrix(const InteractionDataset& dataset);

// Unnormalized block matrix [[0, R], [R^T, C]] over n_users + n_items nodes.
SparseGraph enhanced_adjacency_raw(const InteractionDataset& dataset, const SemanticNeighborSet& neighbors);

// normalize_sym(enhanced_adjacency_raw(...)).
SparseGraph build_enhanced_adjacency(const InteractionDataset& dataset, const SemanticNeighborSet& neighbors);

struct DegreeChange {
  std::size_t before = 0;
  std::size_t after = 0;
};

std::vector<DegreeChange> tail_degree_report(const InteractionDataset& dataset, const SemanticNeighborSet& neighbors);

// Frozen structures consumed by the model: per-modality top-K and normalized
// item graphs, the semantic neighbour set, R and the normalized adjacency.
struct GraphBundle {
  std::vector<SparseGraph> topk;        // per modality
  std::vector<SparseGraph> item_graphs; // per modality, normalized
  SemanticNeighborSet neighbors;
  SparseGraph train;                    // R
  SparseGraph adjacency;                // normalized enhanced (or plain) A
};

// Built once from raw features; nothing here depends on trainable parameters.
GraphBundle build_graphs(const InteractionDataset& dataset, std::span<const ModalityFeatureSet> features,
                         std::size_t knn_k, bool graph_enhancement = true);

}  // namespace gume
