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

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gume/common.hpp"
#include "gume/dataio.hpp"
#include "gume/graphs.hpp"

namespace gume {

// Per-modality feature projection: sigmoid(W2 (W1 x + b1) + b2).
struct ModalityTransform {
  Matrix w1;  // d x d_m
  Matrix b1;  // 1 x d
  Matrix w2;  // d x d
  Matrix b2;  // 1 x d
};

// Shared across modalities: score(x) = w4 . tanh(W3 x + b3).
struct AttentionParams {
  Matrix w3;  // d x d
  Matrix b3;  // 1 x d
  Matrix w4;  // 1 x d
};

// Per-modality behaviour gate: sigmoid(W5 x + b5).
struct GateParams {
  Matrix w5;  // d x d
  Matrix b5;  // 1 x d
};

// Every trainable tensor. Vectors are stored as 1 x d matrices so that all
// tensors can be visited uniformly by the optimizer, regularizer and checkpoints.
struct ParameterSet {
  std::vector<Modality> modalities;
  Matrix id_embedding;               // (n_users + n_items) x d, users first
  std::vector<Matrix> user_modality; // per modality, n_users x d
  std::vector<ModalityTransform> transforms;
  AttentionParams attention;
  std::vector<GateParams> gates;

  std::size_t n_users() const { return user_modality.empty() ? 0 : static_cast<std::size_t>(user_modality.front().rows()); }
  std::size_t n_items() const { return static_cast<std::size_t>(id_embedding.rows()) - n_users(); }
  std::size_t dim() const { return static_cast<std::size_t>(id_embedding.cols()); }
  std::size_t n_modalities() const { return modalities.size(); }

  // Visits (name, tensor) in a fixed order.
  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  // Same shapes, all zeros.
  ParameterSet zeros_like() const;
  double squared_norm() const;
  std::size_t size() const;  // total scalar count
  bool all_finite() const;

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    f(std::string("id_embedding"), self.id_embedding);
    for (std::size_t m = 0; m < self.modalities.size(); ++m) {
      f("user_modality." + std::string(to_string(self.modalities[m])), self.user_modality[m]);
    }
    for (std::size_t m = 0; m < self.modalities.size(); ++m) {
      const std::string p = "transform." + std::string(to_string(self.modalities[m])) + ".";
      f(p + "w1", self.transforms[m].w1);
      f(p + "b1", self.transforms[m].b1);
      f(p + "w2", self.transforms[m].w2);
      f(p + "b2", self.transforms[m].b2);
    }
    f(std::string("attention.w3"), self.attention.w3);
    f(std::string("attention.b3"), self.attention.b3);
    f(std::string("attention.w4"), self.attention.w4);
    for (std::size_t m = 0; m < self.modalities.size(); ++m) {
      const std::string p = "gate." + std::string(to_string(self.modalities[m])) + ".";
      f(p + "w5", self.gates[m].w5);
      f(p + "b5", self.gates[m].b5);
    }
  }
};

// Builds a zero-valued parameter set of the right shapes.
ParameterSet make_parameter_shapes(std::size_t n_users, std::size_t n_items, std::size_t dim,
                                   std::span<const ModalityFeatureSet> features);

enum class UserAggregation { kSum, kMean };

Matrix sigmoid(const Matrix& x);

// x W^T + b, row-wise.
Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b);

// sigmoid(W2 (W1 x + b1) + b2) per row. `hidden` receives W1 x + b1 if given.
Matrix transform_modality(const Matrix& raw, const ModalityTransform& t, Matrix* hidden = nullptr);

// Element-wise product of item ID embeddings and transformed features.
Matrix purify(const Matrix& item_id, const Matrix& transformed);

// graph^layers * x.
Matrix propagate_item_graph(const Matrix& x, const SparseGraph& graph, std::size_t layers);
// (graph^T)^layers * grad.
Matrix propagate_item_graph_adjoint(const Matrix& grad, const SparseGraph& graph, std::size_t layers);

// R * items (sum) or D_u^{-1} R * items (mean; empty users give zero rows).
Matrix aggregate_user_modality(const SparseGraph& train, const Matrix& items, UserAggregation agg);
Matrix aggregate_user_modality_adjoint(const SparseGraph& train, const Matrix& grad_users, UserAggregation agg);

// Users stacked above items.
Matrix explicit_features(const Matrix& users, const Matrix& items);

// (1 / (L + 1)) * sum_{l=0..L} A^l e0.
Matrix extended_interest(const Matrix& e0, const SparseGraph& adjacency, std::size_t layers);
Matrix extended_interest_adjoint(const Matrix& grad, const SparseGraph& adjacency, std::size_t layers);

// Sum over modalities.
Matrix fuse_extended(std::span<const Matrix> per_modality);

}  // namespace gume
