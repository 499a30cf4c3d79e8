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
#include <span>
#include <vector>

#include "gume/common.hpp"
#include "gume/encoders.hpp"
#include "gume/fusion.hpp"
#include "gume/graphs.hpp"

namespace gume {

// Frozen inputs of a forward pass, in the modality order of the parameter set.
struct ModelInputs {
  std::vector<Matrix> raw_features;      // per modality, n_items x d_m
  std::vector<SparseGraph> item_graphs;  // per modality, normalized
  SparseGraph train;                     // R
  SparseGraph adjacency;                 // normalized enhanced adjacency
};

ModelInputs make_model_inputs(std::span<const ModalityFeatureSet> features, const GraphBundle& graphs);

struct ModelOptions {
  std::size_t ui_layers = 3;
  std::size_t item_graph_layers = 1;
  UserAggregation user_agg = UserAggregation::kSum;
};

// All intermediates of one forward pass. Per-modality vectors follow the
// parameter set's modality order; node-level matrices stack users above items.
struct ForwardState {
  std::size_t n_users = 0;
  std::vector<Matrix> hidden;          // W1 x + b1
  std::vector<Matrix> transformed;     // sigmoid(...)
  std::vector<Matrix> purified;        // item id * transformed
  std::vector<Matrix> item_explicit;   // item-graph propagated
  std::vector<Matrix> explicit_feats;  // users || items
  std::vector<Matrix> extended;        // per-modality layer mean over A
  Matrix fused_extended;               // sum of extended
  Matrix id_extended;                  // layer mean of ID embeddings over A
  CoarseAttributes coarse;
  FineAttributes fine;
  Matrix enhanced;                     // coarse + fine
  Matrix representation;               // id_extended + enhanced

  std::size_t n_items() const { return static_cast<std::size_t>(representation.rows()) - n_users; }
};

ForwardState forward(const ParameterSet& params, const ModelInputs& inputs, const ModelOptions& options);

// Upstream gradients of the loss with respect to forward-state tensors.
struct StateGradient {
  Matrix representation;
  Matrix enhanced;
  Matrix id_extended;
  Matrix fused_extended;
  std::vector<Matrix> explicit_feats;

  static StateGradient zeros(const ForwardState& state);
};

// Accumulates d loss / d params into `grads` (which must have the shapes of `params`).
void backward(const ParameterSet& params, const ModelInputs& inputs, const ModelOptions& options,
              const ForwardState& state, const StateGradient& upstream, ParameterSet& grads);

// y_ui = e_u . e_i for the requested users against all items.
Matrix predict_scores(const ForwardState& state, std::span<const std::uint32_t> users);
// All users.
Matrix predict_scores(const ForwardState& state);

}  // namespace gume
