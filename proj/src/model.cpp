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

#include "gume/model.hpp"

namespace gume {

ModelInputs make_model_inputs(std::span<const ModalityFeatureSet> features, const GraphBundle& graphs) {
  if (features.size() != graphs.item_graphs.size()) throw ShapeError("feature and item-graph counts differ");
  ModelInputs in;
  for (const auto& fs : features) in.raw_features.push_back(fs.matrix);
  in.item_graphs = graphs.item_graphs;
  in.train = graphs.train;
  in.adjacency = graphs.adjacency;
  return in;
}

ForwardState forward(const ParameterSet& params, const ModelInputs& inputs, const ModelOptions& options) {
  const std::size_t n_mod = params.n_modalities();
  if (inputs.raw_features.size() != n_mod || inputs.item_graphs.size() != n_mod) {
    throw ShapeError("forward: modality count mismatch between parameters and inputs");
  }
  const auto n_users = static_cast<Eigen::Index>(params.n_users());
  const auto n_items = static_cast<Eigen::Index>(params.n_items());
  if (static_cast<Eigen::Index>(inputs.train.n_rows()) != n_users ||
      static_cast<Eigen::Index>(inputs.train.n_cols()) != n_items ||
      static_cast<Eigen::Index>(inputs.adjacency.n_rows()) != n_users + n_items) {
    throw ShapeError("forward: graph sizes do not match parameters");
  }

  ForwardState s;
  s.n_users = params.n_users();
  const auto item_id = params.id_embedding.bottomRows(n_items);
  for (std::size_t m = 0; m < n_mod; ++m) {
    Matrix hidden;
    s.transformed.push_back(transform_modality(inputs.raw_features[m], params.transforms[m], &hidden));
    s.hidden.push_back(std::move(hidden));
    s.purified.push_back(purify(item_id, s.transformed[m]));
    s.item_explicit.push_back(propagate_item_graph(s.purified[m], inputs.item_graphs[m], options.item_graph_layers));
    const Matrix users = aggregate_user_modality(inputs.train, s.item_explicit[m], options.user_agg);
    s.explicit_feats.push_back(explicit_features(users, s.item_explicit[m]));
    s.extended.push_back(extended_interest(explicit_features(params.user_modality[m], s.item_explicit[m]),
                                           inputs.adjacency, options.ui_layers));
  }
  s.fused_extended = fuse_extended(s.extended);
  s.id_extended = extended_interest(params.id_embedding, inputs.adjacency, options.ui_layers);
  s.coarse = coarse_attributes(s.explicit_feats, params.attention);
  s.fine = fine_attributes(s.explicit_feats, s.coarse.coarse, s.id_extended, params.gates);
  s.enhanced = integrate(s.coarse.coarse, s.fine.fine);
  s.representation = s.id_extended + s.enhanced;
  return s;
}

StateGradient StateGradient::zeros(const ForwardState& state) {
  StateGradient g;
  const auto rows = state.representation.rows();
  const auto cols = state.representation.cols();
  g.representation = Matrix::Zero(rows, cols);
  g.enhanced = Matrix::Zero(rows, cols);
  g.id_extended = Matrix::Zero(rows, cols);
  g.fused_extended = Matrix::Zero(rows, cols);
  g.explicit_feats.assign(state.explicit_feats.size(), Matrix::Zero(rows, cols));
  return g;
}

void backward(const ParameterSet& params, const ModelInputs& inputs, const ModelOptions& options,
              const ForwardState& state, const StateGradient& upstream, ParameterSet& grads) {
  const std::size_t n_mod = params.n_modalities();
  const auto n_users = static_cast<Eigen::Index>(params.n_users());
  const auto n_items = static_cast<Eigen::Index>(params.n_items());

  const Matrix grad_enhanced = upstream.enhanced + upstream.representation;
  Matrix grad_id_extended = upstream.id_extended + upstream.representation;
  std::vector<Matrix> grad_explicit = upstream.explicit_feats;

  const Matrix grad_coarse =
      fine_attributes_adjoint(grad_enhanced, state.explicit_feats, state.coarse.coarse, state.fine,
                              state.id_extended, params.gates, grad_explicit, grad_id_extended, grads.gates);
  coarse_attributes_adjoint(grad_coarse, state.explicit_feats, state.coarse, params.attention, grad_explicit,
                            grads.attention);

  grads.id_embedding += extended_interest_adjoint(grad_id_extended, inputs.adjacency, options.ui_layers);

  // Every modality's extended features feed the fused sum with weight one.
  const Matrix grad_e0 = extended_interest_adjoint(upstream.fused_extended, inputs.adjacency, options.ui_layers);
  const auto item_id = params.id_embedding.bottomRows(n_items);
  for (std::size_t m = 0; m < n_mod; ++m) {
    grads.user_modality[m] += grad_e0.topRows(n_users);
    Matrix grad_items = grad_e0.bottomRows(n_items) + grad_explicit[m].bottomRows(n_items);
    grad_items += aggregate_user_modality_adjoint(inputs.train, grad_explicit[m].topRows(n_users), options.user_agg);

    const Matrix grad_purified =
        propagate_item_graph_adjoint(grad_items, inputs.item_graphs[m], options.item_graph_layers);
    const Matrix& t = state.transformed[m];
    grads.id_embedding.bottomRows(n_items) += grad_purified.cwiseProduct(t);
    const Matrix grad_t = grad_purified.cwiseProduct(item_id);
    const Matrix grad_z = grad_t.array() * t.array() * (1.0 - t.array());
    auto& gt = grads.transforms[m];
    const auto& pt = params.transforms[m];
    gt.w2.noalias() += grad_z.transpose() * state.hidden[m];
    gt.b2 += grad_z.colwise().sum();
    const Matrix grad_hidden = grad_z * pt.w2;
    gt.w1.noalias() += grad_hidden.transpose() * inputs.raw_features[m];
    gt.b1 += grad_hidden.colwise().sum();
  }
}

Matrix predict_scores(const ForwardState& state, std::span<const std::uint32_t> users) {
  const auto n_users = static_cast<Eigen::Index>(state.n_users);
  const auto items = state.representation.bottomRows(state.representation.rows() - n_users);
  Matrix user_rows(static_cast<Eigen::Index>(users.size()), state.representation.cols());
  for (std::size_t k = 0; k < users.size(); ++k) {
    if (users[k] >= state.n_users) throw ValidationError("predict_scores: user index out of range");
    user_rows.row(static_cast<Eigen::Index>(k)) = state.representation.row(users[k]);
  }
  return user_rows * items.transpose();
}

Matrix predict_scores(const ForwardState& state) {
  const auto n_users = static_cast<Eigen::Index>(state.n_users);
  return state.representation.topRows(n_users) *
         state.representation.bottomRows(state.representation.rows() - n_users).transpose();
}

}  // namespace gume
