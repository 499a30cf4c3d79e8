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

#include "gume/fusion.hpp"

#include <cmath>

namespace gume {

Vector attention_score(const Matrix& x, const AttentionParams& attention, Matrix* hidden) {
  Matrix q = affine(x, attention.w3, attention.b3).array().tanh().matrix();
  Vector score = q * attention.w4.row(0).transpose();
  if (hidden != nullptr) *hidden = std::move(q);
  return score;
}

CoarseAttributes coarse_attributes(std::span<const Matrix> explicit_feats, const AttentionParams& attention) {
  if (explicit_feats.empty()) throw ShapeError("coarse_attributes: no modalities");
  const Eigen::Index rows = explicit_feats.front().rows();
  const auto n_mod = static_cast<Eigen::Index>(explicit_feats.size());
  CoarseAttributes out;
  Matrix scores(rows, n_mod);
  out.hidden.resize(explicit_feats.size());
  for (Eigen::Index m = 0; m < n_mod; ++m) {
    const auto& x = explicit_feats[static_cast<std::size_t>(m)];
    if (x.rows() != rows || x.cols() != explicit_feats.front().cols()) throw ShapeError("coarse_attributes: shape mismatch");
    scores.col(m) = attention_score(x, attention, &out.hidden[static_cast<std::size_t>(m)]);
  }
  // Stable softmax per row.
  out.weights = scores;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mx = out.weights.row(r).maxCoeff();
    out.weights.row(r) = (out.weights.row(r).array() - mx).exp();
    out.weights.row(r) /= out.weights.row(r).sum();
  }
  out.coarse = Matrix::Zero(rows, explicit_feats.front().cols());
  for (Eigen::Index m = 0; m < n_mod; ++m) {
    out.coarse += out.weights.col(m).asDiagonal() * explicit_feats[static_cast<std::size_t>(m)];
  }
  return out;
}

FineAttributes fine_attributes(std::span<const Matrix> explicit_feats, const Matrix& coarse,
                               const Matrix& id_extended, std::span<const GateParams> gates) {
  if (explicit_feats.size() != gates.size() || explicit_feats.empty()) {
    throw ShapeError("fine_attributes: modality count mismatch");
  }
  FineAttributes out;
  out.fine = Matrix::Zero(coarse.rows(), coarse.cols());
  for (std::size_t m = 0; m < explicit_feats.size(); ++m) {
    out.gates.push_back(sigmoid(affine(id_extended, gates[m].w5, gates[m].b5)));
    out.fine += (explicit_feats[m] - coarse).cwiseProduct(out.gates.back());
  }
  out.fine /= static_cast<double>(explicit_feats.size());
  return out;
}

Matrix integrate(const Matrix& coarse, const Matrix& fine) {
  if (coarse.rows() != fine.rows() || coarse.cols() != fine.cols()) throw ShapeError("integrate: shape mismatch");
  return coarse + fine;
}

Matrix fine_attributes_adjoint(const Matrix& grad_enhanced, std::span<const Matrix> explicit_feats,
                               const Matrix& coarse, const FineAttributes& fine, const Matrix& id_extended,
                               std::span<const GateParams> gates, std::span<Matrix> grad_explicit,
                               Matrix& grad_id_extended, std::span<GateParams> grad_gates) {
  const double inv_m = 1.0 / static_cast<double>(explicit_feats.size());
  Matrix grad_coarse = grad_enhanced;
  for (std::size_t m = 0; m < explicit_feats.size(); ++m) {
    const Matrix& gate = fine.gates[m];
    const Matrix through_gate = inv_m * grad_enhanced.cwiseProduct(gate);
    grad_coarse -= through_gate;
    grad_explicit[m] += through_gate;
    const Matrix grad_gate = inv_m * grad_enhanced.cwiseProduct(explicit_feats[m] - coarse);
    const Matrix grad_pre = grad_gate.array() * gate.array() * (1.0 - gate.array());
    grad_gates[m].w5.noalias() += grad_pre.transpose() * id_extended;
    grad_gates[m].b5 += grad_pre.colwise().sum();
    grad_id_extended.noalias() += grad_pre * gates[m].w5;
  }
  return grad_coarse;
}

void coarse_attributes_adjoint(const Matrix& grad_coarse, std::span<const Matrix> explicit_feats,
                               const CoarseAttributes& coarse, const AttentionParams& attention,
                               std::span<Matrix> grad_explicit, AttentionParams& grad_attention) {
  const auto n_mod = static_cast<Eigen::Index>(explicit_feats.size());
  const Eigen::Index rows = grad_coarse.rows();
  Matrix grad_w(rows, n_mod);
  for (Eigen::Index m = 0; m < n_mod; ++m) {
    const auto& x = explicit_feats[static_cast<std::size_t>(m)];
    grad_explicit[static_cast<std::size_t>(m)] += coarse.weights.col(m).asDiagonal() * grad_coarse;
    grad_w.col(m) = grad_coarse.cwiseProduct(x).rowwise().sum();
  }
  // Softmax Jacobian-vector product per row.
  const Vector weighted = grad_w.cwiseProduct(coarse.weights).rowwise().sum();
  Matrix grad_scores = coarse.weights.cwiseProduct(grad_w - weighted.replicate(1, n_mod));
  for (Eigen::Index m = 0; m < n_mod; ++m) {
    const auto mi = static_cast<std::size_t>(m);
    const Matrix& q = coarse.hidden[mi];
    const Vector gs = grad_scores.col(m);
    grad_attention.w4.row(0).noalias() += gs.transpose() * q;
    const Matrix grad_pre = (gs * attention.w4.row(0)).array() * (1.0 - q.array().square());
    grad_attention.w3.noalias() += grad_pre.transpose() * explicit_feats[mi];
    grad_attention.b3 += grad_pre.colwise().sum();
    grad_explicit[mi].noalias() += grad_pre * attention.w3;
  }
}

}  // namespace gume
