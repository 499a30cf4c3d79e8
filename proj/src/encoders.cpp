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

#include "gume/encoders.hpp"

#include <cmath>

namespace gume {

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out = *this;
  out.for_each([](const std::string&, Matrix& t) { t.setZero(); });
  return out;
}

double ParameterSet::squared_norm() const {
  double total = 0.0;
  for_each([&](const std::string&, const Matrix& t) { total += t.squaredNorm(); });
  return total;
}

std::size_t ParameterSet::size() const {
  std::size_t total = 0;
  for_each([&](const std::string&, const Matrix& t) { total += static_cast<std::size_t>(t.size()); });
  return total;
}

bool ParameterSet::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Matrix& t) { ok = ok && t.allFinite(); });
  return ok;
}

ParameterSet make_parameter_shapes(std::size_t n_users, std::size_t n_items, std::size_t dim,
                                   std::span<const ModalityFeatureSet> features) {
  if (dim == 0) throw ConfigError("embedding dimension must be positive");
  const auto d = static_cast<Eigen::Index>(dim);
  ParameterSet p;
  p.id_embedding = Matrix::Zero(static_cast<Eigen::Index>(n_users + n_items), d);
  for (const auto& fs : features) {
    p.modalities.push_back(fs.modality);
    p.user_modality.push_back(Matrix::Zero(static_cast<Eigen::Index>(n_users), d));
    p.transforms.push_back({Matrix::Zero(d, fs.matrix.cols()), Matrix::Zero(1, d), Matrix::Zero(d, d), Matrix::Zero(1, d)});
    p.gates.push_back({Matrix::Zero(d, d), Matrix::Zero(1, d)});
  }
  p.attention = {Matrix::Zero(d, d), Matrix::Zero(1, d), Matrix::Zero(1, d)};
  return p;
}

Matrix sigmoid(const Matrix& x) {
  return x.unaryExpr([](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
  if (x.cols() != w.cols() || b.cols() != w.rows()) throw ShapeError("affine: shape mismatch");
  Matrix out = x * w.transpose();
  out.rowwise() += b.row(0);
  return out;
}

Matrix transform_modality(const Matrix& raw, const ModalityTransform& t, Matrix* hidden) {
  Matrix h = affine(raw, t.w1, t.b1);
  Matrix out = sigmoid(affine(h, t.w2, t.b2));
  if (hidden != nullptr) *hidden = std::move(h);
  return out;
}

Matrix purify(const Matrix& item_id, const Matrix& transformed) {
  if (item_id.rows() != transformed.rows() || item_id.cols() != transformed.cols()) {
    throw ShapeError("purify: shape mismatch");
  }
  return item_id.cwiseProduct(transformed);
}

Matrix propagate_item_graph(const Matrix& x, const SparseGraph& graph, std::size_t layers) {
  Matrix out = x;
  for (std::size_t l = 0; l < layers; ++l) out = graph.multiply(out);
  return out;
}

Matrix propagate_item_graph_adjoint(const Matrix& grad, const SparseGraph& graph, std::size_t layers) {
  Matrix out = grad;
  for (std::size_t l = 0; l < layers; ++l) out = graph.multiply_transposed(out);
  return out;
}

namespace {

Vector inverse_user_degree(const SparseGraph& train) {
  Vector inv(static_cast<Eigen::Index>(train.n_rows()));
  for (std::size_t u = 0; u < train.n_rows(); ++u) {
    const auto deg = train.row_cols(u).size();
    inv(static_cast<Eigen::Index>(u)) = deg > 0 ? 1.0 / static_cast<double>(deg) : 0.0;
  }
  return inv;
}

}  // namespace

Matrix aggregate_user_modality(const SparseGraph& train, const Matrix& items, UserAggregation agg) {
  Matrix out = train.multiply(items);
  if (agg == UserAggregation::kMean) out = inverse_user_degree(train).asDiagonal() * out;
  return out;
}

Matrix aggregate_user_modality_adjoint(const SparseGraph& train, const Matrix& grad_users, UserAggregation agg) {
  if (agg == UserAggregation::kMean) {
    const Matrix scaled = inverse_user_degree(train).asDiagonal() * grad_users;
    return train.multiply_transposed(scaled);
  }
  return train.multiply_transposed(grad_users);
}

Matrix explicit_features(const Matrix& users, const Matrix& items) {
  if (users.cols() != items.cols()) throw ShapeError("explicit_features: column mismatch");
  Matrix out(users.rows() + items.rows(), users.cols());
  out << users, items;
  return out;
}

Matrix extended_interest(const Matrix& e0, const SparseGraph& adjacency, std::size_t layers) {
  Matrix layer = e0;
  Matrix sum = e0;
  for (std::size_t l = 0; l < layers; ++l) {
    layer = adjacency.multiply(layer);
    sum += layer;
  }
  return sum / static_cast<double>(layers + 1);
}

Matrix extended_interest_adjoint(const Matrix& grad, const SparseGraph& adjacency, std::size_t layers) {
  Matrix layer = grad;
  Matrix sum = grad;
  for (std::size_t l = 0; l < layers; ++l) {
    layer = adjacency.multiply_transposed(layer);
    sum += layer;
  }
  return sum / static_cast<double>(layers + 1);
}

Matrix fuse_extended(std::span<const Matrix> per_modality) {
  if (per_modality.empty()) throw ShapeError("fuse_extended: no modalities");
  Matrix out = per_modality.front();
  for (std::size_t m = 1; m < per_modality.size(); ++m) {
    if (per_modality[m].rows() != out.rows() || per_modality[m].cols() != out.cols()) {
      throw ShapeError("fuse_extended: shape mismatch");
    }
    out += per_modality[m];
  }
  return out;
}

}  // namespace gume
