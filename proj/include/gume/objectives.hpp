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
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gume/common.hpp"
#include "gume/encoders.hpp"
#include "gume/model.hpp"

namespace gume {

struct LossBreakdown {
  double l_vt = 0.0;
  double l_bm = 0.0;
  double l_al = 0.0;
  double l_c = 0.0;
  double l_n_bar = 0.0;
  double l_n_hat = 0.0;
  double l_um = 0.0;
  double l_bpr = 0.0;
  double l_reg = 0.0;
  double total = 0.0;

  // Name of the first non-finite term, or empty.
  std::string first_non_finite() const;
  LossBreakdown& operator+=(const LossBreakdown& other);
  LossBreakdown& operator/=(double divisor);
  nlohmann::json to_json() const;
};

struct ObjectiveWeights {
  double alpha = 0.01;
  double beta = 0.01;
  double gamma = 0.01;
  double delta = 1e-4;
  double tau = 0.2;
  std::optional<double> tau_bm;  // overrides tau for the behaviour-modality term
  std::optional<double> tau_um;  // overrides tau for the user-modality terms
  bool nce_normalize = true;

  double bm_temperature() const { return tau_bm.value_or(tau); }
  double um_temperature() const { return tau_um.value_or(tau); }
};

// (user, positive item, negative item) triples, parallel arrays.
struct TripleBatch {
  std::vector<std::uint32_t> users;
  std::vector<std::uint32_t> pos_items;
  std::vector<std::uint32_t> neg_items;

  std::size_t size() const { return users.size(); }
  std::vector<std::uint32_t> unique_users() const;
  std::vector<std::uint32_t> unique_items() const;  // positives and negatives
};

// Mean over dimensions of |mu_v - mu_t| + |sigma_v - sigma_t|, with population
// statistics over rows. Needs at least two rows.
double loss_vt(const Matrix& visual, const Matrix& textual, Matrix* grad_visual = nullptr,
               Matrix* grad_textual = nullptr);

struct InfoNceGrad {
  Matrix anchors;
  Matrix positives;
  Matrix candidates;
};

// mean_r -log( exp(a_r . p_r / tau) / sum_c exp(a_r . c / tau) ). Rows are L2
// normalized first when `normalize` is set (zero rows stay zero).
double info_nce(const Matrix& anchors, const Matrix& positives, const Matrix& candidates, double tau,
                bool normalize = true, InfoNceGrad* grad = nullptr);

// In-batch form: the candidate set is the positives themselves. Gradient rows
// are returned with respect to anchors and positives.
double info_nce_in_batch(const Matrix& anchors, const Matrix& positives, double tau, bool normalize = true,
                         Matrix* grad_anchors = nullptr, Matrix* grad_positives = nullptr);

Matrix gather_rows(const Matrix& source, std::span<const std::uint32_t> rows, std::size_t offset = 0);
void scatter_add_rows(Matrix& target, std::span<const std::uint32_t> rows, const Matrix& values, double weight,
                      std::size_t offset = 0);

// User term (anchors id_extended, positives enhanced, over batch users) plus
// the item term over batch items. Gradients, when requested, are accumulated
// as weight * d/dx into full-size matrices.
double loss_bm(const Matrix& id_extended, const Matrix& enhanced, std::size_t n_users,
               std::span<const std::uint32_t> users, std::span<const std::uint32_t> items, double tau,
               bool normalize = true, Matrix* grad_id_extended = nullptr, Matrix* grad_enhanced = nullptr,
               double weight = 1.0);

// User-side InfoNCE between enhanced (anchors) and fused extended (positives).
double loss_c(const Matrix& enhanced, const Matrix& fused_extended, std::span<const std::uint32_t> users, double tau,
              bool normalize = true, Matrix* grad_enhanced = nullptr, Matrix* grad_fused = nullptr,
              double weight = 1.0);

// Two independently perturbed copies X + U(0,1) noise.
std::pair<Matrix, Matrix> perturb(const Matrix& x, std::uint64_t seed);

// InfoNCE between the two perturbed views of `rows`; grad is d/d rows.
double loss_noise(const Matrix& rows, double tau, std::uint64_t seed, bool normalize = true,
                  Matrix* grad_rows = nullptr);

// mean softplus(-(pos - neg)). Gradients are d/d pos and d/d neg.
double loss_bpr(const Vector& pos_scores, const Vector& neg_scores, Vector* grad_pos = nullptr,
                Vector* grad_neg = nullptr);

// Derives an independent stream seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// Full objective. When `state_grad` / `param_grad` are given, the gradients of
// `total` are accumulated into them (param_grad receives only the L2 term;
// the rest flows through backward()).
LossBreakdown total_loss(const ForwardState& state, const ParameterSet& params, const ObjectiveWeights& weights,
                         const TripleBatch& batch, std::uint64_t seed, StateGradient* state_grad = nullptr,
                         ParameterSet* param_grad = nullptr);

}  // namespace gume
