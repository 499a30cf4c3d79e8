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

#include <span>
#include <vector>

#include "gume/common.hpp"
#include "gume/encoders.hpp"

namespace gume {

// w4 . tanh(W3 x + b3) for every row of x. `hidden` receives the tanh activations.
Vector attention_score(const Matrix& x, const AttentionParams& attention, Matrix* hidden = nullptr);

struct CoarseAttributes {
  Matrix coarse;               // E_C
  Matrix weights;              // rows x modalities, each row sums to 1
  std::vector<Matrix> hidden;  // tanh activations per modality
};

// Per-row softmax over modalities of the attention scores, used to pool the
// explicit features.
CoarseAttributes coarse_attributes(std::span<const Matrix> explicit_feats, const AttentionParams& attention);

struct FineAttributes {
  Matrix fine;                // E_F
  std::vector<Matrix> gates;  // sigmoid(W5 id + b5) per modality
};

// (1/|M|) sum_m (explicit_m - coarse) * gate_m(id_extended).
FineAttributes fine_attributes(std::span<const Matrix> explicit_feats, const Matrix& coarse,
                               const Matrix& id_extended, std::span<const GateParams> gates);

Matrix integrate(const Matrix& coarse, const Matrix& fine);

// Reverse pass of fine_attributes + integrate. Given d loss / d enhanced,
// accumulates into grad_explicit, grad_id_extended and the gate gradients, and
// returns d loss / d coarse.
Matrix fine_attributes_adjoint(const Matrix& grad_enhanced, std::span<const Matrix> explicit_feats,
                               const Matrix& coarse, const FineAttributes& fine, const Matrix& id_extended,
                               std::span<const GateParams> gates, std::span<Matrix> grad_explicit,
                               Matrix& grad_id_extended, std::span<GateParams> grad_gates);

// Reverse pass of coarse_attributes.
void coarse_attributes_adjoint(const Matrix& grad_coarse, std::span<const Matrix> explicit_feats,
                               const CoarseAttributes& coarse, const AttentionParams& attention,
                               std::span<Matrix> grad_explicit, AttentionParams& grad_attention);

}  // namespace gume
