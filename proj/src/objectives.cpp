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

#include "gume/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace gume {

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid_scalar(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Matrix row_normalized(const Matrix& x, Vector& norms) {
  norms = x.rowwise().norm();
  Matrix out = x;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    if (norms(r) > 0.0) out.row(r) /= norms(r);
  }
  return out;
}

// Reverse pass of row normalization: (g - u (u . g)) / |x|.
Matrix row_normalized_adjoint(const Matrix& grad_unit, const Matrix& unit, const Vector& norms) {
  Matrix out = Matrix::Zero(grad_unit.rows(), grad_unit.cols());
  for (Eigen::Index r = 0; r < grad_unit.rows(); ++r) {
    if (norms(r) <= 0.0) continue;
    const double proj = unit.row(r).dot(grad_unit.row(r));
    out.row(r) = (grad_unit.row(r) - proj * unit.row(r)) / norms(r);
  }
  return out;
}

void check_tau(double tau) {
  if (!(tau > 0.0)) throw ConfigError("InfoNCE temperature must be > 0");
}

}  // namespace

std::string LossBreakdown::first_non_finite() const {
  const std::pair<const char*, double> terms[] = {{"l_bpr", l_bpr}, {"l_vt", l_vt},   {"l_bm", l_bm},
                                                  {"l_c", l_c},     {"l_n_bar", l_n_bar}, {"l_n_hat", l_n_hat},
                                                  {"l_reg", l_reg}, {"l_al", l_al},   {"l_um", l_um},
                                                  {"total", total}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) return name;
  }
  return {};
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  l_vt += o.l_vt;
  l_bm += o.l_bm;
  l_al += o.l_al;
  l_c += o.l_c;
  l_n_bar += o.l_n_bar;
  l_n_hat += o.l_n_hat;
  l_um += o.l_um;
  l_bpr += o.l_bpr;
  l_reg += o.l_reg;
  total += o.total;
  return *this;
}

LossBreakdown& LossBreakdown::operator/=(double d) {
  l_vt /= d;
  l_bm /= d;
  l_al /= d;
  l_c /= d;
  l_n_bar /= d;
  l_n_hat /= d;
  l_um /= d;
  l_bpr /= d;
  l_reg /= d;
  total /= d;
  return *this;
}

nlohmann::json LossBreakdown::to_json() const {
  return {{"l_vt", l_vt},   {"l_bm", l_bm},       {"l_al", l_al},       {"l_c", l_c},
          {"l_n_bar", l_n_bar}, {"l_n_hat", l_n_hat}, {"l_um", l_um}, {"l_bpr", l_bpr},
          {"l_reg", l_reg}, {"total", total}};
}

std::vector<std::uint32_t> TripleBatch::unique_users() const {
  std::vector<std::uint32_t> out = users;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::uint32_t> TripleBatch::unique_items() const {
  std::vector<std::uint32_t> out = pos_items;
  out.insert(out.end(), neg_items.begin(), neg_items.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

double loss_vt(const Matrix& visual, const Matrix& textual, Matrix* grad_visual, Matrix* grad_textual) {
  if (visual.rows() != textual.rows() || visual.cols() != textual.cols()) throw ShapeError("loss_vt: shape mismatch");
  if (visual.rows() < 2) throw ValidationError("loss_vt needs at least two rows for a standard deviation");
  const auto n = static_cast<double>(visual.rows());
  const auto dims = static_cast<double>(visual.cols());

  const Eigen::RowVectorXd mu_v = visual.colwise().mean();
  const Eigen::RowVectorXd mu_t = textual.colwise().mean();
  const Matrix cv = visual.rowwise() - mu_v;
  const Matrix ct = textual.rowwise() - mu_t;
  const Eigen::RowVectorXd sd_v = (cv.colwise().squaredNorm() / n).cwiseSqrt();
  const Eigen::RowVectorXd sd_t = (ct.colwise().squaredNorm() / n).cwiseSqrt();

  const Eigen::RowVectorXd dmu = mu_v - mu_t;
  const Eigen::RowVectorXd dsd = sd_v - sd_t;
  const double loss = (dmu.cwiseAbs() + dsd.cwiseAbs()).sum() / dims;

  if (grad_visual != nullptr || grad_textual != nullptr) {
    auto sign = [](double x) { return static_cast<double>((x > 0) - (x < 0)); };
    const Eigen::RowVectorXd s_mu = dmu.unaryExpr(sign) / dims;
    const Eigen::RowVectorXd s_sd = dsd.unaryExpr(sign) / dims;
    auto side = [&](const Matrix& centered, const Eigen::RowVectorXd& sd, double direction) {
      Eigen::RowVectorXd scale(sd.size());
      for (Eigen::Index k = 0; k < sd.size(); ++k) scale(k) = sd(k) > 0 ? s_sd(k) / (n * sd(k)) : 0.0;
      Matrix g = centered.array().rowwise() * scale.array();
      g.rowwise() += s_mu / n;
      return Matrix(direction * g);
    };
    if (grad_visual != nullptr) *grad_visual = side(cv, sd_v, 1.0);
    if (grad_textual != nullptr) *grad_textual = side(ct, sd_t, -1.0);
  }
  return loss;
}

double info_nce(const Matrix& anchors, const Matrix& positives, const Matrix& candidates, double tau,
                bool normalize, InfoNceGrad* grad) {
  check_tau(tau);
  if (anchors.rows() != positives.rows() || anchors.cols() != positives.cols() ||
      candidates.cols() != anchors.cols()) {
    throw ShapeError("info_nce: shape mismatch");
  }
  if (anchors.rows() == 0) throw ValidationError("info_nce: empty batch");
  if (candidates.rows() == 0) throw ValidationError("info_nce: empty candidate set");
  const auto n = static_cast<double>(anchors.rows());

  Vector na;
  Vector np;
  Vector nc;
  const Matrix a = normalize ? row_normalized(anchors, na) : anchors;
  const Matrix p = normalize ? row_normalized(positives, np) : positives;
  const Matrix c = normalize ? row_normalized(candidates, nc) : candidates;

  Matrix logits = (a * c.transpose()) / tau;
  const Vector pos = a.cwiseProduct(p).rowwise().sum() / tau;
  double loss = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    logits.row(r) = (logits.row(r).array() - mx).exp();
    const double z = logits.row(r).sum();
    loss += mx + std::log(z) - pos(r);
    logits.row(r) /= z;  // now the softmax
  }
  loss /= n;

  if (grad != nullptr) {
    const Matrix& soft = logits;
    Matrix ga = (soft * c - p) / (n * tau);
    Matrix gc = (soft.transpose() * a) / (n * tau);
    Matrix gp = -a / (n * tau);
    if (normalize) {
      ga = row_normalized_adjoint(ga, a, na);
      gc = row_normalized_adjoint(gc, c, nc);
      gp = row_normalized_adjoint(gp, p, np);
    }
    grad->anchors = std::move(ga);
    grad->positives = std::move(gp);
    grad->candidates = std::move(gc);
  }
  return loss;
}

double info_nce_in_batch(const Matrix& anchors, const Matrix& positives, double tau, bool normalize,
                         Matrix* grad_anchors, Matrix* grad_positives) {
  if (grad_anchors == nullptr && grad_positives == nullptr) {
    return info_nce(anchors, positives, positives, tau, normalize);
  }
  InfoNceGrad g;
  const double loss = info_nce(anchors, positives, positives, tau, normalize, &g);
  if (grad_anchors != nullptr) *grad_anchors = std::move(g.anchors);
  if (grad_positives != nullptr) *grad_positives = g.positives + g.candidates;
  return loss;
}

Matrix gather_rows(const Matrix& source, std::span<const std::uint32_t> rows, std::size_t offset) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), source.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t r = offset + rows[k];
    if (r >= static_cast<std::size_t>(source.rows())) throw ValidationError("row index out of range");
    out.row(static_cast<Eigen::Index>(k)) = source.row(static_cast<Eigen::Index>(r));
  }
  return out;
}

void scatter_add_rows(Matrix& target, std::span<const std::uint32_t> rows, const Matrix& values, double weight,
                      std::size_t offset) {
  for (std::size_t k = 0; k < rows.size(); ++k) {
    target.row(static_cast<Eigen::Index>(offset + rows[k])) += weight * values.row(static_cast<Eigen::Index>(k));
  }
}

double loss_bm(const Matrix& id_extended, const Matrix& enhanced, std::size_t n_users,
               std::span<const std::uint32_t> users, std::span<const std::uint32_t> items, double tau, bool normalize,
               Matrix* grad_id_extended, Matrix* grad_enhanced, double weight) {
  if (users.empty() && items.empty()) throw ValidationError("loss_bm: empty batch");
  const bool want_grad = grad_id_extended != nullptr && grad_enhanced != nullptr;
  double loss = 0.0;
  auto side = [&](std::span<const std::uint32_t> rows, std::size_t offset) {
    if (rows.empty()) return;
    const Matrix a = gather_rows(id_extended, rows, offset);
    const Matrix p = gather_rows(enhanced, rows, offset);
    if (!want_grad) {
      loss += info_nce_in_batch(a, p, tau, normalize);
      return;
    }
    Matrix ga;
    Matrix gp;
    loss += info_nce_in_batch(a, p, tau, normalize, &ga, &gp);
    scatter_add_rows(*grad_id_extended, rows, ga, weight, offset);
    scatter_add_rows(*grad_enhanced, rows, gp, weight, offset);
  };
  side(users, 0);
  side(items, n_users);
  return loss;
}

double loss_c(const Matrix& enhanced, const Matrix& fused_extended, std::span<const std::uint32_t> users, double tau,
              bool normalize, Matrix* grad_enhanced, Matrix* grad_fused, double weight) {
  if (users.empty()) throw ValidationError("loss_c: empty batch");
  const Matrix a = gather_rows(enhanced, users);
  const Matrix p = gather_rows(fused_extended, users);
  if (grad_enhanced == nullptr || grad_fused == nullptr) return info_nce_in_batch(a, p, tau, normalize);
  Matrix ga;
  Matrix gp;
  const double loss = info_nce_in_batch(a, p, tau, normalize, &ga, &gp);
  scatter_add_rows(*grad_enhanced, users, ga, weight);
  scatter_add_rows(*grad_fused, users, gp, weight);
  return loss;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value.
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::pair<Matrix, Matrix> perturb(const Matrix& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Matrix first = x;
  Matrix second = x;
  for (Eigen::Index k = 0; k < first.size(); ++k) first.data()[k] += uniform(rng);
  for (Eigen::Index k = 0; k < second.size(); ++k) second.data()[k] += uniform(rng);
  return {std::move(first), std::move(second)};
}

double loss_noise(const Matrix& rows, double tau, std::uint64_t seed, bool normalize, Matrix* grad_rows) {
  const auto [first, second] = perturb(rows, seed);
  if (grad_rows == nullptr) return info_nce_in_batch(first, second, tau, normalize);
  Matrix ga;
  Matrix gp;
  const double loss = info_nce_in_batch(first, second, tau, normalize, &ga, &gp);
  *grad_rows = ga + gp;
  return loss;
}

double loss_bpr(const Vector& pos_scores, const Vector& neg_scores, Vector* grad_pos, Vector* grad_neg) {
  if (pos_scores.size() != neg_scores.size()) throw ShapeError("loss_bpr: size mismatch");
  if (pos_scores.size() == 0) throw ValidationError("loss_bpr: empty batch");
  const auto n = static_cast<double>(pos_scores.size());
  double loss = 0.0;
  if (grad_pos != nullptr) grad_pos->resize(pos_scores.size());
  if (grad_neg != nullptr) grad_neg->resize(pos_scores.size());
  for (Eigen::Index k = 0; k < pos_scores.size(); ++k) {
    const double diff = pos_scores(k) - neg_scores(k);
    loss += softplus(-diff);
    const double g = -sigmoid_scalar(-diff) / n;
    if (grad_pos != nullptr) (*grad_pos)(k) = g;
    if (grad_neg != nullptr) (*grad_neg)(k) = -g;
  }
  return loss / n;
}

LossBreakdown total_loss(const ForwardState& state, const ParameterSet& params, const ObjectiveWeights& w,
                         const TripleBatch& batch, std::uint64_t seed, StateGradient* sg, ParameterSet* pg) {
  if (batch.size() == 0) throw ValidationError("total_loss: empty batch");
  if (batch.pos_items.size() != batch.size() || batch.neg_items.size() != batch.size()) {
    throw ShapeError("total_loss: triple arrays differ in length");
  }
  const bool grads = sg != nullptr;
  LossBreakdown out;
  const std::size_t n_users = state.n_users;
  const Matrix& e = state.representation;

  // BPR over the sampled triples.
  Vector pos(static_cast<Eigen::Index>(batch.size()));
  Vector neg(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto u = static_cast<Eigen::Index>(batch.users[k]);
    pos(static_cast<Eigen::Index>(k)) = e.row(u).dot(e.row(static_cast<Eigen::Index>(n_users + batch.pos_items[k])));
    neg(static_cast<Eigen::Index>(k)) = e.row(u).dot(e.row(static_cast<Eigen::Index>(n_users + batch.neg_items[k])));
  }
  Vector gpos;
  Vector gneg;
  out.l_bpr = loss_bpr(pos, neg, grads ? &gpos : nullptr, grads ? &gneg : nullptr);
  if (grads) {
    for (std::size_t k = 0; k < batch.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      const auto u = static_cast<Eigen::Index>(batch.users[k]);
      const auto i = static_cast<Eigen::Index>(n_users + batch.pos_items[k]);
      const auto j = static_cast<Eigen::Index>(n_users + batch.neg_items[k]);
      sg->representation.row(u) += gpos(kk) * e.row(i) + gneg(kk) * e.row(j);
      sg->representation.row(i) += gpos(kk) * e.row(u);
      sg->representation.row(j) += gneg(kk) * e.row(u);
    }
  }

  const auto users = batch.unique_users();
  const auto items = batch.unique_items();

  // Alignment: visual-textual statistics over all rows plus behaviour-modality InfoNCE.
  if (state.explicit_feats.size() >= 2) {
    Matrix gv;
    Matrix gt;
    const bool g = grads && w.alpha != 0.0;
    out.l_vt = loss_vt(state.explicit_feats[0], state.explicit_feats[1], g ? &gv : nullptr, g ? &gt : nullptr);
    if (g) {
      sg->explicit_feats[0] += w.alpha * gv;
      sg->explicit_feats[1] += w.alpha * gt;
    }
  }
  {
    const bool g = grads && w.beta != 0.0;
    out.l_bm = loss_bm(state.id_extended, state.enhanced, n_users, users, items, w.bm_temperature(), w.nce_normalize,
                       g ? &sg->id_extended : nullptr, g ? &sg->enhanced : nullptr, w.beta);
  }
  out.l_al = w.alpha * out.l_vt + w.beta * out.l_bm;

  // User modality enhancement.
  {
    const bool g = grads && w.gamma != 0.0;
    const double tau = w.um_temperature();
    out.l_c = loss_c(state.enhanced, state.fused_extended, users, tau, w.nce_normalize,
                     g ? &sg->enhanced : nullptr, g ? &sg->fused_extended : nullptr, w.gamma);
    Matrix gbar;
    out.l_n_bar = loss_noise(gather_rows(state.enhanced, users), tau, mix_seed(seed, 1), w.nce_normalize,
                             g ? &gbar : nullptr);
    Matrix ghat;
    out.l_n_hat = loss_noise(gather_rows(state.fused_extended, users), tau, mix_seed(seed, 2), w.nce_normalize,
                             g ? &ghat : nullptr);
    if (g) {
      scatter_add_rows(sg->enhanced, users, gbar, w.gamma);
      scatter_add_rows(sg->fused_extended, users, ghat, w.gamma);
    }
  }
  out.l_um = w.gamma * (out.l_c + out.l_n_bar + out.l_n_hat);

  out.l_reg = w.delta * params.squared_norm();
  if (pg != nullptr && w.delta != 0.0) {
    ParameterSet& target = *pg;
    std::vector<const Matrix*> sources;
    params.for_each([&](const std::string&, const Matrix& t) { sources.push_back(&t); });
    std::size_t k = 0;
    target.for_each([&](const std::string&, Matrix& t) { t += 2.0 * w.delta * (*sources[k++]); });
  }
  out.total = out.l_bpr + out.l_al + out.l_um + out.l_reg;
  return out;
}

}  // namespace gume
