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

// Small datasets and helpers shared by the test binaries.
#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gume/dataio.hpp"
#include "gume/encoders.hpp"
#include "gume/graphs.hpp"
#include "oracles.hpp"

namespace fixtures {

// Each user gets between 1 and n_items - 1 distinct train items; a fraction of
// users also gets one valid and one test item when room is left.
inline gume::InteractionDataset random_dataset(std::size_t n_users, std::size_t n_items, std::uint64_t seed,
                                               bool with_holdout = true) {
  std::mt19937_64 rng(seed);
  std::vector<gume::Interaction> out;
  for (std::uint32_t u = 0; u < n_users; ++u) {
    std::vector<std::uint32_t> items(n_items);
    for (std::uint32_t i = 0; i < n_items; ++i) items[i] = i;
    std::shuffle(items.begin(), items.end(), rng);
    const std::size_t take = 1 + rng() % std::max<std::size_t>(1, n_items / 2);
    std::size_t k = 0;
    for (; k < take; ++k) out.push_back({u, items[k], gume::Split::kTrain});
    if (with_holdout && k + 2 <= n_items - 1) {
      out.push_back({u, items[k], gume::Split::kValid});
      out.push_back({u, items[k + 1], gume::Split::kTest});
    }
  }
  return gume::InteractionDataset(n_users, n_items, out);
}

inline std::vector<gume::ModalityFeatureSet> random_features(std::size_t n_items, std::size_t d_v, std::size_t d_t,
                                                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return {{gume::Modality::kVisual, oracle::random_matrix(n_items, d_v, rng)},
          {gume::Modality::kTextual, oracle::random_matrix(n_items, d_t, rng)}};
}

// Every tensor ~ N(0, scale^2).
inline gume::ParameterSet random_params(std::size_t n_users, std::size_t n_items, std::size_t dim,
                                        const std::vector<gume::ModalityFeatureSet>& features, std::uint64_t seed,
                                        double scale = 0.5) {
  gume::ParameterSet p = gume::make_parameter_shapes(n_users, n_items, dim, features);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  p.for_each([&](const std::string&, gume::Matrix& t) {
    for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = n(rng);
  });
  return p;
}

inline gume::Matrix dense_train(const gume::InteractionDataset& ds) {
  gume::Matrix r = gume::Matrix::Zero(static_cast<Eigen::Index>(ds.n_users()), static_cast<Eigen::Index>(ds.n_items()));
  for (const auto& x : ds.interactions())
    if (x.split == gume::Split::kTrain) r(x.user, x.item) = 1.0;
  return r;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("gume_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixtures
