/*
 * Copyright 2026 The tbps Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Shared fixtures: tiny corpora, randomized parameters and a central
// finite-difference gradient oracle.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "tbps/autodiff.hpp"
#include "tbps/corpus.hpp"
#include "tbps/params.hpp"

namespace tbps::testing {

inline CorpusSpec tiny_spec() {
  CorpusSpec s;
  s.num_train_identities = 30;
  s.images_per_identity = 2;
  s.captions_per_image = 1;
  s.num_test_identities = 10;
  s.test_images_per_identity = 2;
  s.labeled_ratio = 0.2;
  s.num_attributes = 3;
  s.values_per_attribute = 4;
  s.num_patches = 4;
  s.patch_dim = 4;
  return s;
}

// Overwrites every parameter with N(0, scale) so no branch sits at an
// identity initialization.
inline void randomize(ParamStore& store, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (std::size_t i = 0; i < store.size(); ++i) {
    Mat& m = store.value(static_cast<ad::ParamId>(i));
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = n(rng);
  }
}

struct FdReport {
  double max_rel = 0.0;
  std::string worst;
  int checked = 0;
};

inline double rel_error(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Compares analytic parameter gradients with central differences of f.
// At most max_entries entries per parameter are probed.
inline FdReport check_param_grads(ParamStore& store, const ad::GradStore& grads, const std::function<double()>& f,
                                  double h = 1e-5, int max_entries = 40, std::uint64_t seed = 11) {
  FdReport rep;
  Rng rng(seed);
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto id = static_cast<ad::ParamId>(i);
    Mat& m = store.value(id);
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(m.size()));
    for (Eigen::Index k = 0; k < m.size(); ++k) idx[static_cast<std::size_t>(k)] = k;
    std::shuffle(idx.begin(), idx.end(), rng);
    if (idx.size() > static_cast<std::size_t>(max_entries)) idx.resize(static_cast<std::size_t>(max_entries));
    for (Eigen::Index k : idx) {
      const double orig = m.data()[k];
      m.data()[k] = orig + h;
      const double up = f();
      m.data()[k] = orig - h;
      const double down = f();
      m.data()[k] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = grads.has(id) ? grads.get(id).data()[k] : 0.0;
      const double r = rel_error(analytic, numeric);
      ++rep.checked;
      if (r > rep.max_rel) {
        rep.max_rel = r;
        rep.worst = store.name(id) + "[" + std::to_string(k) + "] analytic " + std::to_string(analytic) +
                    " numeric " + std::to_string(numeric);
      }
    }
  }
  return rep;
}

// Same oracle for a differentiable input matrix of a plain function.
inline FdReport check_input_grad(Mat& x, const Mat& analytic, const std::function<double()>& f, double h = 1e-5) {
  FdReport rep;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double orig = x.data()[k];
    x.data()[k] = orig + h;
    const double up = f();
    x.data()[k] = orig - h;
    const double down = f();
    x.data()[k] = orig;
    const double r = rel_error(analytic.data()[k], (up - down) / (2.0 * h));
    ++rep.checked;
    if (r > rep.max_rel) {
      rep.max_rel = r;
      rep.worst = "entry " + std::to_string(k);
    }
  }
  return rep;
}

inline Mat random_mat(int rows, int cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Mat m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = n(rng);
  return m;
}

}  // namespace tbps::testing
