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

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "tbps/params.hpp"

using namespace tbps;
namespace fs = std::filesystem;

TEST_CASE("first Adam step moves each weight by lr times the gradient sign") {
  ParamStore store;
  Mat w(1, 4);
  w << 1.0, -2.0, 0.5, 3.0;
  const ad::ParamId id = store.add("w", w);
  ad::GradStore g(store.size());
  Mat grad(1, 4);
  grad << 0.3, -4.0, 1e-3, 0.0;
  g.accumulate(id, grad);
  Adam adam(store, {.lr = 0.01});
  adam.step(store, g);
  const Mat& after = store.value(id);
  CHECK(after(0, 0) == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(after(0, 1) == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
  CHECK(after(0, 2) == doctest::Approx(0.5 - 0.01).epsilon(1e-4));
  CHECK(after(0, 3) == 3.0);
  CHECK(adam.steps() == 1);
}

TEST_CASE("Adam matches a scalar recurrence over several steps") {
  ParamStore store;
  const ad::ParamId id = store.add("x", Mat::Constant(1, 1, 2.0));
  Adam adam(store, {.lr = 0.1});
  double x = 2.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 10; ++t) {
    const double grad = 2.0 * x;  // d/dx x^2
    ad::GradStore g(store.size());
    g.accumulate(id, Mat::Constant(1, 1, 2.0 * store.value(id)(0, 0)));
    adam.step(store, g);
    m = 0.9 * m + 0.1 * grad;
    v = 0.999 * v + 0.001 * grad * grad;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(store.value(id)(0, 0) == doctest::Approx(x).epsilon(1e-12));
  }
}

TEST_CASE("global-norm clipping") {
  ad::GradStore g(2);
  g.accumulate(0, Mat::Constant(1, 1, 3.0));
  g.accumulate(1, Mat::Constant(1, 1, 4.0));
  CHECK(clip_grad_norm(g, 10.0) == doctest::Approx(5.0));
  CHECK(g.get(0)(0, 0) == 3.0);
  CHECK(clip_grad_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(std::sqrt(g.squared_norm()) == doctest::Approx(1.0));
  CHECK(g.get(1)(0, 0) == doctest::Approx(0.8));
}

TEST_CASE("checkpoint round-trip and corruption errors") {
  ParamStore store;
  Rng rng(1);
  store.add("a", testing::random_mat(3, 2, rng));
  store.add("b", testing::random_mat(1, 5, rng));
  const fs::path path = fs::temp_directory_path() / "tbps_params_test.ckpt";
  write_checkpoint(path, to_checkpoint("encoder", store));

  ParamStore other;
  other.add("a", Mat::Zero(3, 2));
  other.add("b", Mat::Zero(1, 5));
  load_into(read_checkpoint(path), "encoder", other);
  CHECK(other == store);

  CHECK_THROWS(load_into(read_checkpoint(path), "captioner", other));
  ParamStore wrong_shape;
  wrong_shape.add("a", Mat::Zero(2, 3));
  wrong_shape.add("b", Mat::Zero(1, 5));
  CHECK_THROWS(load_into(read_checkpoint(path), "encoder", wrong_shape));

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS(read_checkpoint(path));
  fs::resize_file(path, 6);
  CHECK_THROWS(read_checkpoint(path));
  CHECK_THROWS(read_checkpoint(fs::temp_directory_path() / "tbps_missing.ckpt"));
  fs::remove(path);
}
