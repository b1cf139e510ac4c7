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

#include <omp.h>

#include "helpers.hpp"
#include "tbps/kernels.hpp"

using namespace tbps;

namespace {

struct Fixture {
  CorpusSplit split = generate_corpus(testing::tiny_spec(), 4);
  EncoderParams params{EncoderConfig::for_corpus(testing::tiny_spec(), 8), 1};
  std::vector<PairedSample> samples;
  Batch batch;
  std::vector<MaskOutcome> masks;
  Fixture() {
    testing::randomize(params.store, 2, 0.3);
    params.store.value(params.tau)(0, 0) = 0.1;
    for (std::size_t i = 0; i < split.unlabeled.size() && i < 21; ++i) {
      Caption c = split.labeled[i % split.labeled.size()].caption;
      c.provenance = Provenance::pseudo;
      samples.push_back({static_cast<int>(i), split.unlabeled[i], c});
    }
    for (const PairedSample& s : samples) batch.items.push_back(&s);
    std::vector<MaskRequest> reqs;
    for (const PairedSample& s : samples) reqs.push_back({4, s.caption.tokens, true});
    masks = mask_batch(MaskConfig{}, reqs, 8, 3, Mode::training);
  }
};

void check_identical(const BatchGradient& a, const BatchGradient& b, std::size_t n) {
  CHECK(a.loss.itc == b.loss.itc);
  CHECK(a.loss.itm == b.loss.itm);
  CHECK(a.negatives.image_for_text == b.negatives.image_for_text);
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = static_cast<ad::ParamId>(i);
    REQUIRE(a.grads.has(id) == b.grads.has(id));
    if (a.grads.has(id)) CHECK(a.grads.get(id) == b.grads.get(id));
  }
}

double max_abs_diff(const BatchGradient& a, const BatchGradient& b, std::size_t n) {
  double worst = std::abs(a.loss.total() - b.loss.total());
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = static_cast<ad::ParamId>(i);
    if (!a.grads.has(id) && !b.grads.has(id)) continue;
    const Mat ga = a.grads.has(id) ? a.grads.get(id) : Mat::Zero(b.grads.get(id).rows(), b.grads.get(id).cols());
    const Mat gb = b.grads.has(id) ? b.grads.get(id) : Mat::Zero(ga.rows(), ga.cols());
    worst = std::max(worst, (ga - gb).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace

TEST_CASE("parallel batch gradient is bit-identical to serial for any thread count") {
  Fixture fx;
  const std::size_t n = fx.params.store.size();
  const BatchGradient serial = batch_gradient(fx.params, fx.batch, fx.masks, ObjectiveOptions{}, 9, Exec::serial);
  const int saved = omp_get_max_threads();
  for (int threads : {1, 2, 3, 4, 7}) {
    omp_set_num_threads(threads);
    const BatchGradient par = batch_gradient(fx.params, fx.batch, fx.masks, ObjectiveOptions{}, 9, Exec::parallel);
    check_identical(serial, par, n);
  }
  omp_set_num_threads(saved);
}

TEST_CASE("parallel batch gradient agrees with the single-tape reference") {
  Fixture fx;
  const std::size_t n = fx.params.store.size();
  for (bool masked : {false, true}) {
    const std::span<const MaskOutcome> m = masked ? std::span<const MaskOutcome>(fx.masks) : std::span<const MaskOutcome>();
    const BatchGradient par = batch_gradient(fx.params, fx.batch, m, ObjectiveOptions{}, 4, Exec::parallel);
    const BatchGradient ref = batch_gradient_reference(fx.params, fx.batch, m, ObjectiveOptions{}, 4);
    CHECK(par.negatives.image_for_text == ref.negatives.image_for_text);
    CHECK(par.negatives.text_for_image == ref.negatives.text_for_image);
    CHECK(max_abs_diff(par, ref, n) < 1e-12);
  }
}

TEST_CASE("feature and similarity kernels") {
  Fixture fx;
  const std::vector<SyntheticImage>& imgs = fx.split.unlabeled;
  std::vector<Caption> caps;
  for (const ImageTextPair& p : fx.split.labeled) caps.push_back(p.caption);
  const Mat vs = image_features(fx.params, imgs, Exec::serial);
  const Mat vp = image_features(fx.params, imgs, Exec::parallel);
  CHECK(vs == vp);
  for (std::size_t i = 0; i < imgs.size(); i += 7)
    CHECK(vs.row(static_cast<Eigen::Index>(i)) == image_global_feature(fx.params, imgs[i]));
  const Mat ts = text_features(fx.params, caps, Exec::serial);
  CHECK(ts == text_features(fx.params, caps, Exec::parallel));

  const Mat sim = cosine_similarity(ts, vs, Exec::parallel);
  CHECK(sim == cosine_similarity(ts, vs, Exec::serial));
  for (Eigen::Index q = 0; q < ts.rows(); ++q)
    for (Eigen::Index g = 0; g < vs.rows(); g += 5) {
      const double oracle = ts.row(q).dot(vs.row(g)) / (ts.row(q).norm() * vs.row(g).norm());
      CHECK(sim(q, g) == doctest::Approx(oracle).epsilon(1e-12));
    }
  CHECK(max_threads() >= 1);
}
