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

#include <array>

#include "helpers.hpp"
#include "tbps/kernels.hpp"
#include "tbps/pcmask.hpp"

using namespace tbps;

namespace {

std::vector<TokenId> ten_content_tokens() {
  std::vector<TokenId> t = {Vocabulary::kBos};
  for (int i = 0; i < 10; ++i) t.push_back(4 + i);
  t.push_back(Vocabulary::kEos);
  return t;
}

// Pearson chi-square statistic of a 2x2 contingency table.
double chi_square(const std::array<std::array<double, 2>, 2>& t) {
  const double n = t[0][0] + t[0][1] + t[1][0] + t[1][1];
  double stat = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      const double e = (t[i][0] + t[i][1]) * (t[0][j] + t[1][j]) / n;
      stat += (t[i][j] - e) * (t[i][j] - e) / e;
    }
  return stat;
}

}  // namespace

TEST_CASE("patch mask sizes") {
  const auto kept = draw_patch_mask(16, 0.2, 1);
  CHECK(kept.size() == 12);
  CHECK(std::is_sorted(kept.begin(), kept.end()));
  CHECK(std::adjacent_find(kept.begin(), kept.end()) == kept.end());
  CHECK(kept.front() >= 0);
  CHECK(kept.back() < 16);
  const auto all = draw_patch_mask(16, 0.0, 1);
  CHECK(all.size() == 16);
  CHECK(draw_patch_mask(16, 0.8, 1).size() == 3);
  CHECK(draw_patch_mask(16, 0.2, 5) == draw_patch_mask(16, 0.2, 5));
  CHECK_THROWS_AS(draw_patch_mask(16, 1.0, 1), ContractError);
  CHECK_THROWS_AS(draw_patch_mask(16, -0.1, 1), ContractError);
  CHECK_THROWS_AS(draw_patch_mask(0, 0.2, 1), ContractError);
}

TEST_CASE("patch mask is uniform over indices") {
  std::array<int, 16> hits{};
  for (int n = 0; n < 10000; ++n)
    for (int k : draw_patch_mask(16, 0.2, derive_seed(3, n))) ++hits[static_cast<std::size_t>(k)];
  for (int h : hits) CHECK(h / 10000.0 == doctest::Approx(0.75).epsilon(0.02 / 0.75));
}

TEST_CASE("token mask counts and exclusions") {
  const auto tokens = ten_content_tokens();
  CHECK(draw_token_mask(tokens, 0.1, 1).size() == 1);
  CHECK(draw_token_mask(tokens, 0.0, 1).empty());
  CHECK(draw_token_mask(tokens, 0.25, 1).size() == 3);  // 2.5 rounds up
  std::vector<TokenId> padded = tokens;
  padded.push_back(Vocabulary::kPad);
  padded.push_back(Vocabulary::kMask);
  int violations = 0;
  for (int n = 0; n < 1000; ++n)
    for (int pos : draw_token_mask(padded, 0.5, derive_seed(4, n)))
      violations += padded[static_cast<std::size_t>(pos)] < 4 ? 1 : 0;
  CHECK(violations == 0);
  CHECK_THROWS_AS(draw_token_mask(tokens, 1.0, 1), ContractError);
}

TEST_CASE("channel mixing formula") {
  RowVec row(4), proto(4), keep(4);
  row << 1, 2, 3, 4;
  proto << 9, 9, 9, 9;
  keep << 1, 0, 1, 0;
  RowVec expect(4);
  expect << 1, 9, 3, 9;
  CHECK(mix_channels(row, proto, keep) == expect);

  Rng rng(5);
  for (int n = 0; n < 100; ++n) {
    const RowVec r = testing::random_mat(1, 32, rng);
    const RowVec p = testing::random_mat(1, 32, rng);
    RowVec b;
    const RowVec out = apply_channel_mask(r, p, 0.3, derive_seed(6, n), &b);
    for (Eigen::Index j = 0; j < 32; ++j) {
      CHECK((b(j) == 0.0 || b(j) == 1.0));
      CHECK(out(j) == r(j) * b(j) + p(j) * (1.0 - b(j)));
    }
  }
  CHECK(apply_channel_mask(row, proto, 0.0, 1) == row);
  CHECK_THROWS_AS(mix_channels(row, RowVec::Zero(3), keep), ContractError);
  CHECK_THROWS_AS(apply_channel_mask(row, RowVec::Zero(3), 0.1, 1), ContractError);
}

TEST_CASE("channel mask rate matches beta") {
  const RowVec row = RowVec::Ones(32), proto = RowVec::Zero(32);
  double masked = 0.0;
  for (int n = 0; n < 10000; ++n) {
    RowVec b;
    apply_channel_mask(row, proto, 0.1, derive_seed(7, n), &b);
    masked += 32.0 - b.sum();
  }
  CHECK(masked / (32.0 * 10000.0) == doctest::Approx(0.1).epsilon(0.01 / 0.1));
}

TEST_CASE("batch masking over a full epoch") {
  const CorpusSplit split = generate_corpus(CorpusSpec{}, 1);
  MaskConfig cfg;
  std::vector<MaskRequest> reqs;
  std::vector<std::vector<TokenId>> captions;
  for (const SyntheticImage& img : split.unlabeled) {
    (void)img;
    captions.push_back(ten_content_tokens());
  }
  for (std::size_t i = 0; i < split.unlabeled.size(); ++i) reqs.push_back({16, captions[i], true});
  for (std::size_t start = 0; start < reqs.size(); start += 64) {
    const std::size_t end = std::min(reqs.size(), start + 64);
    const auto out = mask_batch(cfg, std::span(reqs).subspan(start, end - start), 32, derive_seed(1, start),
                                Mode::training);
    for (const MaskOutcome& m : out) {
      CHECK(m.kept_patch_indices.size() == 12);
      CHECK(m.masked_token_positions.size() == 1);
      CHECK(m.image_channel_keep.rows() == 12);
      CHECK(m.text_channel_keep.rows() == 12);
      // Special-token rows are never channel-masked.
      CHECK(m.text_channel_keep.row(0).minCoeff() == 1.0);
      CHECK(m.text_channel_keep.row(11).minCoeff() == 1.0);
    }
  }
}

TEST_CASE("disabled, deterministic, training-only") {
  const auto tokens = ten_content_tokens();
  std::vector<MaskRequest> reqs(4, MaskRequest{16, tokens, true});
  for (const MaskOutcome& m : mask_batch(MaskConfig::disabled(), reqs, 32, 1, Mode::training))
    CHECK(m.is_identity(16));
  const auto a = mask_batch(MaskConfig{}, reqs, 32, 9, Mode::training);
  const auto b = mask_batch(MaskConfig{}, reqs, 32, 9, Mode::training);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].kept_patch_indices == b[i].kept_patch_indices);
    CHECK(a[i].masked_token_positions == b[i].masked_token_positions);
    CHECK(a[i].image_channel_keep == b[i].image_channel_keep);
    CHECK(a[i].text_channel_keep == b[i].text_channel_keep);
  }
  CHECK_THROWS_AS(mask_batch(MaskConfig{}, reqs, 32, 1, Mode::inference), ContractError);
  MaskConfig bad;
  bad.rho_v = 1.0;
  CHECK_THROWS_AS(mask_batch(bad, reqs, 32, 1, Mode::training), ConfigError);
}

TEST_CASE("pseudo-only masking spares human pairs") {
  const auto tokens = ten_content_tokens();
  MaskConfig cfg;
  cfg.pseudo_only = true;
  std::vector<MaskRequest> reqs = {{16, tokens, false}, {16, tokens, true}};
  const auto out = mask_batch(cfg, reqs, 32, 3, Mode::training);
  CHECK(out[0].is_identity(16));
  CHECK_FALSE(out[1].is_identity(16));
}

TEST_CASE("draws are independent across samples and steps") {
  const auto tokens = ten_content_tokens();
  std::vector<MaskRequest> reqs(2, MaskRequest{16, tokens, true});
  std::array<std::array<double, 2>, 2> across{}, steps{};
  int prev = -1;
  for (int n = 0; n < 4000; ++n) {
    const auto out = mask_batch(MaskConfig{}, reqs, 32, derive_seed(8, n), Mode::training);
    auto keeps0 = [](const MaskOutcome& m) {
      return std::binary_search(m.kept_patch_indices.begin(), m.kept_patch_indices.end(), 0) ? 1 : 0;
    };
    const int a = keeps0(out[0]), b = keeps0(out[1]);
    across[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] += 1;
    if (prev >= 0) steps[static_cast<std::size_t>(prev)][static_cast<std::size_t>(a)] += 1;
    prev = a;
  }
  // 6.635 is the 0.99 quantile of chi-square with one degree of freedom.
  CHECK(chi_square(across) < 6.635);
  CHECK(chi_square(steps) < 6.635);
}

TEST_CASE("image channel masks follow patch masking") {
  EncoderParams p(EncoderConfig::for_corpus(testing::tiny_spec(), 8), 1);
  testing::randomize(p.store, 2);
  const CorpusSplit split = generate_corpus(testing::tiny_spec(), 1);
  const SyntheticImage& img = split.unlabeled[0];
  MaskConfig cfg;
  cfg.rho_v = 0.5;
  cfg.beta_v = 0.5;
  std::vector<MaskRequest> reqs = {{4, split.labeled[0].caption.tokens, true}};
  const MaskOutcome m = mask_batch(cfg, reqs, 8, 4, Mode::training)[0];
  REQUIRE(m.kept_patch_indices.size() == 2);
  // Sequential oracle: drop patches, then mix channels row by row.
  const EmbeddingSequence full = embed_image(p, img);
  const EmbeddingSequence masked = embed_image(p, img, &m);
  const Mat& proj_w = p.store.value(p.patch_w);
  const Mat& proj_b = p.store.value(p.patch_b);
  for (int i = 0; i < 2; ++i) {
    const int k = m.kept_patch_indices[static_cast<std::size_t>(i)];
    const RowVec proj = img.patches.row(k) * proj_w + proj_b;
    const RowVec mixed = mix_channels(proj, p.store.value(p.img_proto), m.image_channel_keep.row(i));
    const RowVec expect = mixed + p.store.value(p.img_pos).row(k + 1);
    CHECK((masked.vectors.row(i + 1) - expect).norm() < 1e-12);
  }
  CHECK(masked.vectors.row(0) == full.vectors.row(0));
}

TEST_CASE("identity masks are indistinguishable from no masking") {
  EncoderParams p(EncoderConfig::for_corpus(testing::tiny_spec(), 8), 1);
  testing::randomize(p.store, 3);
  p.store.value(p.tau)(0, 0) = 0.2;
  const CorpusSplit split = generate_corpus(testing::tiny_spec(), 2);
  std::vector<PairedSample> samples;
  for (std::size_t i = 0; i < 4; ++i)
    samples.push_back({static_cast<int>(i), split.labeled[i].image, split.labeled[i].caption});
  Batch batch;
  for (const PairedSample& s : samples) batch.items.push_back(&s);
  std::vector<MaskRequest> reqs;
  for (const PairedSample& s : samples) reqs.push_back({4, s.caption.tokens, true});
  const auto identity = mask_batch(MaskConfig::disabled(), reqs, 8, 1, Mode::training);
  const BatchGradient a = batch_gradient(p, batch, {}, ObjectiveOptions{}, 5, Exec::serial);
  const BatchGradient b = batch_gradient(p, batch, identity, ObjectiveOptions{}, 5, Exec::serial);
  CHECK(a.loss.total() == b.loss.total());
  for (std::size_t i = 0; i < p.store.size(); ++i) {
    const auto id = static_cast<ad::ParamId>(i);
    REQUIRE(a.grads.has(id) == b.grads.has(id));
    if (a.grads.has(id)) CHECK(a.grads.get(id) == b.grads.get(id));
  }
}
