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

#include "tbps/pcmask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tbps {

void MaskConfig::validate() const {
  for (double r : {rho_v, rho_t, beta_v, beta_t})
    if (!(r >= 0.0 && r < 1.0)) throw ConfigError("mask: ratios must lie in [0, 1)");
}

MaskConfig MaskConfig::disabled() {
  MaskConfig c;
  c.patch_v = c.patch_t = c.channel_v = c.channel_t = false;
  return c;
}

bool MaskOutcome::is_identity(int num_patches) const {
  if (static_cast<int>(kept_patch_indices.size()) != num_patches) return false;
  for (int i = 0; i < num_patches; ++i)
    if (kept_patch_indices[static_cast<std::size_t>(i)] != i) return false;
  return masked_token_positions.empty() && image_channel_keep.size() == 0 &&
         text_channel_keep.size() == 0;
}

MaskOutcome MaskOutcome::identity(int num_patches) {
  MaskOutcome m;
  m.kept_patch_indices.resize(static_cast<std::size_t>(num_patches));
  std::iota(m.kept_patch_indices.begin(), m.kept_patch_indices.end(), 0);
  return m;
}

std::vector<int> draw_patch_mask(int num_patches, double rho, std::uint64_t seed) {
  require(num_patches >= 1, "draw_patch_mask: need at least one patch");
  if (!(rho >= 0.0 && rho < 1.0)) throw ContractError("draw_patch_mask: rho must lie in [0, 1)");
  const int keep = static_cast<int>(std::floor(num_patches * (1.0 - rho) + 1e-9));
  std::vector<int> idx(static_cast<std::size_t>(num_patches));
  std::iota(idx.begin(), idx.end(), 0);
  if (keep == num_patches) return idx;
  Rng rng(seed);
  // Partial Fisher-Yates: the first `keep` slots form a uniform subset.
  for (int i = 0; i < keep; ++i) {
    std::uniform_int_distribution<int> pick(i, num_patches - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  idx.resize(static_cast<std::size_t>(keep));
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<int> draw_token_mask(std::span<const TokenId> tokens, double rho, std::uint64_t seed) {
  if (!(rho >= 0.0 && rho < 1.0)) throw ContractError("draw_token_mask: rho must lie in [0, 1)");
  std::vector<int> content;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] >= 4) content.push_back(static_cast<int>(i));
  const int n = static_cast<int>(content.size());
  const int count = std::min(n, static_cast<int>(std::floor(n * rho + 0.5 + 1e-9)));
  if (count == 0) return {};
  Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, n - 1);
    std::swap(content[static_cast<std::size_t>(i)], content[static_cast<std::size_t>(pick(rng))]);
  }
  content.resize(static_cast<std::size_t>(count));
  std::sort(content.begin(), content.end());
  return content;
}

Mat draw_channel_keep(int rows, int width, double beta, Rng& rng) {
  if (!(beta >= 0.0 && beta < 1.0)) throw ContractError("channel mask: beta must lie in [0, 1)");
  std::bernoulli_distribution masked(beta);
  Mat keep(rows, width);
  for (Eigen::Index i = 0; i < keep.size(); ++i) keep.data()[i] = masked(rng) ? 0.0 : 1.0;
  return keep;
}

RowVec mix_channels(const RowVec& row, const RowVec& prototype, const RowVec& keep) {
  require(row.size() == prototype.size() && row.size() == keep.size(),
          "mix_channels: width mismatch");
  return row.cwiseProduct(keep) + prototype.cwiseProduct((1.0 - keep.array()).matrix());
}

RowVec apply_channel_mask(const RowVec& row, const RowVec& prototype, double beta,
                          std::uint64_t seed, RowVec* keep_out) {
  require(row.size() == prototype.size(), "apply_channel_mask: width mismatch");
  Rng rng(seed);
  const Mat keep = draw_channel_keep(1, static_cast<int>(row.size()), beta, rng);
  RowVec b = keep.row(0);
  if (keep_out) *keep_out = b;
  return mix_channels(row, prototype, b);
}

std::vector<MaskOutcome> mask_batch(const MaskConfig& config, std::span<const MaskRequest> batch,
                                    int width, std::uint64_t seed, Mode mode) {
  if (mode != Mode::training) throw ContractError("mask_batch: masking is training-only");
  config.validate();
  std::vector<MaskOutcome> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const MaskRequest& req = batch[i];
    const std::uint64_t s = derive_seed(seed, i);
    MaskOutcome m;
    m.draw_seed = s;
    const bool active = !(config.pseudo_only && !req.pseudo);
    m.kept_patch_indices = (active && config.patch_v)
                               ? draw_patch_mask(req.num_patches, config.rho_v, derive_seed(s, 1))
                               : MaskOutcome::identity(req.num_patches).kept_patch_indices;
    if (active && config.patch_t)
      m.masked_token_positions = draw_token_mask(req.tokens, config.rho_t, derive_seed(s, 2));
    if (active && config.channel_v) {
      Rng rng(derive_seed(s, 3));
      m.image_channel_keep =
          draw_channel_keep(static_cast<int>(m.kept_patch_indices.size()), width, config.beta_v, rng);
    }
    if (active && config.channel_t) {
      Rng rng(derive_seed(s, 4));
      m.text_channel_keep = draw_channel_keep(static_cast<int>(req.tokens.size()), width, config.beta_t, rng);
      for (std::size_t p = 0; p < req.tokens.size(); ++p)
        if (req.tokens[p] < 4) m.text_channel_keep.row(static_cast<Eigen::Index>(p)).setOnes();
      // MASK-substituted rows stay maskable: they were content tokens.
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::atomic<long>& mask_application_counter() {
  static std::atomic<long> counter{0};
  return counter;
}

}  // namespace tbps
