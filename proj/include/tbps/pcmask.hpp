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

// Hybrid patch/channel masking. Patch level removes image patches and swaps
// text tokens for MASK; channel level replaces random feature channels of the
// surviving embedding rows with a learnable prototype.

#include <atomic>
#include <cstdint>
#include <span>
#include <vector>

#include "tbps/common.hpp"
#include "tbps/corpus.hpp"

namespace tbps {

struct MaskConfig {
  double rho_v = 0.2;
  double rho_t = 0.1;
  double beta_v = 0.1;
  double beta_t = 0.1;
  bool patch_v = true;
  bool patch_t = true;
  bool channel_v = true;
  bool channel_t = true;
  // Restrict masking to pseudo-labeled pairs.
  bool pseudo_only = false;

  bool any_enabled() const { return patch_v || patch_t || channel_v || channel_t; }
  void validate() const;
  static MaskConfig disabled();
};

struct MaskOutcome {
  std::vector<int> kept_patch_indices;      // sorted, strictly increasing
  std::vector<int> masked_token_positions;  // sorted caption positions
  Mat image_channel_keep;                   // kept_patches x d, 0/1; empty = no channel mask
  Mat text_channel_keep;                    // caption_tokens x d, 0/1; empty = no channel mask
  std::uint64_t draw_seed = 0;

  bool is_identity(int num_patches) const;
  static MaskOutcome identity(int num_patches);
};

enum class Mode { training, inference };

// Uniform subset of floor(M * (1 - rho)) patch indices, sorted.
std::vector<int> draw_patch_mask(int num_patches, double rho, std::uint64_t seed);

// Uniform subset of round-half-up(n * rho) positions among the n non-special
// tokens (BOS/EOS/PAD/MASK are never selected).
std::vector<int> draw_token_mask(std::span<const TokenId> tokens, double rho, std::uint64_t seed);

// Binary keep matrix: each entry 0 with probability beta, else 1.
Mat draw_channel_keep(int rows, int width, double beta, Rng& rng);

// row * b + prototype * (1 - b) for a fixed b.
RowVec mix_channels(const RowVec& row, const RowVec& prototype, const RowVec& keep);

// Draws b per channel and applies mix_channels. When keep_out is non-null it
// receives the drawn b.
RowVec apply_channel_mask(const RowVec& row, const RowVec& prototype, double beta,
                          std::uint64_t seed, RowVec* keep_out = nullptr);

struct MaskRequest {
  int num_patches = 0;
  std::span<const TokenId> tokens;
  bool pseudo = true;
};

// Independent draws per sample. Channel masks cover the surviving image rows
// and the content-token rows of the text.
std::vector<MaskOutcome> mask_batch(const MaskConfig& config, std::span<const MaskRequest> batch,
                                    int width, std::uint64_t seed, Mode mode);

// Incremented every time an embedding call consumes a mask outcome. The
// evaluation paths assert it does not move.
std::atomic<long>& mask_application_counter();

}  // namespace tbps
