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

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "tbps/autodiff.hpp"

namespace tbps {

// Named, ordered collection of parameter matrices.
class ParamStore {
 public:
  ad::ParamId add(std::string name, Mat value);
  ad::ParamId find(std::string_view name) const;  // -1 when absent

  std::size_t size() const { return values_.size(); }
  const std::string& name(ad::ParamId id) const { return names_[id]; }
  const Mat& value(ad::ParamId id) const { return values_[id]; }
  Mat& value(ad::ParamId id) { return values_[id]; }

  std::size_t scalar_count() const;
  bool all_finite() const;
  bool operator==(const ParamStore& other) const;

 private:
  std::vector<std::string> names_;
  std::vector<Mat> values_;
};

// Adaptive-moment optimizer with bias correction.
class Adam {
 public:
  struct Options {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() = default;
  Adam(const ParamStore& params, Options opts);

  void step(ParamStore& params, const ad::GradStore& grads);
  long steps() const { return t_; }
  const Options& options() const { return opts_; }

 private:
  Options opts_{};
  long t_ = 0;
  std::vector<Mat> m_, v_;
};

// Rescales grads so the global L2 norm is at most max_norm. Returns the norm
// before clipping.
double clip_grad_norm(ad::GradStore& grads, double max_norm);

// ---- checkpoint bundle -----------------------------------------------------
//
// Little-endian binary layout:
//   magic "TBPSCKPT", u32 schema version, u32 kind length, kind bytes,
//   u32 tensor count, then per tensor:
//   u32 name length, name bytes, u32 rows, u32 cols, rows*cols f64 row-major.

inline constexpr std::uint32_t kCheckpointSchemaVersion = 1;

struct Checkpoint {
  std::string kind;  // "captioner" or "encoder"
  std::vector<std::pair<std::string, Mat>> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

Checkpoint to_checkpoint(std::string kind, const ParamStore& params);
// Overwrites every tensor of params from ckpt; names and shapes must match.
void load_into(const Checkpoint& ckpt, std::string_view kind, ParamStore& params);

}  // namespace tbps
