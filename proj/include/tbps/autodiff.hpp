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

// Reverse-mode differentiation over small dense matrices.
//
// A Tape records one forward computation. Parameters enter as references to
// externally owned matrices (no copy); their gradients are collected into a
// GradStore after the sweep. Every sample in a batch gets its own tape so
// forward/backward passes can run concurrently; see kernels.hpp.

#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "tbps/common.hpp"

namespace tbps::ad {

using ParamId = int;

// Sparse-by-parameter gradient accumulator. Untouched parameters hold no
// storage, so per-chunk stores stay cheap.
class GradStore {
 public:
  GradStore() = default;
  explicit GradStore(std::size_t num_params) { resize(num_params); }

  void resize(std::size_t num_params);
  std::size_t size() const { return grads_.size(); }

  bool has(ParamId id) const;
  const Mat& get(ParamId id) const;
  void accumulate(ParamId id, const Mat& g);
  // Adds every touched entry of other, in parameter order.
  void add(const GradStore& other);
  void scale(double s);
  double squared_norm() const;
  void erase(ParamId id);
  void clear();

 private:
  std::vector<Mat> grads_;
  std::vector<char> touched_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Mat value);
  // Differentiable leaf whose gradient can be read after a sweep.
  Var input(Mat value);
  // References parameter storage, which must outlive the tape.
  Var param(ParamId id, const Mat& value);

  const Mat& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  // Gradient of v; a zero matrix when nothing flowed into it.
  Mat grad(Var v) const;

  // Adds g to the incoming gradient of v (before calling sweep()).
  void seed(Var v, const Mat& g);
  // Seeds d(scalar)/d(scalar) = 1 and sweeps.
  void backward(Var scalar);
  void sweep();
  void collect_param_grads(GradStore& out) const;

  std::size_t size() const { return nodes_.size(); }

  // Op construction; used by the free functions below.
  Var push(Mat value, std::initializer_list<Var> inputs, Backward fn);
  Var push(Mat value, std::span<const Var> inputs, Backward fn);
  // Lazily zero-initialized gradient slot.
  Mat& grad_ref(int id);
  const Mat& value_of(int id) const { return value(Var{id}); }
  bool needs(int id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Mat owned;
    const Mat* external = nullptr;
    Mat grad;
    bool has_grad = false;
    bool requires_grad = false;
    ParamId param = -1;
    Backward backward;
  };
  bool grad_enabled_;
  std::vector<Node> nodes_;
};

// ---- ops -------------------------------------------------------------------

Var matmul(Tape& t, Var a, Var b);
// a * b^T
Var matmul_nt(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
// Adds a 1 x n row to every row of a.
Var add_row(Tape& t, Var a, Var row);
Var scale(Tape& t, Var a, double s);
Var hadamard(Tape& t, Var a, Var b);
// Divides every entry of a by the 1 x 1 value s.
Var divide(Tape& t, Var a, Var s);
Var gelu(Tape& t, Var a);
Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps = 1e-5);

// Multi-head scaled dot-product attention. q: Lq x d, k/v: Lk x d.
// When probs_out is given it receives one Lq x Lk matrix per head.
Var attention(Tape& t, Var q, Var k, Var v, int heads, bool causal,
              std::vector<Mat>* probs_out = nullptr);

Var gather_rows(Tape& t, Var table, std::span<const int> rows);
Var concat_rows(Tape& t, std::span<const Var> parts);
Var slice_rows(Tape& t, Var x, int begin, int count);
Var slice_cols(Tape& t, Var x, int begin, int count);
// x * keep + prototype * (1 - keep); keep is a 0/1 matrix shaped like x and
// prototype is 1 x d.
Var channel_mix(Tape& t, Var x, Var prototype, const Mat& keep);
Var l2_normalize_rows(Tape& t, Var x, double eps = 1e-12);

// Sum over rows of -log softmax(logits)[target]; rows with target < 0 are
// skipped. Returns 1 x 1.
Var cross_entropy(Tape& t, Var logits, std::span<const int> targets);
// Sum over rows of -sum_j targets(i,j) log softmax(logits)(i,j).
Var soft_cross_entropy(Tape& t, Var logits, const Mat& targets);
Var sum(Tape& t, Var x);

// Row-wise numerically stable softmax on plain matrices.
Mat softmax_rows(const Mat& x);

}  // namespace tbps::ad
