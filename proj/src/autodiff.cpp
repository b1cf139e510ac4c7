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

#include "tbps/autodiff.hpp"

#include <cmath>
#include <memory>

namespace tbps::ad {

// ---- GradStore -------------------------------------------------------------

void GradStore::resize(std::size_t num_params) {
  grads_.resize(num_params);
  touched_.resize(num_params, 0);
}

bool GradStore::has(ParamId id) const {
  return id >= 0 && static_cast<std::size_t>(id) < touched_.size() && touched_[id];
}

const Mat& GradStore::get(ParamId id) const {
  require(has(id), "GradStore::get: parameter has no gradient");
  return grads_[id];
}

void GradStore::accumulate(ParamId id, const Mat& g) {
  require(id >= 0 && static_cast<std::size_t>(id) < grads_.size(),
          "GradStore::accumulate: parameter id out of range");
  if (!touched_[id]) {
    grads_[id] = g;
    touched_[id] = 1;
  } else {
    grads_[id] += g;
  }
}

void GradStore::add(const GradStore& other) {
  if (other.size() > size()) resize(other.size());
  for (std::size_t i = 0; i < other.size(); ++i)
    if (other.touched_[i]) accumulate(static_cast<ParamId>(i), other.grads_[i]);
}

void GradStore::scale(double s) {
  for (std::size_t i = 0; i < grads_.size(); ++i)
    if (touched_[i]) grads_[i] *= s;
}

double GradStore::squared_norm() const {
  double acc = 0.0;
  for (std::size_t i = 0; i < grads_.size(); ++i)
    if (touched_[i]) acc += grads_[i].squaredNorm();
  return acc;
}

void GradStore::erase(ParamId id) {
  require(id >= 0 && static_cast<std::size_t>(id) < grads_.size(), "GradStore: parameter id out of range");
  grads_[static_cast<std::size_t>(id)].resize(0, 0);
  touched_[static_cast<std::size_t>(id)] = 0;
}

void GradStore::clear() {
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    grads_[i].resize(0, 0);
    touched_[i] = 0;
  }
}

// ---- Tape ------------------------------------------------------------------

Var Tape::constant(Mat value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input(Mat value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(ParamId id, const Mat& value) {
  Node n;
  n.external = &value;
  n.requires_grad = grad_enabled_;
  n.param = id;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Mat& Tape::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.external ? *n.external : n.owned;
}

Mat Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.has_grad) return n.grad;
  const Mat& val = value(v);
  return Mat::Zero(val.rows(), val.cols());
}

Mat& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    const Mat& val = n.external ? *n.external : n.owned;
    n.grad = Mat::Zero(val.rows(), val.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::seed(Var v, const Mat& g) {
  if (!nodes_[v.id].requires_grad) return;
  Mat& dst = grad_ref(v.id);
  require(dst.rows() == g.rows() && dst.cols() == g.cols(), "Tape::seed: shape mismatch");
  dst += g;
}

void Tape::backward(Var scalar) {
  require(value(scalar).size() == 1, "Tape::backward: expected a scalar");
  seed(scalar, Mat::Ones(1, 1));
  sweep();
}

void Tape::sweep() {
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.has_grad && n.backward) n.backward(*this, i);
  }
}

void Tape::collect_param_grads(GradStore& out) const {
  for (const Node& n : nodes_)
    if (n.param >= 0 && n.has_grad) out.accumulate(n.param, n.grad);
}

Var Tape::push(Mat value, std::initializer_list<Var> inputs, Backward fn) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
              std::move(fn));
}

Var Tape::push(Mat value, std::span<const Var> inputs, Backward fn) {
  Node n;
  n.owned = std::move(value);
  bool any = false;
  for (Var in : inputs) any = any || nodes_[in.id].requires_grad;
  n.requires_grad = any;
  if (any) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

// ---- ops -------------------------------------------------------------------

namespace {

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractError(std::string(op) + ": shape mismatch");
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  const Mat& A = t.value(a);
  const Mat& B = t.value(b);
  require(A.cols() == B.rows(), "matmul: inner dimension mismatch");
  Mat out = A * B;
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, int self) {
    const Mat& G = tp.grad_ref(self);
    if (tp.needs(a.id)) tp.grad_ref(a.id).noalias() += G * tp.value(b).transpose();
    if (tp.needs(b.id)) tp.grad_ref(b.id).noalias() += tp.value(a).transpose() * G;
  });
}

Var matmul_nt(Tape& t, Var a, Var b) {
  const Mat& A = t.value(a);
  const Mat& B = t.value(b);
  require(A.cols() == B.cols(), "matmul_nt: inner dimension mismatch");
  Mat out = A * B.transpose();
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, int self) {
    const Mat& G = tp.grad_ref(self);
    if (tp.needs(a.id)) tp.grad_ref(a.id).noalias() += G * tp.value(b);
    if (tp.needs(b.id)) tp.grad_ref(b.id).noalias() += G.transpose() * tp.value(a);
  });
}

Var add(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "add");
  Mat out = t.value(a) + t.value(b);
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, int self) {
    const Mat& G = tp.grad_ref(self);
    if (tp.needs(a.id)) tp.grad_ref(a.id) += G;
    if (tp.needs(b.id)) tp.grad_ref(b.id) += G;
  });
}

Var sub(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "sub");
  Mat out = t.value(a) - t.value(b);
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, int self) {
    const Mat& G = tp.grad_ref(self);
    if (tp.needs(a.id)) tp.grad_ref(a.id) += G;
    if (tp.needs(b.id)) tp.grad_ref(b.id) -= G;
  });
}

Var add_row(Tape& t, Var a, Var row) {
  const Mat& A = t.value(a);
  const Mat& R = t.value(row);
  require(R.rows() == 1 && R.cols() == A.cols(), "add_row: row shape mismatch");
  Mat out = A.rowwise() + R.row(0);
  return t.push(std::move(out), {a, row}, [a, row](Tape& tp, int self) {
    const Mat& G = tp.grad_ref(self);
    if (tp.needs(a.id)) tp.grad_ref(a.id) += G;
    if (tp.needs(row.id)) tp.grad_ref(row.id) += G.colwise().sum();
  });
}

Var scale(Tape& t, Var a, double s) {
  Mat out = t.value(a) * s;
  return t.push(std::move(out), {a}, [a, s](Tape& tp, int self) {
    tp.grad_ref(a.id) += tp.grad_ref(self) * s;
  });
}

Var hadamard(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "hadamard");
  Mat out = t.value(a).cwiseProduct(t.value(b));
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, int self) {
    const Mat& G = tp.grad_ref(self);
    if (tp.needs(a.id)) tp.grad_ref(a.id) += G.cwiseProduct(tp.value(b));
    if (tp.needs(b.id)) tp.grad_ref(b.id) += G.cwiseProduct(tp.value(a));
  });
}

Var divide(Tape& t, Var a, Var s) {
  const Mat& S = t.value(s);
  require(S.size() == 1, "divide: divisor must be 1 x 1");
  const double d = S(0, 0);
  Mat out = t.value(a) / d;
  return t.push(std::move(out), {a, s}, [a, s](Tape& tp, int self) {
    const Mat& G = tp.grad_ref(self);
    const double dv = tp.value(s)(0, 0);
    if (tp.needs(a.id)) tp.grad_ref(a.id) += G / dv;
    if (tp.needs(s.id))
      tp.grad_ref(s.id)(0, 0) -= G.cwiseProduct(tp.value(a)).sum() / (dv * dv);
  });
}

Var gelu(Tape& t, Var a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  const Mat& X = t.value(a);
  Mat out = X.unaryExpr([](double x) {
    return 0.5 * x * (1.0 + std::tanh(kC * (x + 0.044715 * x * x * x)));
  });
  return t.push(std::move(out), {a}, [a](Tape& tp, int self) {
    const Mat& G = tp.grad_ref(self);
    const Mat& X = tp.value(a);
    Mat d = X.unaryExpr([](double x) {
      const double u = kC * (x + 0.044715 * x * x * x);
      const double th = std::tanh(u);
      const double du = kC * (1.0 + 3.0 * 0.044715 * x * x);
      return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
    });
    tp.grad_ref(a.id) += G.cwiseProduct(d);
  });
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps) {
  const Mat& X = t.value(x);
  const Mat& g = t.value(gain);
  const Mat& b = t.value(bias);
  require(g.rows() == 1 && g.cols() == X.cols() && b.rows() == 1 && b.cols() == X.cols(),
          "layer_norm: gain/bias shape mismatch");
  const Eigen::Index n = X.rows(), d = X.cols();
  auto xhat = std::make_shared<Mat>(n, d);
  auto inv_std = std::make_shared<Eigen::VectorXd>(n);
  Mat out(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = X.row(i).mean();
    const double var = (X.row(i).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)(i) = is;
    xhat->row(i) = (X.row(i).array() - mu) * is;
    out.row(i) = xhat->row(i).cwiseProduct(g.row(0)) + b.row(0);
  }
  return t.push(std::move(out), {x, gain, bias},
                [x, gain, bias, xhat, inv_std](Tape& tp, int self) {
                  const Mat& G = tp.grad_ref(self);
                  const Mat& g = tp.value(gain);
                  if (tp.needs(gain.id))
                    tp.grad_ref(gain.id) += G.cwiseProduct(*xhat).colwise().sum();
                  if (tp.needs(bias.id)) tp.grad_ref(bias.id) += G.colwise().sum();
                  if (tp.needs(x.id)) {
                    Mat& dx = tp.grad_ref(x.id);
                    const double inv_d = 1.0 / static_cast<double>(G.cols());
                    for (Eigen::Index i = 0; i < G.rows(); ++i) {
                      RowVec dxh = G.row(i).cwiseProduct(g.row(0));
                      const double m1 = dxh.sum() * inv_d;
                      const double m2 = dxh.cwiseProduct(xhat->row(i)).sum() * inv_d;
                      dx.row(i).array() +=
                          (*inv_std)(i) *
                          (dxh.array() - m1 - xhat->row(i).array() * m2);
                    }
                  }
                });
}

Mat softmax_rows(const Mat& x) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    // Scalar exp keeps exp(-inf) exactly zero for masked entries.
    out.row(i) = (x.row(i).array() - m).unaryExpr([](double v) { return std::exp(v); });
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Var attention(Tape& t, Var q, Var k, Var v, int heads, bool causal,
              std::vector<Mat>* probs_out) {
  const Mat& Q = t.value(q);
  const Mat& K = t.value(k);
  const Mat& V = t.value(v);
  require(heads >= 1 && Q.cols() % heads == 0, "attention: width not divisible by heads");
  require(K.cols() == Q.cols() && V.cols() == Q.cols() && K.rows() == V.rows(),
          "attention: operand shape mismatch");
  require(!causal || K.rows() >= Q.rows(), "attention: causal mask needs at least as many keys as queries");
  const Eigen::Index dh = Q.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  auto probs = std::make_shared<std::vector<Mat>>(heads);
  Mat out(Q.rows(), Q.cols());
  for (int h = 0; h < heads; ++h) {
    Mat scores = Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose() * inv_sqrt;
    if (causal) {
      const Eigen::Index offset = K.rows() - Q.rows();
      for (Eigen::Index i = 0; i < scores.rows(); ++i)
        for (Eigen::Index j = i + offset + 1; j < scores.cols(); ++j)
          scores(i, j) = -std::numeric_limits<double>::infinity();
    }
    (*probs)[h] = softmax_rows(scores);
    out.middleCols(h * dh, dh).noalias() = (*probs)[h] * V.middleCols(h * dh, dh);
  }
  if (probs_out) *probs_out = *probs;
  return t.push(std::move(out), {q, k, v},
                [q, k, v, heads, dh, inv_sqrt, probs](Tape& tp, int self) {
                  const Mat& G = tp.grad_ref(self);
                  const Mat& Q = tp.value(q);
                  const Mat& K = tp.value(k);
                  const Mat& V = tp.value(v);
                  const Eigen::Index lq = Q.rows(), lk = K.rows();
                  Mat dQ = Mat::Zero(lq, Q.cols());
                  Mat dK = Mat::Zero(lk, K.cols());
                  Mat dV = Mat::Zero(lk, V.cols());
                  for (int h = 0; h < heads; ++h) {
                    const Mat& P = (*probs)[h];
                    auto Gh = G.middleCols(h * dh, dh);
                    dV.middleCols(h * dh, dh).noalias() += P.transpose() * Gh;
                    Mat dP = Gh * V.middleCols(h * dh, dh).transpose();
                    Mat dS(lq, lk);
                    for (Eigen::Index i = 0; i < lq; ++i) {
                      const double inner = dP.row(i).cwiseProduct(P.row(i)).sum();
                      dS.row(i) = P.row(i).array() * (dP.row(i).array() - inner);
                    }
                    dS *= inv_sqrt;
                    dQ.middleCols(h * dh, dh).noalias() += dS * K.middleCols(h * dh, dh);
                    dK.middleCols(h * dh, dh).noalias() += dS.transpose() * Q.middleCols(h * dh, dh);
                  }
                  if (tp.needs(q.id)) tp.grad_ref(q.id) += dQ;
                  if (tp.needs(k.id)) tp.grad_ref(k.id) += dK;
                  if (tp.needs(v.id)) tp.grad_ref(v.id) += dV;
                });
}

Var gather_rows(Tape& t, Var table, std::span<const int> rows) {
  const Mat& T = t.value(table);
  Mat out(static_cast<Eigen::Index>(rows.size()), T.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < T.rows(), "gather_rows: row index out of range");
    out.row(static_cast<Eigen::Index>(i)) = T.row(rows[i]);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return t.push(std::move(out), {table}, [table, idx = std::move(idx)](Tape& tp, int self) {
    const Mat& G = tp.grad_ref(self);
    Mat& dT = tp.grad_ref(table.id);
    for (std::size_t i = 0; i < idx.size(); ++i) dT.row(idx[i]) += G.row(static_cast<Eigen::Index>(i));
  });
}

Var concat_rows(Tape& t, std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  Eigen::Index rows = 0;
  const Eigen::Index cols = t.value(parts[0]).cols();
  std::vector<Eigen::Index> offsets;
  for (Var p : parts) {
    require(t.value(p).cols() == cols, "concat_rows: width mismatch");
    offsets.push_back(rows);
    rows += t.value(p).rows();
  }
  Mat out(rows, cols);
  for (std::size_t i = 0; i < parts.size(); ++i)
    out.middleRows(offsets[i], t.value(parts[i]).rows()) = t.value(parts[i]);
  std::vector<Var> ins(parts.begin(), parts.end());
  return t.push(std::move(out), parts,
                [ins, offsets](Tape& tp, int self) {
                  const Mat& G = tp.grad_ref(self);
                  for (std::size_t i = 0; i < ins.size(); ++i)
                    if (tp.needs(ins[i].id))
                      tp.grad_ref(ins[i].id) += G.middleRows(offsets[i], tp.value(ins[i]).rows());
                });
}

Var slice_rows(Tape& t, Var x, int begin, int count) {
  const Mat& X = t.value(x);
  require(begin >= 0 && count >= 0 && begin + count <= X.rows(), "slice_rows: out of range");
  Mat out = X.middleRows(begin, count);
  return t.push(std::move(out), {x}, [x, begin, count](Tape& tp, int self) {
    tp.grad_ref(x.id).middleRows(begin, count) += tp.grad_ref(self);
  });
}

Var slice_cols(Tape& t, Var x, int begin, int count) {
  const Mat& X = t.value(x);
  require(begin >= 0 && count >= 0 && begin + count <= X.cols(), "slice_cols: out of range");
  Mat out = X.middleCols(begin, count);
  return t.push(std::move(out), {x}, [x, begin, count](Tape& tp, int self) {
    tp.grad_ref(x.id).middleCols(begin, count) += tp.grad_ref(self);
  });
}

Var channel_mix(Tape& t, Var x, Var prototype, const Mat& keep) {
  const Mat& X = t.value(x);
  const Mat& P = t.value(prototype);
  require_same_shape(X, keep, "channel_mix");
  require(P.rows() == 1 && P.cols() == X.cols(), "channel_mix: prototype width mismatch");
  Mat out = X.cwiseProduct(keep) +
            ((1.0 - keep.array()).matrix().array().rowwise() * P.row(0).array()).matrix();
  return t.push(std::move(out), {x, prototype}, [x, prototype, keep](Tape& tp, int self) {
    const Mat& G = tp.grad_ref(self);
    if (tp.needs(x.id)) tp.grad_ref(x.id) += G.cwiseProduct(keep);
    if (tp.needs(prototype.id))
      tp.grad_ref(prototype.id) += G.cwiseProduct((1.0 - keep.array()).matrix()).colwise().sum();
  });
}

Var l2_normalize_rows(Tape& t, Var x, double eps) {
  const Mat& X = t.value(x);
  Eigen::VectorXd norms = X.rowwise().norm().array().max(eps);
  Mat out = X.array().colwise() / norms.array();
  return t.push(std::move(out), {x}, [x, norms](Tape& tp, int self) {
    const Mat& G = tp.grad_ref(self);
    const Mat& Y = tp.value_of(self);
    Mat& dx = tp.grad_ref(x.id);
    for (Eigen::Index i = 0; i < G.rows(); ++i) {
      const double dot = G.row(i).dot(Y.row(i));
      dx.row(i) += (G.row(i) - dot * Y.row(i)) / norms(i);
    }
  });
}

Var cross_entropy(Tape& t, Var logits, std::span<const int> targets) {
  const Mat& L = t.value(logits);
  require(static_cast<Eigen::Index>(targets.size()) == L.rows(), "cross_entropy: target count");
  auto probs = std::make_shared<Mat>(softmax_rows(L));
  double loss = 0.0;
  for (Eigen::Index i = 0; i < L.rows(); ++i) {
    const int tgt = targets[static_cast<std::size_t>(i)];
    if (tgt < 0) continue;
    require(tgt < L.cols(), "cross_entropy: target out of range");
    const double m = L.row(i).maxCoeff();
    const double lse = m + std::log((L.row(i).array() - m).exp().sum());
    loss += lse - L(i, tgt);
  }
  Mat out(1, 1);
  out(0, 0) = loss;
  std::vector<int> tg(targets.begin(), targets.end());
  return t.push(std::move(out), {logits}, [logits, probs, tg = std::move(tg)](Tape& tp, int self) {
    const double g = tp.grad_ref(self)(0, 0);
    Mat& dL = tp.grad_ref(logits.id);
    for (Eigen::Index i = 0; i < probs->rows(); ++i) {
      const int tgt = tg[static_cast<std::size_t>(i)];
      if (tgt < 0) continue;
      dL.row(i) += g * probs->row(i);
      dL(i, tgt) -= g;
    }
  });
}

Var soft_cross_entropy(Tape& t, Var logits, const Mat& targets) {
  const Mat& L = t.value(logits);
  require_same_shape(L, targets, "soft_cross_entropy");
  auto probs = std::make_shared<Mat>(softmax_rows(L));
  double loss = 0.0;
  for (Eigen::Index i = 0; i < L.rows(); ++i) {
    const double m = L.row(i).maxCoeff();
    const double lse = m + std::log((L.row(i).array() - m).exp().sum());
    loss -= (targets.row(i).array() * (L.row(i).array() - lse)).sum();
  }
  Mat out(1, 1);
  out(0, 0) = loss;
  return t.push(std::move(out), {logits}, [logits, probs, targets](Tape& tp, int self) {
    const double g = tp.grad_ref(self)(0, 0);
    Mat& dL = tp.grad_ref(logits.id);
    for (Eigen::Index i = 0; i < probs->rows(); ++i) {
      const double mass = targets.row(i).sum();
      dL.row(i) += g * (mass * probs->row(i) - targets.row(i));
    }
  });
}

Var sum(Tape& t, Var x) {
  Mat out(1, 1);
  out(0, 0) = t.value(x).sum();
  return t.push(std::move(out), {x}, [x](Tape& tp, int self) {
    tp.grad_ref(x.id).array() += tp.grad_ref(self)(0, 0);
  });
}

}  // namespace tbps::ad
