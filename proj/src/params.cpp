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

#include "tbps/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace tbps {

ad::ParamId ParamStore::add(std::string name, Mat value) {
  require(find(name) < 0, "ParamStore::add: duplicate parameter " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return static_cast<ad::ParamId>(values_.size()) - 1;
}

ad::ParamId ParamStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return static_cast<ad::ParamId>(i);
  return -1;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const Mat& m : values_) n += static_cast<std::size_t>(m.size());
  return n;
}

bool ParamStore::all_finite() const {
  for (const Mat& m : values_)
    if (!m.allFinite()) return false;
  return true;
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (names_ != other.names_) return false;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const Mat& a = values_[i];
    const Mat& b = other.values_[i];
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    if (a.size() && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) != 0) return false;
  }
  return true;
}

// ---- Adam ------------------------------------------------------------------

Adam::Adam(const ParamStore& params, Options opts) : opts_(opts) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Mat& p = params.value(static_cast<ad::ParamId>(i));
    m_.push_back(Mat::Zero(p.rows(), p.cols()));
    v_.push_back(Mat::Zero(p.rows(), p.cols()));
  }
}

void Adam::step(ParamStore& params, const ad::GradStore& grads) {
  require(m_.size() == params.size(), "Adam::step: optimizer/parameter mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto id = static_cast<ad::ParamId>(i);
    if (!grads.has(id)) continue;
    const Mat& g = grads.get(id);
    m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * g;
    v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * g.cwiseAbs2();
    params.value(id).array() -=
        opts_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + opts_.eps);
  }
}

double clip_grad_norm(ad::GradStore& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (max_norm > 0.0 && norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

// ---- checkpoint ------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

constexpr char kMagic[8] = {'T', 'B', 'P', 'S', 'C', 'K', 'P', 'T'};

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) throw StageError("checkpoint: truncated file");
  return v;
}

void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw StageError("checkpoint: truncated file");
  return s;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw StageError("checkpoint: cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put_u32(os, kCheckpointSchemaVersion);
  put_str(os, ckpt.kind);
  put_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, m] : ckpt.tensors) {
    put_str(os, name);
    put_u32(os, static_cast<std::uint32_t>(m.rows()));
    put_u32(os, static_cast<std::uint32_t>(m.cols()));
    os.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(sizeof(double) * m.size()));
  }
  if (!os) throw StageError("checkpoint: write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw StageError("checkpoint: cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw StageError("checkpoint: bad magic in " + path.string());
  const std::uint32_t version = get_u32(is);
  if (version != kCheckpointSchemaVersion)
    throw StageError("checkpoint: unsupported schema version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.kind = get_str(is);
  const std::uint32_t count = get_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_str(is);
    const std::uint32_t rows = get_u32(is);
    const std::uint32_t cols = get_u32(is);
    Mat m(rows, cols);
    is.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!is) throw StageError("checkpoint: truncated tensor " + name);
    ckpt.tensors.emplace_back(std::move(name), std::move(m));
  }
  return ckpt;
}

Checkpoint to_checkpoint(std::string kind, const ParamStore& params) {
  Checkpoint ckpt;
  ckpt.kind = std::move(kind);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto id = static_cast<ad::ParamId>(i);
    ckpt.tensors.emplace_back(params.name(id), params.value(id));
  }
  return ckpt;
}

void load_into(const Checkpoint& ckpt, std::string_view kind, ParamStore& params) {
  if (ckpt.kind != kind)
    throw StageError("checkpoint: expected kind '" + std::string(kind) + "', found '" +
                     ckpt.kind + "'");
  if (ckpt.tensors.size() != params.size())
    throw StageError("checkpoint: tensor count mismatch");
  for (const auto& [name, m] : ckpt.tensors) {
    const ad::ParamId id = params.find(name);
    if (id < 0) throw StageError("checkpoint: unknown tensor " + name);
    Mat& dst = params.value(id);
    if (dst.rows() != m.rows() || dst.cols() != m.cols())
      throw StageError("checkpoint: shape mismatch for " + name);
    dst = m;
  }
}

}  // namespace tbps
