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

#include "tbps/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

namespace tbps {

std::string to_string(Measurer m) {
  switch (m) {
    case Measurer::blipscore_analog: return "blipscore_analog";
    case Measurer::clipscore_analog: return "clipscore_analog";
    case Measurer::sentence_length: return "sentence_length";
    case Measurer::random: return "random";
  }
  return "?";
}

std::string to_string(Scheduler s) {
  switch (s) {
    case Scheduler::linear: return "linear";
    case Scheduler::baby_step: return "baby_step";
    case Scheduler::root2: return "root2";
    case Scheduler::off: return "off";
  }
  return "?";
}

Measurer parse_measurer(const std::string& s) {
  for (Measurer m : {Measurer::blipscore_analog, Measurer::clipscore_analog, Measurer::sentence_length, Measurer::random})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown measurer '" + s + "'");
}

Scheduler parse_scheduler(const std::string& s) {
  for (Scheduler x : {Scheduler::linear, Scheduler::baby_step, Scheduler::root2, Scheduler::off})
    if (to_string(x) == s) return x;
  throw ConfigError("unknown scheduler '" + s + "'");
}

double noise_from_match(double psi) {
  if (!(psi >= 0.0 && psi <= 1.0)) {
    spdlog::warn("noise measurer: match score {} outside [0, 1]; clamping", psi);
    psi = std::isnan(psi) ? 0.0 : std::clamp(psi, 0.0, 1.0);
  }
  return 1.0 - psi;
}

namespace {

double generic_similarity(const EncoderParams& p, const PairedSample& pair) {
  const Mat fv = encode_image(p, embed_image(p, pair.image)).vectors;
  const Mat ft = encode_text(p, embed_text(p, pair.caption)).vectors;
  const RowVec a = fv.bottomRows(fv.rows() - 1).colwise().mean();
  const RowVec b = ft.bottomRows(ft.rows() - 1).colwise().mean();
  const double denom = a.norm() * b.norm();
  const double cos = denom > 0.0 ? a.dot(b) / denom : 0.0;
  return 0.5 * (1.0 + cos);
}

}  // namespace

NoiseScore measure_noise(const PairedSample& pair, const MeasureContext& ctx, Measurer measurer,
                         const Vocabulary& vocab) {
  NoiseScore s{pair.sample_id, 0.0, measurer};
  if (!pair.is_pseudo()) return s;  // human annotations carry zero noise
  switch (measurer) {
    case Measurer::blipscore_analog:
      require(ctx.scorer != nullptr, "measure_noise: blipscore_analog needs a scorer model");
      s.score = noise_from_match(match_probability(*ctx.scorer, pair.image, pair.caption));
      break;
    case Measurer::clipscore_analog:
      require(ctx.scorer != nullptr, "measure_noise: clipscore_analog needs a scorer model");
      s.score = noise_from_match(generic_similarity(*ctx.scorer, pair));
      break;
    case Measurer::sentence_length:
      require(ctx.max_content_tokens >= 1, "measure_noise: max_content_tokens must be positive");
      s.score = std::clamp(static_cast<double>(content_token_count(pair.caption, vocab)) / ctx.max_content_tokens,
                           0.0, 1.0);
      break;
    case Measurer::random: {
      Rng rng(derive_seed(ctx.seed, 0x726e64ULL, pair.sample_id));
      s.score = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      break;
    }
  }
  return s;
}

std::vector<NoiseScore> measure_all(std::span<const PairedSample> pairs, const MeasureContext& ctx,
                                    Measurer measurer, const Vocabulary& vocab) {
  std::vector<NoiseScore> out(pairs.size());
  const int n = static_cast<int>(pairs.size());
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i)
    out[static_cast<std::size_t>(i)] = measure_noise(pairs[static_cast<std::size_t>(i)], ctx, measurer, vocab);
  return out;
}

namespace {

void check_schedule_args(double lambda0, int t_grow, int t) {
  require(lambda0 > 0.0 && lambda0 <= 1.0, "scheduler: lambda0 must lie in (0, 1]");
  require(t_grow >= 1, "scheduler: t_grow must be at least 1");
  require(t >= 0, "scheduler: epoch must be non-negative");
}

}  // namespace

double lambda_linear(int t, double lambda0, int t_grow) {
  check_schedule_args(lambda0, t_grow, t);
  return std::min(1.0, lambda0 + (1.0 - lambda0) / t_grow * t);
}

double lambda_root2(int t, double lambda0, int t_grow) {
  check_schedule_args(lambda0, t_grow, t);
  return std::min(1.0, std::sqrt(lambda0 * lambda0 + (1.0 - lambda0 * lambda0) * t / t_grow));
}

std::vector<int> baby_step_counts(int total, int buckets, int epochs_per_bucket, int epochs) {
  require(buckets >= 1, "baby_step_counts: need at least one bucket");
  require(buckets <= total, "baby_step_counts: more buckets than samples");
  require(epochs_per_bucket >= 1, "baby_step_counts: epochs_per_bucket must be positive");
  const int base = total / buckets;
  std::vector<int> counts;
  for (int t = 0; t < epochs; ++t) {
    const int admitted_buckets = std::min(buckets, 1 + t / epochs_per_bucket);
    counts.push_back(admitted_buckets == buckets ? total : admitted_buckets * base);
  }
  return counts;
}

int CurriculumPlan::admitted_count(int epoch) const {
  require(epoch >= 0, "CurriculumPlan: negative epoch");
  if (epoch_counts.empty()) return static_cast<int>(sorted_ids.size());
  return epoch < static_cast<int>(epoch_counts.size()) ? epoch_counts[static_cast<std::size_t>(epoch)]
                                                       : static_cast<int>(sorted_ids.size());
}

std::span<const int> CurriculumPlan::admitted(int epoch) const {
  return std::span<const int>(sorted_ids).first(static_cast<std::size_t>(admitted_count(epoch)));
}

CurriculumPlan build_plan(std::span<const NoiseScore> scores, const SchedulerParams& params) {
  require(!scores.empty(), "build_plan: no scores");
  require(params.epochs >= 1, "build_plan: epochs must be positive");
  std::set<int> seen;
  for (const NoiseScore& s : scores)
    if (!seen.insert(s.sample_id).second)
      throw ContractError("build_plan: duplicate sample id " + std::to_string(s.sample_id));
  if (*seen.begin() != 0 || *seen.rbegin() != static_cast<int>(scores.size()) - 1)
    throw ContractError("build_plan: sample ids must cover 0..N-1 exactly once");

  std::vector<NoiseScore> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(), [](const NoiseScore& a, const NoiseScore& b) {
    return a.score != b.score ? a.score < b.score : a.sample_id < b.sample_id;
  });
  CurriculumPlan plan;
  plan.params = params;
  for (const NoiseScore& s : sorted) plan.sorted_ids.push_back(s.sample_id);

  const int total = static_cast<int>(sorted.size());
  switch (params.scheduler) {
    case Scheduler::off:
      plan.epoch_counts.assign(static_cast<std::size_t>(params.epochs), total);
      break;
    case Scheduler::baby_step:
      plan.epoch_counts = baby_step_counts(total, params.buckets, params.epochs_per_bucket, params.epochs);
      break;
    case Scheduler::linear:
    case Scheduler::root2: {
      int prev = 0;
      for (int t = 0; t < params.epochs; ++t) {
        const double lam = params.scheduler == Scheduler::linear ? lambda_linear(t, params.lambda0, params.t_grow)
                                                                 : lambda_root2(t, params.lambda0, params.t_grow);
        const int count = std::clamp(static_cast<int>(std::ceil(lam * total - 1e-9)), 1, total);
        prev = std::max(prev, count);
        plan.epoch_counts.push_back(prev);
      }
      break;
    }
  }
  return plan;
}

void write_scores_csv(const std::filesystem::path& path, std::span<const NoiseScore> scores) {
  std::ofstream os(path);
  if (!os) throw StageError("cannot write score table " + path.string());
  os << "sample_id,measurer,score\n";
  os.precision(17);
  for (const NoiseScore& s : scores) os << s.sample_id << ',' << to_string(s.measurer) << ',' << s.score << '\n';
}

std::vector<NoiseScore> read_scores_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw StageError("cannot read score table " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<NoiseScore> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, m, v;
    std::getline(ss, id, ',');
    std::getline(ss, m, ',');
    std::getline(ss, v, ',');
    out.push_back({std::stoi(id), std::stod(v), parse_measurer(m)});
  }
  return out;
}

namespace {

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && a.size() >= 2, "spearman: need two equal-length samples");
  const std::vector<double> ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return (va > 0.0 && vb > 0.0) ? cov / std::sqrt(va * vb) : 0.0;
}

}  // namespace tbps
