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

// Serial reference vs OpenMP kernels on a default-scale retrieval batch.

#include <benchmark/benchmark.h>

#include <omp.h>

#include "tbps/evalkit.hpp"
#include "tbps/kernels.hpp"

using namespace tbps;

namespace {

struct Data {
  CorpusSpec spec;
  CorpusSplit split;
  EncoderParams params;
  std::vector<PairedSample> samples;
  Batch batch;

  Data() : spec(), split(generate_corpus(spec, 0)), params(EncoderConfig::for_corpus(spec, 32), 1) {
    for (int i = 0; i < 64; ++i) {
      const ImageTextPair& p = split.labeled[static_cast<std::size_t>(i) % split.labeled.size()];
      samples.push_back({i, split.unlabeled[static_cast<std::size_t>(i)], p.caption});
    }
    for (const PairedSample& s : samples) batch.items.push_back(&s);
  }
};

const Data& data() {
  static const Data d;
  return d;
}

void BM_BatchGradient(benchmark::State& state) {
  const Data& d = data();
  const Exec exec = state.range(0) ? Exec::parallel : Exec::serial;
  for (auto _ : state) {
    BatchGradient g = batch_gradient(d.params, d.batch, {}, ObjectiveOptions{}, 7, exec);
    benchmark::DoNotOptimize(g.loss.itc);
  }
  state.counters["threads"] = exec == Exec::parallel ? omp_get_max_threads() : 1;
}

void BM_BatchGradientReference(benchmark::State& state) {
  const Data& d = data();
  for (auto _ : state) {
    BatchGradient g = batch_gradient_reference(d.params, d.batch, {}, ObjectiveOptions{}, 7);
    benchmark::DoNotOptimize(g.loss.itc);
  }
}

void BM_RankAll(benchmark::State& state) {
  const Data& d = data();
  RankOptions ro;
  ro.exec = state.range(0) ? Exec::parallel : Exec::serial;
  for (auto _ : state) {
    auto r = rank_all(d.params, d.split.test_queries, d.split.test_gallery, ro);
    benchmark::DoNotOptimize(r.data());
  }
}

}  // namespace

BENCHMARK(BM_BatchGradient)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchGradientReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RankAll)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
