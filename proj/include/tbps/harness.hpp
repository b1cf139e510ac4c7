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

// Experiment orchestration: the end-to-end generation-then-retrieval
// pipeline with cached stage artifacts, the component ablation ladder, and
// one-parameter sweeps with plots.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tbps/config.hpp"
#include "tbps/evalkit.hpp"

namespace tbps {

// Artifact root: $TBPS_ARTIFACTS, else ./artifacts.
std::filesystem::path default_artifact_root();

struct RunOptions {
  std::filesystem::path root = default_artifact_root();
  bool force = false;     // recompute every stage even when cached
  bool probe = false;     // log per-epoch R-1 on the test split
  Exec exec = Exec::parallel;
};

struct ExperimentManifest {
  std::string config_hash;
  std::uint64_t corpus_seed = 0;
  std::string config_text;
  std::map<std::string, std::string> artifacts;  // stage -> path ("skipped: ..." when not run)
  std::map<std::string, double> wall_clock;      // stage -> seconds
  RetrievalMetrics metrics;
  double mean_pseudo_corruption = -1.0;  // -1 when no pseudo set was used
  bool complete = false;
  bool reused = false;  // loaded from a previous identical run
  std::string failed_stage;
  std::string error;
};

nlohmann::json manifest_to_json(const ExperimentManifest& m);
ExperimentManifest manifest_from_json(const nlohmann::json& j);

// corpus -> captioner -> pseudo set -> noise scores -> retrieval -> eval.
// Throws StageError after writing a partial manifest when a stage fails.
ExperimentManifest run_pipeline(const PipelineConfig& config, const RunOptions& opts = {});

// Inspection helpers shared with the CLI; each reuses the cached artifact.
CorpusSplit load_or_generate_corpus(const PipelineConfig& config, const RunOptions& opts);
CaptionerParams load_or_train_captioner(const PipelineConfig& config, const CorpusSplit& split, const RunOptions& opts);
std::vector<ImageTextPair> load_or_generate_pseudo(const PipelineConfig& config, const CorpusSplit& split,
                                                   const RunOptions& opts);

// ---- ablation ladder --------------------------------------------------------

struct Variant {
  std::string name;
  PipelineConfig config;
};

// baseline, M1 (pseudo pairs), M2 (+patch masks), M3 (+channel masks),
// M4 (+both), M5 (M1 + noise-guided curriculum), Ours (M4 + curriculum).
std::vector<Variant> ladder_variants(const PipelineConfig& base);

struct Cell {
  std::string variant;
  std::uint64_t seed = 0;
  std::optional<ExperimentManifest> manifest;  // empty when the cell failed
  std::string error;
};

struct SummaryRow {
  std::string label;
  int n = 0;
  double mean_r1 = 0.0, std_r1 = 0.0, mean_map = 0.0, std_map = 0.0;
};

struct MetricTable {
  std::vector<Cell> cells;
  std::vector<SummaryRow> summary;  // one row per variant / grid point, in order
  const SummaryRow& row(const std::string& label) const;
};

MetricTable run_ablation_ladder(const PipelineConfig& base, const std::vector<std::uint64_t>& seeds,
                                const RunOptions& opts = {});

// ---- sweeps -------------------------------------------------------------------

enum class SweepKind { mask_ratio, labeled_ratio, measurer, scheduler };
SweepKind parse_sweep_kind(const std::string& s);
std::string to_string(SweepKind k);
std::string sweep_key(SweepKind k);
std::vector<std::string> default_grid(SweepKind k);

// One grid point per summary row (label = grid value). When out_dir is set,
// writes <kind>.csv and <kind>.svg there.
MetricTable run_sweep(SweepKind kind, const PipelineConfig& base, const std::vector<std::string>& grid,
                      const std::vector<std::uint64_t>& seeds, const RunOptions& opts = {},
                      const std::filesystem::path& out_dir = {});

std::vector<SummaryRow> summarize_cells(const std::vector<Cell>& cells, const std::vector<std::string>& labels);

// label,n,mean_r1,std_r1,mean_map,std_map
void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows);
std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path);
// variant,seed,config_hash,r1,r5,r10,map,error
void write_cells_csv(const std::filesystem::path& path, const std::vector<Cell>& cells);

// Line plot of mean R-1 and mAP (in percent) against the grid labels.
void write_svg_plot(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                    const std::vector<SummaryRow>& rows);

std::string format_table(const std::vector<SummaryRow>& rows);

// Human-readable report over every manifest and summary CSV under root.
std::string build_report(const std::filesystem::path& root);

}  // namespace tbps
