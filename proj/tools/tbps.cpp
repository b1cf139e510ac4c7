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

// Command-line front end for the generation-then-retrieval pipeline.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "tbps/harness.hpp"

namespace fs = std::filesystem;
using namespace tbps;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string root;
  bool force = false;
  bool serial = false;
  bool verbose = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "Config file (dotted key = value)");
  cmd->add_option("-s,--set", c.overrides, "Override one key, e.g. --set train.epochs=10");
  cmd->add_option("--root", c.root, "Artifact root (default: $TBPS_ARTIFACTS or ./artifacts)");
  cmd->add_flag("--force", c.force, "Recompute cached stages");
  cmd->add_flag("--serial", c.serial, "Use the serial reference kernels");
  cmd->add_flag("-v,--verbose", c.verbose, "Per-epoch logging");
}

PipelineConfig build_config(const Common& c) {
  PipelineConfig config = c.config_path.empty() ? PipelineConfig{} : load_config(c.config_path);
  for (const std::string& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
    set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  // Re-parse the canonical text so cross-key validation runs on the result.
  return parse_config(to_text(config));
}

RunOptions run_options(const Common& c) {
  RunOptions o;
  if (!c.root.empty()) o.root = c.root;
  o.force = c.force;
  o.exec = c.serial ? Exec::serial : Exec::parallel;
  o.probe = c.verbose;
  if (c.verbose) spdlog::set_level(spdlog::level::debug);
  return o;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("no seeds given");
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void print_manifest(const ExperimentManifest& m) {
  std::cout << "config hash  " << m.config_hash << (m.reused ? "  (reused)" : "") << '\n';
  for (const auto& [stage, path] : m.artifacts) std::cout << "  " << stage << ": " << path << '\n';
  if (m.mean_pseudo_corruption >= 0.0) std::cout << "mean pseudo corruption  " << m.mean_pseudo_corruption << '\n';
  std::cout << format_report(m.metrics) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised text-based person search on a synthetic attribute corpus"};
  app.require_subcommand(1);
  Common common;

  // corpus generate
  auto* corpus = app.add_subcommand("corpus", "Synthetic corpus");
  corpus->require_subcommand(1);
  auto* corpus_gen = corpus->add_subcommand("generate", "Generate a corpus split");
  std::string spec_path, corpus_out;
  std::uint64_t corpus_seed = 0;
  corpus_gen->add_option("--spec", spec_path, "Config file with corpus.* keys")->required();
  corpus_gen->add_option("--seed", corpus_seed, "Corpus seed")->required();
  corpus_gen->add_option("--out", corpus_out, "Output directory")->required();

  // caption train / generate
  auto* caption = app.add_subcommand("caption", "Image captioner");
  caption->require_subcommand(1);
  auto* cap_train = caption->add_subcommand("train", "Finetune the captioner on the labeled pairs");
  add_common(cap_train, common);
  auto* cap_gen = caption->add_subcommand("generate", "Generate pseudo-texts for the unlabeled images");
  add_common(cap_gen, common);
  std::string decoder = "greedy";
  double top_p = 0.9;
  cap_gen->add_option("--decoder", decoder, "greedy or sample")->check(CLI::IsMember({"greedy", "sample"}));
  cap_gen->add_option("--top-p", top_p, "Nucleus mass for --decoder sample")->check(CLI::Range(0.0, 1.0));

  // retrieval train / eval
  auto* retrieval = app.add_subcommand("retrieval", "Retrieval model");
  retrieval->require_subcommand(1);
  auto* ret_train = retrieval->add_subcommand("train", "Run the full pipeline up to a trained retrieval model");
  add_common(ret_train, common);

  auto* eval = app.add_subcommand("eval", "Evaluate a retrieval model on the test split");
  add_common(eval, common);
  std::string ckpt_path;
  int rerank = -1;
  eval->add_option("--checkpoint", ckpt_path, "Encoder checkpoint (default: the pipeline's final model)");
  eval->add_option("--rerank", rerank, "Re-rank the top k by match probability");

  // ablate / sweep / report
  auto* ablate = app.add_subcommand("ablate", "Component ablation ladder");
  add_common(ablate, common);
  std::string seeds_text = "0,1,2,3,4", out_dir;
  ablate->add_option("--seeds", seeds_text, "Comma-separated seeds (at least 3)");
  ablate->add_option("--out", out_dir, "Table directory (default: <root>/tables)");

  auto* sweep = app.add_subcommand("sweep", "One-parameter sweep");
  add_common(sweep, common);
  std::string sweep_kind, grid_text;
  sweep->add_option("kind", sweep_kind, "mask_ratio, labeled_ratio, measurer or scheduler")->required();
  sweep->add_option("--grid", grid_text, "Comma-separated grid values");
  sweep->add_option("--seeds", seeds_text, "Comma-separated seeds");
  sweep->add_option("--out", out_dir, "Table directory (default: <root>/tables)");

  auto* report = app.add_subcommand("report", "Summarize every run and table under the artifact root");
  std::string report_root, report_out;
  report->add_option("--root", report_root, "Artifact root");
  report->add_option("--out", report_out, "Also write the report to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (corpus_gen->parsed()) {
      const PipelineConfig config = load_config(spec_path);
      const CorpusSplit split = generate_corpus(config.corpus, corpus_seed);
      write_corpus(corpus_out, split);
      std::cout << "wrote " << split.labeled.size() << " labeled pairs, " << split.unlabeled.size()
                << " unlabeled images, " << split.test_gallery.size() << " gallery images, "
                << split.test_queries.size() << " queries to " << corpus_out << '\n';
    } else if (cap_train->parsed()) {
      const PipelineConfig config = build_config(common);
      const RunOptions opts = run_options(common);
      const CorpusSplit split = load_or_generate_corpus(config, opts);
      const CaptionerParams p = load_or_train_captioner(config, split, opts);
      std::cout << "captioner " << (opts.root / "captioner" / stage_hash(config, Stage::captioner)).string() << '\n'
                << "mean token loss on labeled pairs  " << mean_token_loss(p, split.labeled) << '\n';
    } else if (cap_gen->parsed()) {
      PipelineConfig config = build_config(common);
      if (cap_gen->count("--decoder")) set_config_value(config, "generate.decoder", decoder);
      if (cap_gen->count("--top-p")) config.decoder.top_p = top_p;
      const RunOptions opts = run_options(common);
      const CorpusSplit split = load_or_generate_corpus(config, opts);
      if (split.unlabeled.empty()) {
        std::cout << "no unlabeled images; nothing to generate\n";
        return kExitOk;
      }
      const std::vector<ImageTextPair> pseudo = load_or_generate_pseudo(config, split, opts);
      double corruption = 0.0;
      int truncated = 0;
      for (const ImageTextPair& p : pseudo) {
        corruption += p.caption.oracle_corruption_rate;
        truncated += p.caption.truncated ? 1 : 0;
      }
      std::cout << "pseudo set " << (opts.root / "pseudo" / stage_hash(config, Stage::pseudo) / "pseudo.jsonl").string()
                << '\n'
                << pseudo.size() << " texts, mean oracle corruption "
                << corruption / static_cast<double>(std::max<std::size_t>(1, pseudo.size())) << ", " << truncated
                << " truncated\n";
    } else if (ret_train->parsed()) {
      print_manifest(run_pipeline(build_config(common), run_options(common)));
    } else if (eval->parsed()) {
      PipelineConfig config = build_config(common);
      if (rerank >= 0) config.itm_rerank_top_k = rerank;
      const RunOptions opts = run_options(common);
      if (ckpt_path.empty()) {
        print_manifest(run_pipeline(config, opts));
      } else {
        const CorpusSplit split = load_or_generate_corpus(config, opts);
        EncoderParams model(config.encoder_config(), 0);
        load_into(read_checkpoint(ckpt_path), "encoder", model.store);
        RankOptions ro;
        ro.itm_rerank_top_k = config.itm_rerank_top_k;
        ro.exec = opts.exec;
        std::cout << format_report(evaluate(model, split, ro)) << '\n';
      }
    } else if (ablate->parsed()) {
      const PipelineConfig config = build_config(common);
      const RunOptions opts = run_options(common);
      const MetricTable table = run_ablation_ladder(config, parse_seeds(seeds_text), opts);
      const fs::path dir = out_dir.empty() ? opts.root / "tables" : fs::path(out_dir);
      fs::create_directories(dir);
      write_summary_csv(dir / "ladder.csv", table.summary);
      write_cells_csv(dir / "ladder_cells.csv", table.cells);
      write_svg_plot(dir / "ladder.svg", "component ablation", "variant", table.summary);
      std::cout << format_table(table.summary);
      for (const Cell& c : table.cells)
        if (!c.manifest) {
          std::cerr << "missing cell " << c.variant << " seed " << c.seed << ": " << c.error << '\n';
          return kExitStage;
        }
    } else if (sweep->parsed()) {
      const SweepKind kind = parse_sweep_kind(sweep_kind);
      const PipelineConfig config = build_config(common);
      const RunOptions opts = run_options(common);
      const std::vector<std::string> grid = grid_text.empty() ? default_grid(kind) : split_list(grid_text);
      const fs::path dir = out_dir.empty() ? opts.root / "tables" : fs::path(out_dir);
      const MetricTable table = run_sweep(kind, config, grid, parse_seeds(seeds_text), opts, dir);
      std::cout << format_table(table.summary);
      for (const Cell& c : table.cells)
        if (!c.manifest) std::cerr << "failed point " << c.variant << " seed " << c.seed << ": " << c.error << '\n';
    } else if (report->parsed()) {
      const std::string text = build_report(report_root.empty() ? default_artifact_root() : fs::path(report_root));
      std::cout << text;
      if (!report_out.empty()) {
        std::ofstream os(report_out);
        if (!os) throw StageError("cannot write " + report_out);
        os << text;
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitStage;
  }
  return kExitOk;
}
