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

#include "tbps/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

namespace tbps {

namespace fs = std::filesystem;

fs::path default_artifact_root() {
  if (const char* env = std::getenv("TBPS_ARTIFACTS"); env && *env) return env;
  return "artifacts";
}

nlohmann::json manifest_to_json(const ExperimentManifest& m) {
  nlohmann::json metrics = nlohmann::json::object();
  for (const MetricRow& r : m.metrics.rows()) metrics[r.metric + (r.k ? "@" + std::to_string(r.k) : "")] = r.value;
  return {{"config_hash", m.config_hash},
          {"corpus_seed", m.corpus_seed},
          {"config", m.config_text},
          {"artifacts", m.artifacts},
          {"wall_clock_s", m.wall_clock},
          {"metrics", metrics},
          {"mean_pseudo_corruption", m.mean_pseudo_corruption},
          {"complete", m.complete},
          {"failed_stage", m.failed_stage},
          {"error", m.error}};
}

ExperimentManifest manifest_from_json(const nlohmann::json& j) {
  ExperimentManifest m;
  m.config_hash = j.at("config_hash").get<std::string>();
  m.corpus_seed = j.at("corpus_seed").get<std::uint64_t>();
  m.config_text = j.at("config").get<std::string>();
  m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
  m.wall_clock = j.at("wall_clock_s").get<std::map<std::string, double>>();
  const auto& mt = j.at("metrics");
  m.metrics.r1 = mt.value("rank@1", 0.0);
  m.metrics.r5 = mt.value("rank@5", 0.0);
  m.metrics.r10 = mt.value("rank@10", 0.0);
  m.metrics.map = mt.value("mAP", 0.0);
  m.mean_pseudo_corruption = j.value("mean_pseudo_corruption", -1.0);
  m.complete = j.value("complete", false);
  m.failed_stage = j.value("failed_stage", "");
  m.error = j.value("error", "");
  return m;
}

namespace {

void write_json(const fs::path& path, const nlohmann::json& j) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw StageError("cannot write " + path.string());
    os << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw StageError("cannot read " + path.string());
  return nlohmann::json::parse(is);
}

void mark_done(const fs::path& dir) { std::ofstream(dir / "DONE") << "ok\n"; }
bool is_done(const fs::path& dir) { return fs::exists(dir / "DONE"); }

fs::path stage_dir(const RunOptions& opts, const PipelineConfig& config, Stage s) {
  return opts.root / stage_name(s) / stage_hash(config, s);
}

fs::path prepare(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

CaptionerParams fresh_captioner(const PipelineConfig& config) {
  return CaptionerParams(CaptionerConfig::for_corpus(config.corpus), derive_seed(config.seed, 0x6361706e6574ULL));
}

}  // namespace

CorpusSplit load_or_generate_corpus(const PipelineConfig& config, const RunOptions& opts) {
  const fs::path dir = stage_dir(opts, config, Stage::corpus);
  if (!opts.force && is_done(dir)) return read_corpus(dir);
  CorpusSplit split = generate_corpus(config.corpus, config.seed);
  prepare(dir);
  write_corpus(dir, split);
  std::ofstream(dir / "config.txt") << stage_text(config, Stage::corpus);
  mark_done(dir);
  return split;
}

CaptionerParams load_or_train_captioner(const PipelineConfig& config, const CorpusSplit& split,
                                        const RunOptions& opts) {
  const fs::path dir = stage_dir(opts, config, Stage::captioner);
  CaptionerParams params = fresh_captioner(config);
  if (!opts.force && is_done(dir)) {
    load_into(read_checkpoint(dir / "captioner.ckpt"), "captioner", params.store);
    return params;
  }
  require(!split.labeled.empty(), "captioner: no labeled pairs");
  if (config.caption_pretrain && config.caption_pretrain_epochs > 0) {
    PretrainOptions po;
    po.epochs = config.caption_pretrain_epochs;
    po.lr = config.caption.lr;
    po.batch_size = config.caption.batch_size;
    po.seed = config.seed;
    params = pretrain_generic(params, config.corpus, po);
  }
  FinetuneOptions fo = config.caption;
  fo.seed = derive_seed(config.seed, 0x66696e6574756e65ULL);
  FinetuneResult fr = finetune(params, split.labeled, fo);
  prepare(dir);
  write_checkpoint(dir / "captioner.ckpt", to_checkpoint("captioner", fr.params.store));
  {
    std::ofstream os(dir / "loss.csv");
    os.precision(10);
    os << "epoch,mean_token_loss\n";
    for (std::size_t e = 0; e < fr.epoch_token_loss.size(); ++e) os << e << ',' << fr.epoch_token_loss[e] << '\n';
  }
  std::ofstream(dir / "config.txt") << stage_text(config, Stage::captioner);
  mark_done(dir);
  return fr.params;
}

std::vector<ImageTextPair> load_or_generate_pseudo(const PipelineConfig& config, const CorpusSplit& split,
                                                   const RunOptions& opts) {
  const fs::path dir = stage_dir(opts, config, Stage::pseudo);
  if (!opts.force && is_done(dir)) return read_pseudo_set(dir / "pseudo.jsonl", split);
  const CaptionerParams captioner = load_or_train_captioner(config, split, opts);
  std::vector<ImageTextPair> pseudo = generate_pseudo_set(captioner, split, config.decoder,
                                                          derive_seed(config.seed, 0x67656e6572617465ULL),
                                                          config.texts_per_image, opts.exec);
  prepare(dir);
  write_pseudo_set(dir / "pseudo.jsonl", pseudo);
  std::ofstream(dir / "config.txt") << stage_text(config, Stage::pseudo);
  mark_done(dir);
  return pseudo;
}

ExperimentManifest run_pipeline(const PipelineConfig& config, const RunOptions& opts) {
  ExperimentManifest m;
  m.config_hash = stage_hash(config, Stage::retrieval);
  m.corpus_seed = config.seed;
  m.config_text = to_text(config);
  const fs::path run_dir = opts.root / "runs" / m.config_hash;
  const fs::path manifest_path = run_dir / "manifest.json";
  if (!opts.force && fs::exists(manifest_path)) {
    ExperimentManifest cached = manifest_from_json(read_json(manifest_path));
    if (cached.complete) {
      cached.reused = true;
      return cached;
    }
  }
  prepare(run_dir);
  std::ofstream(run_dir / "config.txt") << m.config_text;

  auto stage = [&](const std::string& name, auto&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      body();
    } catch (const std::exception& e) {
      m.failed_stage = name;
      m.error = e.what();
      write_json(manifest_path, manifest_to_json(m));
      throw StageError("stage '" + name + "' failed: " + e.what());
    }
    m.wall_clock[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(manifest_path, manifest_to_json(m));
    spdlog::info("[{}] {} done in {:.1f}s", m.config_hash, name, m.wall_clock[name]);
  };

  CorpusSplit split;
  stage("corpus", [&] {
    split = load_or_generate_corpus(config, opts);
    m.artifacts["corpus"] = stage_dir(opts, config, Stage::corpus).string();
  });

  std::vector<ImageTextPair> pseudo;
  const bool generate = config.use_pseudo && !split.unlabeled.empty();
  if (!generate) {
    const std::string why = config.use_pseudo ? "skipped: no unlabeled images" : "skipped: labeled-only run";
    m.artifacts["captioner"] = why;
    m.artifacts["pseudo"] = why;
  } else {
    stage("captioner", [&] {
      load_or_train_captioner(config, split, opts);
      m.artifacts["captioner"] = (stage_dir(opts, config, Stage::captioner) / "captioner.ckpt").string();
    });
    stage("pseudo", [&] {
      pseudo = load_or_generate_pseudo(config, split, opts);
      m.artifacts["pseudo"] = (stage_dir(opts, config, Stage::pseudo) / "pseudo.jsonl").string();
      double acc = 0.0;
      for (const ImageTextPair& p : pseudo) acc += p.caption.oracle_corruption_rate;
      m.mean_pseudo_corruption = pseudo.empty() ? 0.0 : acc / static_cast<double>(pseudo.size());
    });
  }

  const std::vector<PairedSample> samples = assemble_training_set(split.labeled, pseudo);
  const EncoderConfig enc = config.encoder_config();
  TrainConfig tc = config.train;
  tc.seed = config.seed;
  tc.exec = opts.exec;

  std::optional<CurriculumPlan> plan;
  if (config.schedule.scheduler == Scheduler::off) {
    m.artifacts["scores"] = "skipped: curriculum off";
  } else {
    stage("scores", [&] {
      const fs::path dir = stage_dir(opts, config, Stage::scores);
      std::vector<NoiseScore> scores;
      if (!opts.force && is_done(dir)) {
        scores = read_scores_csv(dir / "scores.csv");
      } else {
        scores = warmup_and_score(tc, enc, samples, split.vocab(), config.measurer);
        prepare(dir);
        write_scores_csv(dir / "scores.csv", scores);
        std::ofstream(dir / "config.txt") << stage_text(config, Stage::scores);
        mark_done(dir);
      }
      SchedulerParams sp = config.schedule;
      sp.epochs = tc.epochs;
      plan = build_plan(scores, sp);
      m.artifacts["scores"] = (dir / "scores.csv").string();
    });
  }

  std::optional<TrainResult> trained;
  stage("retrieval", [&] {
    tc.checkpoint_dir = run_dir / "checkpoints";
    ProbeSet probe{split.test_queries, split.test_gallery};
    trained = train(tc, enc, samples, plan ? &*plan : nullptr, opts.probe ? &probe : nullptr);
    write_history_csv(run_dir / "history.csv", trained->history);
    m.artifacts["retrieval"] = (tc.checkpoint_dir / "final.ckpt").string();
  });

  stage("eval", [&] {
    RankOptions ro;
    ro.itm_rerank_top_k = config.itm_rerank_top_k;
    ro.exec = opts.exec;
    m.metrics = evaluate(trained->params, split, ro);
    write_metrics_csv(run_dir / "metrics.csv", m.metrics);
    m.artifacts["metrics"] = (run_dir / "metrics.csv").string();
  });

  m.complete = true;
  write_json(manifest_path, manifest_to_json(m));
  spdlog::info("[{}] seed {} {}", m.config_hash, config.seed, format_report(m.metrics));
  return m;
}

// ---- ablation ladder --------------------------------------------------------

std::vector<Variant> ladder_variants(const PipelineConfig& base) {
  const Scheduler np = base.schedule.scheduler == Scheduler::off ? Scheduler::linear : base.schedule.scheduler;
  auto make = [&](bool pseudo, bool pmask, bool cmask, bool curriculum) {
    PipelineConfig c = base;
    c.use_pseudo = pseudo;
    c.train.mask.patch_v = c.train.mask.patch_t = pmask;
    c.train.mask.channel_v = c.train.mask.channel_t = cmask;
    c.schedule.scheduler = curriculum ? np : Scheduler::off;
    return c;
  };
  return {{"baseline", make(false, false, false, false)}, {"M1", make(true, false, false, false)},
          {"M2", make(true, true, false, false)},        {"M3", make(true, false, true, false)},
          {"M4", make(true, true, true, false)},         {"M5", make(true, false, false, true)},
          {"Ours", make(true, true, true, true)}};
}

const SummaryRow& MetricTable::row(const std::string& label) const {
  for (const SummaryRow& r : summary)
    if (r.label == label) return r;
  throw ContractError("MetricTable: no row '" + label + "'");
}

std::vector<SummaryRow> summarize_cells(const std::vector<Cell>& cells, const std::vector<std::string>& labels) {
  std::vector<SummaryRow> out;
  for (const std::string& label : labels) {
    std::vector<double> r1, map;
    for (const Cell& c : cells)
      if (c.variant == label && c.manifest) {
        r1.push_back(c.manifest->metrics.r1);
        map.push_back(c.manifest->metrics.map);
      }
    SummaryRow row;
    row.label = label;
    row.n = static_cast<int>(r1.size());
    auto mean_std = [](const std::vector<double>& x, double& mean, double& sd) {
      if (x.empty()) return;
      mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
      double ss = 0.0;
      for (double v : x) ss += (v - mean) * (v - mean);
      sd = x.size() > 1 ? std::sqrt(ss / static_cast<double>(x.size() - 1)) : 0.0;
    };
    mean_std(r1, row.mean_r1, row.std_r1);
    mean_std(map, row.mean_map, row.std_map);
    out.push_back(row);
  }
  return out;
}

namespace {

Cell run_cell(const std::string& label, PipelineConfig config, std::uint64_t seed, const RunOptions& opts) {
  config.seed = seed;
  Cell cell{label, seed, std::nullopt, ""};
  try {
    cell.manifest = run_pipeline(config, opts);
  } catch (const std::exception& e) {
    cell.error = e.what();
    spdlog::error("cell {} seed {} failed: {}", label, seed, e.what());
  }
  return cell;
}

}  // namespace

MetricTable run_ablation_ladder(const PipelineConfig& base, const std::vector<std::uint64_t>& seeds,
                                const RunOptions& opts) {
  if (seeds.size() < 3) throw ConfigError("run_ablation_ladder: need at least 3 seeds");
  MetricTable table;
  std::vector<std::string> labels;
  for (const Variant& v : ladder_variants(base)) {
    labels.push_back(v.name);
    for (std::uint64_t s : seeds) table.cells.push_back(run_cell(v.name, v.config, s, opts));
  }
  table.summary = summarize_cells(table.cells, labels);
  for (const SummaryRow& r : table.summary)
    if (r.n < static_cast<int>(seeds.size()))
      spdlog::warn("ladder row {} is missing {} of {} cells", r.label, seeds.size() - static_cast<std::size_t>(r.n),
                   seeds.size());
  return table;
}

// ---- sweeps -------------------------------------------------------------------

std::string to_string(SweepKind k) {
  switch (k) {
    case SweepKind::mask_ratio: return "mask_ratio";
    case SweepKind::labeled_ratio: return "labeled_ratio";
    case SweepKind::measurer: return "measurer";
    case SweepKind::scheduler: return "scheduler";
  }
  return "?";
}

SweepKind parse_sweep_kind(const std::string& s) {
  for (SweepKind k : {SweepKind::mask_ratio, SweepKind::labeled_ratio, SweepKind::measurer, SweepKind::scheduler})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown sweep kind '" + s + "'");
}

std::string sweep_key(SweepKind k) {
  switch (k) {
    case SweepKind::mask_ratio: return "mask.rho_v";
    case SweepKind::labeled_ratio: return "corpus.labeled_ratio";
    case SweepKind::measurer: return "curriculum.measurer";
    case SweepKind::scheduler: return "curriculum.scheduler";
  }
  return "";
}

std::vector<std::string> default_grid(SweepKind k) {
  switch (k) {
    case SweepKind::mask_ratio: return {"0", "0.1", "0.2", "0.4"};
    case SweepKind::labeled_ratio: return {"0.01", "0.05", "0.2", "0.5"};
    case SweepKind::measurer: return {"random", "sentence_length", "clipscore_analog", "blipscore_analog"};
    case SweepKind::scheduler: return {"baby_step", "root2", "linear"};
  }
  return {};
}

MetricTable run_sweep(SweepKind kind, const PipelineConfig& base, const std::vector<std::string>& grid,
                      const std::vector<std::uint64_t>& seeds, const RunOptions& opts, const fs::path& out_dir) {
  if (grid.empty()) throw ContractError("run_sweep: empty grid");
  if (seeds.empty()) throw ContractError("run_sweep: no seeds");
  const std::string key = sweep_key(kind);
  MetricTable table;
  for (const std::string& value : grid) {
    PipelineConfig c = base;
    try {
      set_config_value(c, key, value);
      c = parse_config(to_text(c));
    } catch (const ConfigError& e) {
      for (std::uint64_t s : seeds) table.cells.push_back({value, s, std::nullopt, e.what()});
      spdlog::error("sweep point {}={} rejected: {}", key, value, e.what());
      continue;
    }
    for (std::uint64_t s : seeds) table.cells.push_back(run_cell(value, c, s, opts));
  }
  table.summary = summarize_cells(table.cells, grid);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_summary_csv(out_dir / (to_string(kind) + ".csv"), table.summary);
    write_cells_csv(out_dir / (to_string(kind) + "_cells.csv"), table.cells);
    write_svg_plot(out_dir / (to_string(kind) + ".svg"), to_string(kind) + " sweep", key, table.summary);
  }
  return table;
}

// ---- tables and plots -----------------------------------------------------------

void write_summary_csv(const fs::path& path, const std::vector<SummaryRow>& rows) {
  std::ofstream os(path);
  if (!os) throw StageError("cannot write " + path.string());
  os.precision(17);
  os << "label,n,mean_r1,std_r1,mean_map,std_map\n";
  for (const SummaryRow& r : rows)
    os << r.label << ',' << r.n << ',' << r.mean_r1 << ',' << r.std_r1 << ',' << r.mean_map << ',' << r.std_map << '\n';
}

std::vector<SummaryRow> read_summary_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw StageError("cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  if (line.rfind("label,n,", 0) != 0) throw StageError(path.string() + " is not a summary table");
  std::vector<SummaryRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[6];
    for (std::string& x : f) std::getline(ss, x, ',');
    rows.push_back({f[0], std::stoi(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5])});
  }
  return rows;
}

void write_cells_csv(const fs::path& path, const std::vector<Cell>& cells) {
  std::ofstream os(path);
  if (!os) throw StageError("cannot write " + path.string());
  os.precision(17);
  os << "variant,seed,config_hash,r1,r5,r10,map,error\n";
  for (const Cell& c : cells) {
    os << c.variant << ',' << c.seed << ',';
    if (c.manifest)
      os << c.manifest->config_hash << ',' << c.manifest->metrics.r1 << ',' << c.manifest->metrics.r5 << ','
         << c.manifest->metrics.r10 << ',' << c.manifest->metrics.map << ",\n";
    else {
      std::string err = c.error;
      std::replace(err.begin(), err.end(), ',', ';');
      std::replace(err.begin(), err.end(), '\n', ' ');
      os << ",,,,," << err << '\n';
    }
  }
}

void write_svg_plot(const fs::path& path, const std::string& title, const std::string& x_label,
                    const std::vector<SummaryRow>& rows) {
  const double W = 640, H = 400, L = 70, R = 150, T = 40, B = 60;
  const double pw = W - L - R, ph = H - T - B;
  double ymax = 0.0;
  for (const SummaryRow& r : rows) ymax = std::max({ymax, 100.0 * r.mean_r1, 100.0 * r.mean_map});
  ymax = ymax > 0.0 ? std::ceil(ymax / 10.0) * 10.0 : 10.0;
  const std::size_t n = rows.size();
  auto px = [&](std::size_t i) { return L + (n > 1 ? pw * static_cast<double>(i) / static_cast<double>(n - 1) : pw / 2); };
  auto py = [&](double v) { return T + ph * (1.0 - 100.0 * v / ymax); };

  std::ofstream os(path);
  if (!os) throw StageError("cannot write " + path.string());
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n"
     << "<line x1=\"" << L << "\" y1=\"" << T + ph << "\" x2=\"" << L + pw << "\" y2=\"" << T + ph
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << T + ph << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 5; ++k) {
    const double v = ymax * k / 5.0;
    const double y = T + ph * (1.0 - k / 5.0);
    os << "<line x1=\"" << L - 4 << "\" y1=\"" << y << "\" x2=\"" << L + pw << "\" y2=\"" << y
       << "\" stroke=\"#ddd\"/>\n"
       << "<text x=\"" << L - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << v << "</text>\n";
  }
  for (std::size_t i = 0; i < n; ++i)
    os << "<text x=\"" << px(i) << "\" y=\"" << T + ph + 18 << "\" text-anchor=\"middle\">" << rows[i].label
       << "</text>\n";
  os << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">" << x_label << "</text>\n"
     << "<text x=\"18\" y=\"" << T + ph / 2 << "\" transform=\"rotate(-90 18 " << T + ph / 2
     << ")\" text-anchor=\"middle\">percent</text>\n";
  const struct {
    const char* name;
    const char* color;
    double SummaryRow::*field;
  } series[] = {{"R-1", "#1f77b4", &SummaryRow::mean_r1}, {"mAP", "#d62728", &SummaryRow::mean_map}};
  int slot = 0;
  for (const auto& s : series) {
    os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < n; ++i) os << px(i) << ',' << py(rows[i].*s.field) << ' ';
    os << "\"/>\n";
    for (std::size_t i = 0; i < n; ++i)
      os << "<circle cx=\"" << px(i) << "\" cy=\"" << py(rows[i].*s.field) << "\" r=\"3\" fill=\"" << s.color
         << "\"/>\n";
    const double ly = T + 10 + 20 * slot++;
    os << "<line x1=\"" << L + pw + 20 << "\" y1=\"" << ly << "\" x2=\"" << L + pw + 45 << "\" y2=\"" << ly
       << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n"
       << "<text x=\"" << L + pw + 52 << "\" y=\"" << ly + 4 << "\">" << s.name << "</text>\n";
  }
  os << "</svg>\n";
}

std::string format_table(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << "label               n     R-1 (mean +- std)      mAP (mean +- std)\n";
  for (const SummaryRow& r : rows) {
    std::string label = r.label;
    label.resize(std::max<std::size_t>(label.size(), 18), ' ');
    os << label << "  " << r.n << "   " << 100.0 * r.mean_r1 << " +- " << 100.0 * r.std_r1 << "        "
       << 100.0 * r.mean_map << " +- " << 100.0 * r.std_map << '\n';
  }
  return os.str();
}

std::string build_report(const fs::path& root) {
  std::ostringstream os;
  os << "artifact root: " << root.string() << "\n\n";
  std::vector<ExperimentManifest> runs;
  if (fs::exists(root / "runs"))
    for (const auto& entry : fs::directory_iterator(root / "runs"))
      if (fs::exists(entry.path() / "manifest.json"))
        runs.push_back(manifest_from_json(read_json(entry.path() / "manifest.json")));
  std::sort(runs.begin(), runs.end(), [](const ExperimentManifest& a, const ExperimentManifest& b) {
    return a.config_hash < b.config_hash;
  });
  os << "runs: " << runs.size() << '\n';
  for (const ExperimentManifest& m : runs) {
    double total = 0.0;
    for (const auto& [_, s] : m.wall_clock) total += s;
    os << "  " << m.config_hash << "  seed " << m.corpus_seed << "  ";
    if (m.complete)
      os << format_report(m.metrics);
    else
      os << "incomplete (failed stage: " << (m.failed_stage.empty() ? "?" : m.failed_stage) << ")";
    os << "  [" << static_cast<int>(std::round(total)) << "s]\n";
  }
  if (fs::exists(root / "tables")) {
    std::vector<fs::path> tables;
    for (const auto& entry : fs::directory_iterator(root / "tables"))
      if (entry.path().extension() == ".csv" && entry.path().stem().string().find("_cells") == std::string::npos)
        tables.push_back(entry.path());
    std::sort(tables.begin(), tables.end());
    for (const fs::path& p : tables) {
      os << '\n' << p.stem().string() << '\n';
      try {
        os << format_table(read_summary_csv(p));
      } catch (const StageError& e) {
        os << "  (unreadable: " << e.what() << ")\n";
      }
    }
  }
  return os.str();
}

}  // namespace tbps
