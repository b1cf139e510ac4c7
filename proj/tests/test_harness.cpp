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

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "tbps/harness.hpp"

using namespace tbps;
namespace fs = std::filesystem;

namespace {

PipelineConfig fast_config() {
  return parse_config(
      "corpus.num_train_identities = 24\n"
      "corpus.images_per_identity = 2\n"
      "corpus.captions_per_image = 1\n"
      "corpus.num_test_identities = 8\n"
      "corpus.labeled_ratio = 0.25\n"
      "corpus.num_attributes = 3\n"
      "corpus.values_per_attribute = 4\n"
      "corpus.num_patches = 4\n"
      "corpus.patch_dim = 4\n"
      "caption.pretrain_epochs = 1\n"
      "caption.epochs = 2\n"
      "encoder.width = 8\n"
      "encoder.layers = 1\n"
      "train.epochs = 2\n"
      "train.batch_size = 8\n"
      "train.warmup_epochs = 1\n"
      "curriculum.t_grow = 1\n");
}

struct TempRoot {
  fs::path path;
  explicit TempRoot(const std::string& name) : path(fs::temp_directory_path() / name) { fs::remove_all(path); }
  ~TempRoot() { fs::remove_all(path); }
};

RunOptions opts_for(const TempRoot& r) {
  RunOptions o;
  o.root = r.path;
  return o;
}

}  // namespace

TEST_CASE("pipeline writes every artifact and a complete manifest") {
  TempRoot root("tbps_harness_full");
  PipelineConfig c = fast_config();
  c.schedule.scheduler = Scheduler::linear;
  const ExperimentManifest m = run_pipeline(c, opts_for(root));
  CHECK(m.complete);
  CHECK_FALSE(m.reused);
  CHECK(m.artifacts.size() == 6);
  for (const auto& [stage, path] : m.artifacts) {
    INFO(stage);
    CHECK(fs::exists(path));
  }
  CHECK(m.mean_pseudo_corruption >= 0.0);
  CHECK(m.metrics.r1 <= m.metrics.r5);
  CHECK(m.config_text == to_text(c));

  const fs::path manifest = root.path / "runs" / m.config_hash / "manifest.json";
  REQUIRE(fs::exists(manifest));
  std::ifstream is(manifest);
  const ExperimentManifest back = manifest_from_json(nlohmann::json::parse(is));
  CHECK(back.metrics.map == m.metrics.map);
  CHECK(back.artifacts == m.artifacts);

  // Auditing: the stored config text alone regenerates the same cell.
  TempRoot audit("tbps_harness_audit");
  const ExperimentManifest again = run_pipeline(parse_config(back.config_text), opts_for(audit));
  CHECK(again.metrics.r1 == m.metrics.r1);
  CHECK(again.metrics.map == m.metrics.map);

  const ExperimentManifest reused = run_pipeline(c, opts_for(root));
  CHECK(reused.reused);
  CHECK(reused.metrics.map == m.metrics.map);
  RunOptions forced = opts_for(root);
  forced.force = true;
  const ExperimentManifest rerun = run_pipeline(c, forced);
  CHECK_FALSE(rerun.reused);
  CHECK(rerun.metrics.map == m.metrics.map);
  forced.exec = Exec::serial;
  CHECK(run_pipeline(c, forced).metrics.map == m.metrics.map);

  const std::string report = build_report(root.path);
  CHECK(report.find(m.config_hash) != std::string::npos);
}

TEST_CASE("fully labeled corpus skips generation") {
  TempRoot root("tbps_harness_labeled");
  PipelineConfig c = fast_config();
  c.corpus.labeled_ratio = 1.0;
  const ExperimentManifest m = run_pipeline(c, opts_for(root));
  CHECK(m.complete);
  CHECK(m.artifacts.at("captioner").rfind("skipped", 0) == 0);
  CHECK(m.artifacts.at("pseudo").rfind("skipped", 0) == 0);
  CHECK(m.mean_pseudo_corruption == -1.0);
}

TEST_CASE("a diverging stage leaves a partial manifest") {
  TempRoot root("tbps_harness_fail");
  PipelineConfig c = fast_config();
  c.train.learning_rate = 1e300;
  CHECK_THROWS_AS(run_pipeline(c, opts_for(root)), StageError);
  bool found = false;
  for (const auto& entry : fs::directory_iterator(root.path / "runs")) {
    std::ifstream is(entry.path() / "manifest.json");
    const ExperimentManifest m = manifest_from_json(nlohmann::json::parse(is));
    CHECK_FALSE(m.complete);
    CHECK(m.failed_stage == "retrieval");
    CHECK_FALSE(m.error.empty());
    CHECK(m.artifacts.count("corpus") == 1);
    found = true;
  }
  CHECK(found);
}

TEST_CASE("ladder variants toggle one component at a time") {
  const std::vector<Variant> v = ladder_variants(fast_config());
  REQUIRE(v.size() == 7);
  auto find = [&](const std::string& name) -> const PipelineConfig& {
    for (const Variant& x : v)
      if (x.name == name) return x.config;
    FAIL("missing variant " << name);
    return v[0].config;
  };
  const PipelineConfig& base = find("baseline");
  CHECK_FALSE(base.use_pseudo);
  CHECK_FALSE(base.train.mask.any_enabled());
  CHECK(base.schedule.scheduler == Scheduler::off);
  CHECK(find("M1").use_pseudo);
  const MaskConfig& m2 = find("M2").train.mask;
  const MaskConfig& m3 = find("M3").train.mask;
  const MaskConfig& m4 = find("M4").train.mask;
  CHECK((m2.patch_v && m2.patch_t && !m2.channel_v && !m2.channel_t));
  CHECK((!m3.patch_v && !m3.patch_t && m3.channel_v && m3.channel_t));
  CHECK((m4.patch_v && m4.patch_t && m4.channel_v && m4.channel_t));
  CHECK(find("M5").schedule.scheduler != Scheduler::off);
  CHECK_FALSE(find("M5").train.mask.any_enabled());
  const PipelineConfig& ours = find("Ours");
  CHECK(ours.use_pseudo);
  CHECK(ours.schedule.scheduler != Scheduler::off);
  CHECK((ours.train.mask.patch_v && ours.train.mask.patch_t && ours.train.mask.channel_v && ours.train.mask.channel_t));
  CHECK_THROWS_AS(run_ablation_ladder(fast_config(), {0, 1}), ConfigError);
}

TEST_CASE("M4 equals a direct run with both masks") {
  TempRoot root("tbps_harness_m4");
  const std::vector<Variant> v = ladder_variants(fast_config());
  PipelineConfig direct = fast_config();
  direct.train.mask = MaskConfig{};
  direct.train.mask.patch_v = direct.train.mask.patch_t = direct.train.mask.channel_v = direct.train.mask.channel_t = true;
  for (const Variant& x : v)
    if (x.name == "M4") CHECK(run_pipeline(x.config, opts_for(root)).metrics.map ==
                              run_pipeline(direct, opts_for(root)).metrics.map);
}

TEST_CASE("sweeps write one row per grid point and record rejected points") {
  TempRoot root("tbps_harness_sweep");
  const fs::path tables = root.path / "tables";
  const MetricTable t =
      run_sweep(SweepKind::mask_ratio, fast_config(), {"0", "0.2", "0.4", "1.5"}, {0}, opts_for(root), tables);
  REQUIRE(t.summary.size() == 4);
  CHECK(t.row("0.2").n == 1);
  CHECK(t.row("1.5").n == 0);
  int failed = 0;
  for (const Cell& c : t.cells) failed += c.manifest ? 0 : 1;
  CHECK(failed == 1);
  CHECK(fs::exists(tables / "mask_ratio.csv"));
  CHECK(fs::exists(tables / "mask_ratio.svg"));
  const std::vector<SummaryRow> back = read_summary_csv(tables / "mask_ratio.csv");
  REQUIRE(back.size() == 4);
  CHECK(back[1].mean_map == doctest::Approx(t.summary[1].mean_map).epsilon(1e-9));
  std::ifstream svg(tables / "mask_ratio.svg");
  std::string first;
  std::getline(svg, first);
  CHECK(first.find("<svg") != std::string::npos);
}

TEST_CASE("summary statistics use the sample standard deviation") {
  std::vector<Cell> cells;
  for (double r1 : {0.1, 0.2, 0.3}) {
    ExperimentManifest m;
    m.metrics.r1 = r1;
    m.metrics.map = 2 * r1;
    cells.push_back({"x", 0, m, ""});
  }
  const std::vector<SummaryRow> rows = summarize_cells(cells, {"x"});
  CHECK(rows[0].n == 3);
  CHECK(rows[0].mean_r1 == doctest::Approx(0.2));
  CHECK(rows[0].std_r1 == doctest::Approx(0.1));
  CHECK(rows[0].std_map == doctest::Approx(0.2));
}

#ifdef TBPS_CLI_PATH
TEST_CASE("command-line exit codes") {
  TempRoot root("tbps_harness_cli");
  fs::create_directories(root.path);
  auto run = [&](const std::string& args) {
    const std::string cmd = std::string(TBPS_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };
  CHECK(run("--help") == 0);
  CHECK(run("no-such-command") == 2);
  CHECK(run("retrieval train --set train.epochs=zero --root " + root.path.string()) == 2);
  CHECK(run("retrieval train --set bogus.key=1 --root " + root.path.string()) == 2);
  {
    std::ofstream os(root.path / "spec.cfg");
    os << to_text(fast_config());
  }
  CHECK(run("corpus generate --spec " + (root.path / "spec.cfg").string() + " --seed 1 --out " +
            (root.path / "corpus").string()) == 0);
  CHECK(fs::exists(root.path / "corpus"));
  CHECK(run("eval --checkpoint /nonexistent.ckpt -c " + (root.path / "spec.cfg").string() + " --root " +
            root.path.string()) == 3);
}
#endif
