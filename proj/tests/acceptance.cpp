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

// Acceptance run: one PASS/FAIL line per criterion. Formula-level checks
// run in seconds; trend checks drive the full pipeline over five seeds and
// reuse cached stage artifacts under $TBPS_ACCEPTANCE_ROOT (default
// ./acceptance-artifacts), so a rerun only recomputes what changed.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "helpers.hpp"
#include "tbps/harness.hpp"

using namespace tbps;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kExact = 1e-9;
constexpr double kRoot2Tol = 1e-5;
constexpr double kChannelRateTol = 0.01;
constexpr double kGradTol = 1e-4;
constexpr double kM1Gain = 3.0;      // R-1 points
constexpr double kOursGain = 5.0;    // R-1 points
constexpr double kMinSpearman = 0.5;
constexpr int kMinScoredPairs = 500;
const std::vector<std::uint64_t> kSeeds = {0, 1, 2, 3, 4};

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("[%s] %2d %-32s %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
  std::fflush(stdout);
}

std::string strf(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- formula-level ----------------------------------------------------------

Outcome scheduler_golden() {
  const double l0 = lambda_linear(0, 0.3, 15), l15 = lambda_linear(15, 0.3, 15), l6 = lambda_linear(6, 0.3, 15);
  const double r6 = lambda_root2(6, 0.3, 15);
  const bool ok = std::abs(l0 - 0.3) < kExact && std::abs(l15 - 1.0) < kExact && std::abs(l6 - 0.58) < kExact &&
                  std::abs(r6 - 0.67380) < kRoot2Tol;
  return {ok, strf("linear(0)=%.12g linear(15)=%.12g linear(6)=%.12g root2(6)=%.6f", l0, l15, l6, r6)};
}

Outcome masking_counts() {
  const CorpusSplit split = generate_corpus(CorpusSpec{}, 1);
  const Vocabulary vocab = split.vocab();
  // Ten content tokens between BOS and EOS.
  std::vector<TokenId> caption = {Vocabulary::kBos};
  for (int a = 0; a < 5; ++a) {
    caption.push_back(vocab.connective_token(a, 0));
    caption.push_back(vocab.value_token(a, 0));
  }
  caption.push_back(Vocabulary::kEos);

  MaskConfig cfg;
  cfg.rho_v = 0.2;
  cfg.rho_t = 0.1;
  std::vector<MaskRequest> reqs;
  for (const SyntheticImage& img : split.unlabeled)
    reqs.push_back({static_cast<int>(img.patches.rows()), caption, true});
  int bad_patches = 0, bad_tokens = 0;
  for (std::size_t start = 0; start < reqs.size(); start += 64) {
    const std::size_t n = std::min<std::size_t>(64, reqs.size() - start);
    for (const MaskOutcome& m :
         mask_batch(cfg, std::span(reqs).subspan(start, n), 32, derive_seed(9, start), Mode::training)) {
      bad_patches += m.kept_patch_indices.size() != 12;
      bad_tokens += m.masked_token_positions.size() != 1;
    }
  }
  const RowVec ones = RowVec::Ones(32), zeros = RowVec::Zero(32);
  double masked = 0.0;
  const int draws = 10000;
  for (int n = 0; n < draws; ++n) {
    RowVec b;
    apply_channel_mask(ones, zeros, 0.1, derive_seed(10, n), &b);
    masked += 32.0 - b.sum();
  }
  const double rate = masked / (32.0 * draws);
  const bool ok = bad_patches == 0 && bad_tokens == 0 && std::abs(rate - 0.1) <= kChannelRateTol;
  return {ok, strf("%zu samples: %d wrong patch counts, %d wrong token counts; channel rate %.4f", reqs.size(),
                  bad_patches, bad_tokens, rate)};
}

Outcome channel_formula() {
  Rng rng(12);
  int mismatches = 0;
  for (int n = 0; n < 1000; ++n) {
    const RowVec row = testing::random_mat(1, 32, rng), proto = testing::random_mat(1, 32, rng);
    RowVec b;
    const RowVec out = apply_channel_mask(row, proto, 0.3, derive_seed(13, n), &b);
    const RowVec expect = row.cwiseProduct(b) + proto.cwiseProduct(RowVec::Ones(32) - b);
    mismatches += (out.array() != expect.array()).count();
  }
  return {mismatches == 0, strf("%d element mismatches over 1000 rows", mismatches)};
}

Outcome gradient_checks() {
  const CorpusSpec spec = testing::tiny_spec();
  const CorpusSplit split = generate_corpus(spec, 3);

  // Captioner language-modeling loss.
  CaptionerConfig cc = CaptionerConfig::for_corpus(spec);
  cc.width = 8;
  cc.mlp_hidden = 16;
  CaptionerParams cap(cc, 5);
  testing::randomize(cap.store, 6);
  const ImageTextPair& pr = split.labeled[0];
  ad::Tape t;
  t.backward(lm_loss(t, cap, pr.image, pr.caption));
  ad::GradStore cg(cap.store.size());
  t.collect_param_grads(cg);
  const double lm = testing::check_param_grads(cap.store, cg, [&] { return lm_loss(cap, pr.image, pr.caption); }).max_rel;

  // Contrastive loss w.r.t. features and temperature.
  Rng rng(3);
  Mat v = testing::random_mat(5, 8, rng), tx = testing::random_mat(5, 8, rng);
  Mat tau = Mat::Constant(1, 1, 0.15);
  const std::vector<int> ids = {0, 1, 0, 2, 3};
  ad::Tape ti;
  ad::Var iv = ti.input(v), it = ti.input(tx), itau = ti.input(tau);
  ti.backward(itc_loss(ti, iv, it, itau, ids));
  const Mat gv = ti.grad(iv), gt = ti.grad(it), gtau = ti.grad(itau);
  auto fi = [&] { return itc_loss(v, tx, tau(0, 0), ids); };
  const double itc = std::max({testing::check_input_grad(v, gv, fi).max_rel, testing::check_input_grad(tx, gt, fi).max_rel,
                               testing::check_input_grad(tau, gtau, fi).max_rel});

  // Matching term and the total loss through the whole encoder.
  EncoderParams enc(EncoderConfig::for_corpus(spec, 8), 8);
  testing::randomize(enc.store, 58, 0.3);
  enc.store.value(enc.tau)(0, 0) = 0.2;
  std::vector<PairedSample> samples;
  for (int i = 0; i < 5; ++i)
    samples.push_back({i, split.labeled[static_cast<std::size_t>(i)].image, split.labeled[static_cast<std::size_t>(i)].caption});
  Batch batch;
  for (const PairedSample& s : samples) batch.items.push_back(&s);
  const NegativePlan plan{{2, 3, 4, 0, 1}, {3, 4, 0, 2, 2}};
  const BatchGradient g = batch_gradient(enc, batch, {}, ObjectiveOptions{}, 1, Exec::serial, &plan);
  const double total = testing::check_param_grads(enc.store, g.grads, [&] {
                         return batch_gradient_reference(enc, batch, {}, ObjectiveOptions{}, 1, &plan).loss.total();
                       }).max_rel;
  // Fusion cross-attention and the matching head feed only the matching term.
  double itm = 0.0;
  const double h = 1e-5;
  for (std::size_t i = 0; i < enc.store.size(); ++i) {
    const auto id = static_cast<ad::ParamId>(i);
    const std::string& name = enc.store.name(id);
    if (name.rfind("fuse.", 0) != 0 && name.rfind("itm.", 0) != 0) continue;
    Mat& w = enc.store.value(id);
    for (Eigen::Index k = 0; k < std::min<Eigen::Index>(w.size(), 12); ++k) {
      const double orig = w.data()[k];
      w.data()[k] = orig + h;
      const double up = itm_loss(enc, batch, plan);
      w.data()[k] = orig - h;
      const double down = itm_loss(enc, batch, plan);
      w.data()[k] = orig;
      const double analytic = g.grads.has(id) ? g.grads.get(id).data()[k] : 0.0;
      itm = std::max(itm, testing::rel_error(analytic, (up - down) / (2 * h)));
    }
  }
  const bool ok = lm < kGradTol && itc < kGradTol && itm < kGradTol && total < kGradTol;
  return {ok, strf("max rel error lm %.2e itc %.2e itm %.2e total %.2e", lm, itc, itm, total)};
}

Outcome metric_oracles() {
  CorpusSpec spec = testing::tiny_spec();
  spec.num_test_identities = 15;
  const CorpusSplit split = generate_corpus(spec, 4);
  EncoderParams p(EncoderConfig::for_corpus(spec, 8), 5);
  testing::randomize(p.store, 6, 0.3);
  const auto results = rank_all(p, split.test_queries, split.test_gallery);
  const RetrievalMetrics m = summarize(results);

  // Brute force: an item's rank is 1 + the number of items that beat it.
  std::vector<RowVec> feats;
  for (const SyntheticImage& g : split.test_gallery) feats.push_back(image_global_feature(p, g));
  double r1 = 0, r5 = 0, r10 = 0, map = 0;
  for (const TestQuery& q : split.test_queries) {
    const RowVec tq = text_global_feature(p, q.caption);
    std::vector<double> s;
    for (const RowVec& f : feats) s.push_back(tq.dot(f) / (tq.norm() * f.norm()));
    std::vector<int> ranks;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (split.test_gallery[i].identity_id != q.identity_id) continue;
      int r = 1;
      for (std::size_t j = 0; j < s.size(); ++j)
        r += s[j] > s[i] || (s[j] == s[i] && split.test_gallery[j].image_id < split.test_gallery[i].image_id);
      ranks.push_back(r);
    }
    std::sort(ranks.begin(), ranks.end());
    r1 += ranks[0] <= 1;
    r5 += ranks[0] <= 5;
    r10 += ranks[0] <= 10;
    double ap = 0;
    for (std::size_t k = 0; k < ranks.size(); ++k) ap += (k + 1.0) / ranks[k];
    map += ap / static_cast<double>(ranks.size());
  }
  const double nq = static_cast<double>(split.test_queries.size());
  RankingResult hand;
  hand.ordered_gallery_ids = {10, 11, 12};
  hand.relevant_set = {10, 12};
  const double ap_hand = average_precision(hand);
  const bool ok = split.test_gallery.size() == 30 && m.r1 == r1 / nq && m.r5 == r5 / nq && m.r10 == r10 / nq &&
                  std::abs(m.map - map / nq) < 1e-12 && std::abs(ap_hand - 0.8333) < 5e-5;
  return {ok, strf("gallery %zu: R-1 %.4f/%.4f R-5 %.4f/%.4f mAP %.6f/%.6f; hand AP %.4f", split.test_gallery.size(),
                  m.r1, r1 / nq, m.r5, r5 / nq, m.map, map / nq, ap_hand)};
}

Outcome noise_and_prefix() {
  const double s = noise_from_match(0.35);
  const CorpusSplit split = generate_corpus(testing::tiny_spec(), 1);
  const EncoderParams scorer(EncoderConfig::for_corpus(testing::tiny_spec(), 8), 1);
  MeasureContext ctx{&scorer, 12, 3};
  int nonzero = 0, human = 0;
  for (Measurer m : {Measurer::blipscore_analog, Measurer::clipscore_analog, Measurer::sentence_length, Measurer::random})
    for (std::size_t i = 0; i < split.labeled.size(); ++i) {
      const PairedSample ps{static_cast<int>(i), split.labeled[i].image, split.labeled[i].caption};
      nonzero += measure_noise(ps, ctx, m, split.vocab()).score != 0.0;
      ++human;
    }
  Rng rng(7);
  std::uniform_int_distribution<int> size(1, 300), sched(0, 2), grow(1, 20);
  std::uniform_real_distribution<double> lam(0.05, 1.0), u(0.0, 1.0);
  int violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = size(rng);
    std::vector<NoiseScore> scores;
    for (int i = 0; i < n; ++i) scores.push_back({i, u(rng) < 0.2 ? 0.0 : u(rng), Measurer::random});
    SchedulerParams sp;
    sp.scheduler = std::array{Scheduler::linear, Scheduler::root2, Scheduler::baby_step}[static_cast<std::size_t>(sched(rng))];
    sp.lambda0 = lam(rng);
    sp.t_grow = grow(rng);
    sp.buckets = std::min(n, 1 + trial % 5);
    sp.epochs_per_bucket = 1 + trial % 4;
    sp.epochs = 20;
    const CurriculumPlan plan = build_plan(scores, sp);
    for (int t = 1; t < sp.epochs; ++t) {
      const auto early = plan.admitted(t - 1), late = plan.admitted(t);
      violations += early.size() > late.size() || !std::equal(early.begin(), early.end(), late.begin());
    }
  }
  const bool ok = std::abs(s - 0.65) < kExact && nonzero == 0 && violations == 0;
  return {ok, strf("noise(0.35)=%.12g; %d/%d human scores nonzero; %d prefix violations over 1000 plans", s, nonzero,
                  human, violations)};
}

Outcome inference_unmasked() {
  const CorpusSplit split = generate_corpus(testing::tiny_spec(), 5);
  EncoderParams p(EncoderConfig::for_corpus(testing::tiny_spec(), 8), 3);
  testing::randomize(p.store, 4, 0.3);
  const long before = mask_application_counter().load();
  evaluate(p, split, {0, Exec::parallel});
  evaluate(p, split, {5, Exec::serial});
  rank_gallery(p, split.test_queries[0].caption, 0, split.test_queries[0].identity_id, split.test_gallery);
  const long after = mask_application_counter().load();
  // The counter is live: one masked training embedding moves it.
  const auto masks = mask_batch(MaskConfig{}, std::vector<MaskRequest>{{4, split.labeled[0].caption.tokens, true}}, 8, 1,
                                Mode::training);
  embed_image(p, split.labeled[0].image, &masks[0]);
  const bool live = mask_application_counter().load() > after;
  return {after == before && live, strf("%ld mask applications during evaluation; counter live: %s", after - before,
                                       live ? "yes" : "no")};
}

// ---- trend-level --------------------------------------------------------------

double pct(double x) { return 100.0 * x; }

double pooled_se(const SummaryRow& a, const SummaryRow& b) {
  return 100.0 * std::sqrt(a.std_r1 * a.std_r1 / a.n + b.std_r1 * b.std_r1 / b.n);
}

struct TrendData {
  MetricTable ladder, measurer, labeled, mask;
  std::string error;
};

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const char* env = std::getenv("TBPS_ACCEPTANCE_ROOT");
  RunOptions opts;
  opts.root = env ? fs::path(env) : fs::path("acceptance-artifacts");
  const fs::path tables = opts.root / "tables";

  report(1, "scheduler golden values", scheduler_golden);
  report(2, "masking counts", masking_counts);
  report(3, "channel-mask formula", channel_formula);
  report(4, "gradient checks", gradient_checks);
  report(5, "metric oracles", metric_oracles);
  report(6, "noise score and plan prefix", noise_and_prefix);
  report(7, "inference is unmasked", inference_unmasked);

  const PipelineConfig base;
  PipelineConfig ours;
  for (const Variant& v : ladder_variants(base))
    if (v.name == "Ours") ours = v.config;

  TrendData d;
  try {
    std::printf("running ablation ladder over %zu seeds under %s\n", kSeeds.size(), opts.root.c_str());
    std::fflush(stdout);
    d.ladder = run_ablation_ladder(base, kSeeds, opts);
    fs::create_directories(tables);
    write_summary_csv(tables / "ladder.csv", d.ladder.summary);
    write_cells_csv(tables / "ladder_cells.csv", d.ladder.cells);
    write_svg_plot(tables / "ladder.svg", "component ablation", "variant", d.ladder.summary);
    std::printf("%s", format_table(d.ladder.summary).c_str());
    std::fflush(stdout);
    d.measurer = run_sweep(SweepKind::measurer, ours, default_grid(SweepKind::measurer), kSeeds, opts, tables);
    std::printf("%s", format_table(d.measurer.summary).c_str());
    std::fflush(stdout);
    d.labeled = run_sweep(SweepKind::labeled_ratio, ours, {"0.01", "0.05", "0.2"}, kSeeds, opts, tables);
    std::printf("%s", format_table(d.labeled.summary).c_str());
    std::fflush(stdout);
    d.mask = run_sweep(SweepKind::mask_ratio, ours, {"0", "0.2", "0.8"}, kSeeds, opts, tables);
    std::printf("%s", format_table(d.mask.summary).c_str());
    std::fflush(stdout);
  } catch (const std::exception& e) {
    d.error = e.what();
  }
  auto need = [&](const MetricTable& t) {
    if (!d.error.empty()) throw StageError(d.error);
    for (const Cell& c : t.cells)
      if (!c.manifest) throw StageError("missing cell " + c.variant + " seed " + std::to_string(c.seed) + ": " + c.error);
  };

  report(8, "pseudo pairs beat labeled-only", [&] {
    need(d.ladder);
    const SummaryRow &b = d.ladder.row("baseline"), &m1 = d.ladder.row("M1");
    const double gain = pct(m1.mean_r1 - b.mean_r1);
    return Outcome{gain >= kM1Gain, strf("baseline %.2f, M1 %.2f, gain %.2f (need >= %.1f)", pct(b.mean_r1),
                                        pct(m1.mean_r1), gain, kM1Gain)};
  });

  report(9, "component ladder ordering", [&] {
    need(d.ladder);
    const MetricTable& l = d.ladder;
    auto geq = [&](const char* a, const char* b, std::string& text) {
      const SummaryRow &ra = l.row(a), &rb = l.row(b);
      const double gap = pct(ra.mean_r1 - rb.mean_r1), se = pooled_se(ra, rb);
      text += strf("%s-%s %+.2f (se %.2f); ", a, b, gap, se);
      return gap >= -se;
    };
    std::string text;
    bool ok = geq("Ours", "M4", text);
    ok = geq("M4", "M1", text) && ok;
    ok = geq("Ours", "M5", text) && ok;
    ok = geq("M5", "M1", text) && ok;
    const double gain = pct(l.row("Ours").mean_r1 - l.row("baseline").mean_r1);
    text += strf("Ours-baseline %+.2f (need >= %.1f)", gain, kOursGain);
    return Outcome{ok && gain >= kOursGain, text};
  });

  report(10, "measurer comparison", [&] {
    need(d.measurer);
    const MetricTable& m = d.measurer;
    double worst = 1.0;
    std::string text;
    for (const SummaryRow& r : m.summary) {
      worst = std::min(worst, r.mean_r1);
      text += strf("%s %.2f; ", r.label.c_str(), pct(r.mean_r1));
    }
    const double blip = m.row("blipscore_analog").mean_r1, rnd = m.row("random").mean_r1;
    return Outcome{blip >= rnd && blip >= worst && rnd >= worst, text};
  });

  report(11, "measurer validity", [&] {
    need(d.ladder);
    std::vector<double> rho;
    std::size_t pairs = 0;
    for (std::uint64_t seed : kSeeds) {
      PipelineConfig c = ours;
      c.seed = seed;
      const CorpusSplit split = load_or_generate_corpus(c, opts);
      const std::vector<ImageTextPair> pseudo = load_or_generate_pseudo(c, split, opts);
      const std::vector<NoiseScore> scores =
          read_scores_csv(opts.root / "scores" / stage_hash(c, Stage::scores) / "scores.csv");
      std::vector<double> s, truth;
      for (std::size_t k = 0; k < pseudo.size(); ++k) {
        s.push_back(scores.at(split.labeled.size() + k).score);
        truth.push_back(pseudo[k].caption.oracle_corruption_rate);
      }
      pairs += pseudo.size();
      rho.push_back(spearman(s, truth));
    }
    const double mean = std::accumulate(rho.begin(), rho.end(), 0.0) / static_cast<double>(rho.size());
    std::ostringstream per;
    for (double r : rho) per << strf(" %.3f", r);
    return Outcome{mean > kMinSpearman && pairs / kSeeds.size() >= static_cast<std::size_t>(kMinScoredPairs),
                   strf("mean Spearman %.3f over %zu pairs per seed (per seed:%s)", mean, pairs / kSeeds.size(),
                       per.str().c_str())};
  });

  report(12, "labeled-ratio monotonicity", [&] {
    need(d.labeled);
    const double a = d.labeled.row("0.01").mean_r1, b = d.labeled.row("0.05").mean_r1, c = d.labeled.row("0.2").mean_r1;
    return Outcome{a <= b && b <= c, strf("1%% %.2f, 5%% %.2f, 20%% %.2f", pct(a), pct(b), pct(c))};
  });

  report(13, "mask-ratio interior optimum", [&] {
    need(d.mask);
    const double a = d.mask.row("0").mean_r1, b = d.mask.row("0.2").mean_r1, c = d.mask.row("0.8").mean_r1;
    return Outcome{b > a && b > c, strf("rho_v 0: %.2f, 0.2: %.2f, 0.8: %.2f", pct(a), pct(b), pct(c))};
  });

  std::printf("%d of 13 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
