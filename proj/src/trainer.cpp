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

#include "tbps/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <spdlog/spdlog.h>

namespace tbps {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (batch_size < 2) throw ConfigError("train.batch_size must be at least 2");
  if (!(learning_rate > 0.0)) throw ConfigError("train.lr must be positive");
  if (jitter < 0.0) throw ConfigError("train.jitter must be non-negative");
  mask.validate();
}

std::vector<PairedSample> assemble_training_set(std::span<const ImageTextPair> labeled,
                                                std::span<const ImageTextPair> pseudo) {
  std::vector<PairedSample> out;
  out.reserve(labeled.size() + pseudo.size());
  int id = 0;
  for (const ImageTextPair& p : labeled) out.push_back({id++, p.image, p.caption});
  for (const ImageTextPair& p : pseudo) out.push_back({id++, p.image, p.caption});
  return out;
}

namespace {

void save(const EncoderParams& p, const std::filesystem::path& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  write_checkpoint(dir / name, to_checkpoint("encoder", p.store));
}

}  // namespace

TrainResult train(const TrainConfig& config, const EncoderConfig& encoder, std::span<const PairedSample> samples,
                  const CurriculumPlan* plan, const ProbeSet* probe) {
  config.validate();
  require(!samples.empty(), "train: empty training set");
  for (std::size_t i = 0; i < samples.size(); ++i)
    require(samples[i].sample_id == static_cast<int>(i), "train: sample ids must equal their index");
  if (plan) {
    require(plan->sorted_ids.size() == samples.size(), "train: plan does not cover the training set");
    for (int id : plan->sorted_ids)
      require(id >= 0 && id < static_cast<int>(samples.size()), "train: plan references an unknown sample");
  }

  EncoderConfig enc = encoder;
  TrainResult out{EncoderParams(enc, derive_seed(config.seed, 0x696e6974ULL)), {}};
  EncoderParams& params = out.params;
  Adam adam(params.store, {.lr = config.learning_rate});

  std::vector<int> all(samples.size());
  std::iota(all.begin(), all.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<int> pool = plan ? std::vector<int>(plan->admitted(epoch).begin(), plan->admitted(epoch).end()) : all;
    Rng shuffle_rng(derive_seed(config.seed, 0x73687566ULL, epoch));
    std::shuffle(pool.begin(), pool.end(), shuffle_rng);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.admitted_count = static_cast<int>(pool.size());
    const std::size_t bs = static_cast<std::size_t>(config.batch_size);
    for (std::size_t start = 0; start + 1 < pool.size(); start += bs) {
      std::size_t end = std::min(pool.size(), start + bs);
      // Fold a trailing singleton into this batch.
      if (pool.size() - end == 1) end = pool.size();
      const std::uint64_t step_seed = derive_seed(config.seed, 0x73746570ULL, epoch, rec.steps);

      std::vector<PairedSample> jittered;
      Batch batch;
      if (config.jitter > 0.0) {
        Rng jr(derive_seed(step_seed, 0x6a6974ULL));
        std::normal_distribution<double> n(0.0, config.jitter);
        for (std::size_t k = start; k < end; ++k) {
          PairedSample s = samples[static_cast<std::size_t>(pool[k])];
          for (Eigen::Index i = 0; i < s.image.patches.size(); ++i) s.image.patches.data()[i] += n(jr);
          jittered.push_back(std::move(s));
        }
        for (const PairedSample& s : jittered) batch.items.push_back(&s);
      } else {
        for (std::size_t k = start; k < end; ++k) batch.items.push_back(&samples[static_cast<std::size_t>(pool[k])]);
      }

      std::vector<MaskOutcome> masks;
      if (config.mask.any_enabled()) {
        std::vector<MaskRequest> reqs;
        for (const PairedSample* s : batch.items)
          reqs.push_back({static_cast<int>(s->image.patches.rows()), s->caption.tokens, s->is_pseudo()});
        masks = mask_batch(config.mask, reqs, enc.width, derive_seed(step_seed, 0x6d61736bULL), Mode::training);
      }

      BatchGradient g = batch_gradient(params, batch, masks, config.objectives, step_seed, config.exec);
      if (!std::isfinite(g.loss.total()))
        throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch));
      const double norm = clip_grad_norm(g.grads, config.clip_norm);
      if (!std::isfinite(norm))
        throw DivergenceError("train: non-finite gradient at epoch " + std::to_string(epoch));
      adam.step(params.store, g.grads);
      Mat& tau = params.store.value(params.tau);
      tau(0, 0) = std::clamp(tau(0, 0), kTauMin, kTauMax);

      rec.loss_itc += g.loss.itc;
      rec.loss_itm += g.loss.itm;
      rec.max_grad_norm = std::max(rec.max_grad_norm, norm);
      ++rec.steps;
      if (end == pool.size()) break;
    }
    if (rec.steps) {
      rec.loss_itc /= rec.steps;
      rec.loss_itm /= rec.steps;
    }
    if (!params.store.all_finite()) throw DivergenceError("train: parameters diverged at epoch " + std::to_string(epoch));
    if (probe) {
      RankOptions ro;
      ro.exec = config.exec;
      rec.probe_r1 = rank_k(rank_all(params, probe->queries, probe->gallery, ro), 1);
    }
    spdlog::debug("epoch {:2d} admitted {:5d} itc {:.4f} itm {:.4f} probe R-1 {:.4f}", epoch, rec.admitted_count,
                  rec.loss_itc, rec.loss_itm, rec.probe_r1);
    out.history.push_back(rec);
    if (!config.checkpoint_dir.empty() && config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0)
      save(params, config.checkpoint_dir, "epoch" + std::to_string(epoch + 1) + ".ckpt");
  }
  if (!config.checkpoint_dir.empty()) save(params, config.checkpoint_dir, "final.ckpt");
  return out;
}

std::vector<NoiseScore> warmup_and_score(const TrainConfig& config, const EncoderConfig& encoder,
                                         std::span<const PairedSample> samples, const Vocabulary& vocab,
                                         Measurer measurer, EncoderParams* scorer_out) {
  MeasureContext ctx;
  ctx.seed = derive_seed(config.seed, 0x73636f7265ULL);
  for (const PairedSample& s : samples) ctx.max_content_tokens = std::max(ctx.max_content_tokens, content_token_count(s.caption, vocab));

  std::optional<EncoderParams> scorer;
  if (measurer == Measurer::blipscore_analog) {
    TrainConfig warm = config;
    warm.epochs = config.warmup_epochs;
    warm.mask = MaskConfig::disabled();
    warm.checkpoint_dir.clear();
    scorer = train(warm, encoder, samples).params;
  } else if (measurer == Measurer::clipscore_analog) {
    scorer = EncoderParams(encoder, derive_seed(config.seed, 0x67656e65726963ULL));
  }
  if (scorer) ctx.scorer = &*scorer;
  std::vector<NoiseScore> scores = measure_all(samples, ctx, measurer, vocab);
  if (scorer_out && scorer) *scorer_out = *scorer;
  return scores;
}

void write_history_csv(const std::filesystem::path& path, std::span<const EpochRecord> history) {
  std::ofstream os(path);
  if (!os) throw StageError("cannot write history " + path.string());
  os.precision(10);
  os << "epoch,loss_itc,loss_itm,admitted_count,steps,max_grad_norm,probe_r1\n";
  for (const EpochRecord& r : history)
    os << r.epoch << ',' << r.loss_itc << ',' << r.loss_itm << ',' << r.admitted_count << ',' << r.steps << ','
       << r.max_grad_norm << ',' << r.probe_r1 << '\n';
}

}  // namespace tbps
