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

#include "tbps/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace tbps {

EncoderConfig PipelineConfig::encoder_config() const {
  EncoderConfig e = EncoderConfig::for_corpus(corpus, encoder_width);
  e.heads = encoder_heads;
  e.layers = encoder_layers;
  e.tau_init = tau_init;
  e.init_scale = encoder_init_scale;
  return e;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad(std::string_view key, std::string_view value, std::string_view what) {
  throw ConfigError(std::string(key) + ": cannot parse '" + std::string(value) + "' as " + std::string(what));
}

long long to_int(std::string_view key, std::string_view v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad(key, v, "an integer");
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad(key, v, "a number");
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  bad(key, v, "a boolean");
}

std::string fmt(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

std::string fmt(bool b) { return b ? "true" : "false"; }
std::string fmt(int x) { return std::to_string(x); }

struct Entry {
  std::string key;
  Stage stage;
  std::function<void(PipelineConfig&, std::string_view)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

#define TBPS_INT(KEY, STAGE, FIELD) \
  Entry{KEY, STAGE, [](PipelineConfig& c, std::string_view v) { c.FIELD = static_cast<int>(to_int(KEY, v)); }, \
        [](const PipelineConfig& c) { return fmt(c.FIELD); }}
#define TBPS_REAL(KEY, STAGE, FIELD) \
  Entry{KEY, STAGE, [](PipelineConfig& c, std::string_view v) { c.FIELD = to_double(KEY, v); }, \
        [](const PipelineConfig& c) { return fmt(c.FIELD); }}
#define TBPS_BOOL(KEY, STAGE, FIELD) \
  Entry{KEY, STAGE, [](PipelineConfig& c, std::string_view v) { c.FIELD = to_bool(KEY, v); }, \
        [](const PipelineConfig& c) { return fmt(c.FIELD); }}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      Entry{"seed", Stage::corpus,
            [](PipelineConfig& c, std::string_view v) {
              const long long s = to_int("seed", v);
              if (s < 0) bad("seed", v, "a non-negative integer");
              c.seed = static_cast<std::uint64_t>(s);
            },
            [](const PipelineConfig& c) { return std::to_string(c.seed); }},
      TBPS_INT("corpus.num_train_identities", Stage::corpus, corpus.num_train_identities),
      TBPS_INT("corpus.images_per_identity", Stage::corpus, corpus.images_per_identity),
      TBPS_INT("corpus.captions_per_image", Stage::corpus, corpus.captions_per_image),
      TBPS_INT("corpus.num_test_identities", Stage::corpus, corpus.num_test_identities),
      TBPS_INT("corpus.test_images_per_identity", Stage::corpus, corpus.test_images_per_identity),
      TBPS_REAL("corpus.labeled_ratio", Stage::corpus, corpus.labeled_ratio),
      TBPS_INT("corpus.num_attributes", Stage::corpus, corpus.num_attributes),
      TBPS_INT("corpus.values_per_attribute", Stage::corpus, corpus.values_per_attribute),
      TBPS_INT("corpus.num_patches", Stage::corpus, corpus.num_patches),
      TBPS_INT("corpus.patch_dim", Stage::corpus, corpus.patch_dim),
      TBPS_REAL("corpus.sigma_img", Stage::corpus, corpus.sigma_img),

      TBPS_BOOL("caption.pretrain", Stage::captioner, caption_pretrain),
      TBPS_INT("caption.pretrain_epochs", Stage::captioner, caption_pretrain_epochs),
      TBPS_INT("caption.epochs", Stage::captioner, caption.epochs),
      TBPS_REAL("caption.lr", Stage::captioner, caption.lr),
      TBPS_INT("caption.batch_size", Stage::captioner, caption.batch_size),
      TBPS_BOOL("caption.freeze_attention", Stage::captioner, caption.freeze_attention),

      Entry{"generate.decoder", Stage::pseudo,
            [](PipelineConfig& c, std::string_view v) {
              if (v == "greedy") c.decoder.kind = DecoderKind::greedy;
              else if (v == "sample") c.decoder.kind = DecoderKind::sample;
              else bad("generate.decoder", v, "greedy|sample");
            },
            [](const PipelineConfig& c) { return std::string(c.decoder.kind == DecoderKind::greedy ? "greedy" : "sample"); }},
      TBPS_REAL("generate.top_p", Stage::pseudo, decoder.top_p),
      TBPS_INT("generate.texts_per_image", Stage::pseudo, texts_per_image),

      TBPS_BOOL("pipeline.use_pseudo", Stage::scores, use_pseudo),
      TBPS_INT("encoder.width", Stage::scores, encoder_width),
      TBPS_INT("encoder.heads", Stage::scores, encoder_heads),
      TBPS_INT("encoder.layers", Stage::scores, encoder_layers),
      TBPS_REAL("encoder.init_scale", Stage::scores, encoder_init_scale),
      TBPS_REAL("loss.tau_init", Stage::scores, tau_init),
      TBPS_BOOL("loss.hard_negatives", Stage::scores, train.objectives.hard_negatives),
      TBPS_INT("train.batch_size", Stage::scores, train.batch_size),
      TBPS_REAL("train.lr", Stage::scores, train.learning_rate),
      TBPS_REAL("train.clip", Stage::scores, train.clip_norm),
      TBPS_REAL("train.jitter", Stage::scores, train.jitter),
      TBPS_INT("train.warmup_epochs", Stage::scores, train.warmup_epochs),
      Entry{"curriculum.measurer", Stage::scores,
            [](PipelineConfig& c, std::string_view v) { c.measurer = parse_measurer(std::string(v)); },
            [](const PipelineConfig& c) { return to_string(c.measurer); }},

      TBPS_INT("train.epochs", Stage::retrieval, train.epochs),
      TBPS_INT("train.checkpoint_every", Stage::retrieval, train.checkpoint_every),
      TBPS_BOOL("mask.patch_v", Stage::retrieval, train.mask.patch_v),
      TBPS_BOOL("mask.patch_t", Stage::retrieval, train.mask.patch_t),
      TBPS_BOOL("mask.channel_v", Stage::retrieval, train.mask.channel_v),
      TBPS_BOOL("mask.channel_t", Stage::retrieval, train.mask.channel_t),
      TBPS_REAL("mask.rho_v", Stage::retrieval, train.mask.rho_v),
      TBPS_REAL("mask.rho_t", Stage::retrieval, train.mask.rho_t),
      TBPS_REAL("mask.beta_v", Stage::retrieval, train.mask.beta_v),
      TBPS_REAL("mask.beta_t", Stage::retrieval, train.mask.beta_t),
      TBPS_BOOL("mask.pseudo_only", Stage::retrieval, train.mask.pseudo_only),
      Entry{"curriculum.scheduler", Stage::retrieval,
            [](PipelineConfig& c, std::string_view v) { c.schedule.scheduler = parse_scheduler(std::string(v)); },
            [](const PipelineConfig& c) { return to_string(c.schedule.scheduler); }},
      TBPS_REAL("curriculum.lambda0", Stage::retrieval, schedule.lambda0),
      TBPS_INT("curriculum.t_grow", Stage::retrieval, schedule.t_grow),
      TBPS_INT("curriculum.buckets", Stage::retrieval, schedule.buckets),
      TBPS_INT("curriculum.epochs_per_bucket", Stage::retrieval, schedule.epochs_per_bucket),
      TBPS_INT("eval.itm_rerank_top_k", Stage::retrieval, itm_rerank_top_k),
  };
  return table;
}

#undef TBPS_INT
#undef TBPS_REAL
#undef TBPS_BOOL

const Entry& find_entry(std::string_view key) {
  for (const Entry& e : entries())
    if (e.key == key) return e;
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void validate(const PipelineConfig& c) {
  try {
    c.corpus.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  c.train.validate();
  if (c.caption_pretrain_epochs < 0 || c.caption.epochs < 0) throw ConfigError("caption epochs must be non-negative");
  if (!(c.caption.lr > 0.0)) throw ConfigError("caption.lr must be positive");
  if (c.caption.batch_size < 1) throw ConfigError("caption.batch_size must be positive");
  if (!(c.decoder.top_p > 0.0 && c.decoder.top_p <= 1.0)) throw ConfigError("generate.top_p must lie in (0, 1]");
  if (c.texts_per_image < 1) throw ConfigError("generate.texts_per_image must be positive");
  if (c.encoder_width < 2 || c.encoder_heads < 1 || c.encoder_width % c.encoder_heads != 0)
    throw ConfigError("encoder.width must be divisible by encoder.heads");
  if (c.encoder_layers < 1) throw ConfigError("encoder.layers must be positive");
  if (!(c.encoder_init_scale > 0.0)) throw ConfigError("encoder.init_scale must be positive");
  if (!(c.tau_init >= kTauMin && c.tau_init <= kTauMax)) throw ConfigError("loss.tau_init outside the clamp range");
  if (!(c.schedule.lambda0 > 0.0 && c.schedule.lambda0 <= 1.0)) throw ConfigError("curriculum.lambda0 must lie in (0, 1]");
  if (c.schedule.t_grow < 1) throw ConfigError("curriculum.t_grow must be at least 1");
  if (c.schedule.buckets < 1 || c.schedule.epochs_per_bucket < 1)
    throw ConfigError("curriculum.buckets and curriculum.epochs_per_bucket must be positive");
  if (c.itm_rerank_top_k < 0) throw ConfigError("eval.itm_rerank_top_k must be non-negative");
}

}  // namespace

void set_config_value(PipelineConfig& config, std::string_view key, std::string_view value) {
  find_entry(key).set(config, trim(value));
}

std::string get_config_value(const PipelineConfig& config, std::string_view key) { return find_entry(key).get(config); }

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const Entry& e : entries()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

PipelineConfig parse_config(std::string_view text) {
  PipelineConfig c;
  std::istringstream is{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(c, trim(std::string_view(t).substr(0, eq)), std::string_view(t).substr(eq + 1));
  }
  validate(c);
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const PipelineConfig& config) {
  std::string out;
  for (const Entry& e : entries()) out += e.key + " = " + e.get(config) + "\n";
  return out;
}

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::corpus: return "corpus";
    case Stage::captioner: return "captioner";
    case Stage::pseudo: return "pseudo";
    case Stage::scores: return "scores";
    case Stage::retrieval: return "retrieval";
  }
  return "?";
}

std::string stage_text(const PipelineConfig& config, Stage s) {
  std::string out;
  for (const Entry& e : entries())
    if (static_cast<int>(e.stage) <= static_cast<int>(s)) out += e.key + " = " + e.get(config) + "\n";
  return out;
}

std::string stage_hash(const PipelineConfig& config, Stage s) { return fnv1a_hex(stage_text(config, s)); }

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace tbps
