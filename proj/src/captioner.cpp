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

#include "tbps/captioner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>
#include <numeric>

#include <spdlog/spdlog.h>

namespace tbps {

CaptionerConfig CaptionerConfig::for_corpus(const CorpusSpec& spec) {
  CaptionerConfig c;
  c.num_patches = spec.num_patches;
  c.patch_dim = spec.patch_dim;
  c.vocab_size = Vocabulary(spec).size();
  c.max_len = spec.max_caption_length();
  return c;
}

CaptionerParams::CaptionerParams(const CaptionerConfig& c, std::uint64_t seed) : config(c) {
  Rng rng(derive_seed(seed, 0x636170ULL));
  auto gaussian = [&](const char* name, int r, int k, double scale) {
    std::normal_distribution<double> n(0.0, scale);
    Mat m(r, k);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return store.add(name, std::move(m));
  };
  // Weight matrices use 1/sqrt(fan_in).
  auto weight = [&](const char* name, int r, int k) { return gaussian(name, r, k, 1.0 / std::sqrt(static_cast<double>(r))); };
  auto zeros = [&](const char* name, int r, int k) { return store.add(name, Mat::Zero(r, k)); };
  auto ones = [&](const char* name, int r, int k) { return store.add(name, Mat::Ones(r, k)); };
  const int d = c.width;
  img_w = weight("cap.img.w", c.patch_dim, d);
  img_b = zeros("cap.img.b", 1, d);
  img_pos = gaussian("cap.img.pos", c.num_patches, d, c.init_scale);
  tok_emb = gaussian("cap.tok.emb", c.vocab_size, d, 1.0);
  ln1_g = ones("cap.ln1.g", 1, d);
  ln1_b = zeros("cap.ln1.b", 1, d);
  wq = weight("cap.attn.wq", d, d);
  wk = weight("cap.attn.wk", d, d);
  wv = weight("cap.attn.wv", d, d);
  wo = weight("cap.attn.wo", d, d);
  bo = zeros("cap.attn.bo", 1, d);
  ln2_g = ones("cap.ln2.g", 1, d);
  ln2_b = zeros("cap.ln2.b", 1, d);
  w1 = weight("cap.mlp.w1", d, c.mlp_hidden);
  b1 = zeros("cap.mlp.b1", 1, c.mlp_hidden);
  w2 = weight("cap.mlp.w2", c.mlp_hidden, d);
  b2 = zeros("cap.mlp.b2", 1, d);
  lnf_g = ones("cap.lnf.g", 1, d);
  lnf_b = zeros("cap.lnf.b", 1, d);
  head_w = weight("cap.head.w", d, c.vocab_size);
  head_b = zeros("cap.head.b", 1, c.vocab_size);
}

namespace {

ad::Var P(ad::Tape& t, const CaptionerParams& p, ad::ParamId id) { return t.param(id, p.store.value(id)); }

ad::Var affine(ad::Tape& t, const CaptionerParams& p, ad::Var x, ad::ParamId w, ad::ParamId b) {
  return ad::add_row(t, ad::matmul(t, x, P(t, p, w)), P(t, p, b));
}

}  // namespace

ad::Var captioner_logits(ad::Tape& t, const CaptionerParams& p, const Mat& patches,
                         std::span<const TokenId> prefix) {
  const CaptionerConfig& c = p.config;
  require(patches.rows() == c.num_patches && patches.cols() == c.patch_dim,
          "captioner: patch grid shape mismatch");
  require(!prefix.empty() && static_cast<int>(prefix.size()) < c.max_len,
          "captioner: prefix length out of range");
  std::vector<int> ids(prefix.begin(), prefix.end());
  for (int id : ids) require(id >= 0 && id < c.vocab_size, "captioner: token outside vocabulary");
  // No text positions: the next token depends on the current token, the set
  // of earlier tokens, and the image.
  ad::Var x = ad::gather_rows(t, P(t, p, p.tok_emb), ids);

  // Patch slots: keys from position, values from content.
  ad::Var img = affine(t, p, t.constant(patches), p.img_w, p.img_b);
  ad::Var ipos = P(t, p, p.img_pos);
  ad::Var h = ad::layer_norm(t, x, P(t, p, p.ln1_g), P(t, p, p.ln1_b));
  const std::vector<ad::Var> keys{ad::matmul(t, ipos, P(t, p, p.wk)), ad::matmul(t, h, P(t, p, p.wk))};
  const std::vector<ad::Var> values{ad::matmul(t, img, P(t, p, p.wv)), ad::matmul(t, h, P(t, p, p.wv))};
  ad::Var a = ad::attention(t, ad::matmul(t, h, P(t, p, p.wq)), ad::concat_rows(t, keys), ad::concat_rows(t, values),
                            c.heads, true);
  x = ad::add(t, x, affine(t, p, a, p.wo, p.bo));
  h = ad::layer_norm(t, x, P(t, p, p.ln2_g), P(t, p, p.ln2_b));
  x = ad::add(t, x, affine(t, p, ad::gelu(t, affine(t, p, h, p.w1, p.b1)), p.w2, p.b2));
  h = ad::layer_norm(t, x, P(t, p, p.lnf_g), P(t, p, p.lnf_b));
  return affine(t, p, h, p.head_w, p.head_b);
}

ad::Var lm_loss(ad::Tape& t, const CaptionerParams& p, const SyntheticImage& image, const Caption& caption) {
  const auto& tok = caption.tokens;
  require(tok.size() >= 2 && tok.front() == Vocabulary::kBos && tok.back() == Vocabulary::kEos,
          "lm_loss: caption must start with BOS and end with EOS");
  const std::span<const TokenId> inputs(tok.data(), tok.size() - 1);
  ad::Var logits = captioner_logits(t, p, image.patches, inputs);
  const std::vector<int> targets(tok.begin() + 1, tok.end());
  return ad::cross_entropy(t, logits, targets);
}

double lm_loss(const CaptionerParams& p, const SyntheticImage& image, const Caption& caption) {
  ad::Tape t(false);
  const double v = t.value(lm_loss(t, p, image, caption))(0, 0);
  if (!std::isfinite(v)) throw DivergenceError("lm_loss: non-finite loss");
  return v;
}

Mat teacher_forced_distributions(const CaptionerParams& p, const SyntheticImage& image, const Caption& caption) {
  const auto& tok = caption.tokens;
  require(tok.size() >= 2, "teacher_forced_distributions: caption too short");
  ad::Tape t(false);
  const Mat logits = t.value(captioner_logits(t, p, image.patches, std::span<const TokenId>(tok.data(), tok.size() - 1)));
  return ad::softmax_rows(logits);
}

double mean_token_loss(const CaptionerParams& p, std::span<const ImageTextPair> pairs) {
  double loss = 0.0;
  std::size_t tokens = 0;
  for (const ImageTextPair& pr : pairs) {
    loss += lm_loss(p, pr.image, pr.caption);
    tokens += pr.caption.tokens.size() - 1;
  }
  return tokens ? loss / static_cast<double>(tokens) : 0.0;
}

FinetuneResult finetune(const CaptionerParams& init, std::span<const ImageTextPair> labeled,
                        const FinetuneOptions& opts) {
  require(!labeled.empty(), "finetune: labeled set is empty");
  require(opts.batch_size >= 1, "finetune: batch_size must be positive");
  FinetuneResult out{init, {}};
  CaptionerParams& p = out.params;
  Adam adam(p.store, {.lr = opts.lr});
  std::vector<std::size_t> order(labeled.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(opts.seed, 0x66696e65ULL));
  std::vector<ad::ParamId> frozen;
  if (opts.freeze_attention) frozen = {p.img_pos, p.wq, p.wk};

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opts.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opts.batch_size));
      ad::GradStore grads(p.store.size());
      for (std::size_t k = start; k < end; ++k) {
        const ImageTextPair& pr = labeled[order[k]];
        ad::Tape t;
        ad::Var loss = lm_loss(t, p, pr.image, pr.caption);
        if (!std::isfinite(t.value(loss)(0, 0)))
          throw DivergenceError("finetune: non-finite loss at epoch " + std::to_string(epoch));
        t.backward(loss);
        t.collect_param_grads(grads);
      }
      for (ad::ParamId id : frozen) grads.erase(id);
      grads.scale(1.0 / static_cast<double>(end - start));
      adam.step(p.store, grads);
    }
    out.epoch_token_loss.push_back(mean_token_loss(p, labeled));
    spdlog::debug("captioner epoch {} token loss {:.4f}", epoch, out.epoch_token_loss.back());
  }
  return out;
}

CorpusSplit generic_domain(const CorpusSpec& spec, std::uint64_t seed) {
  CorpusSpec g = spec;
  g.labeled_ratio = 1.0;
  g.num_test_identities = 2;
  return generate_corpus(g, derive_seed(seed, 0x67656e65726963ULL));
}

CaptionerParams pretrain_generic(const CaptionerParams& init, const CorpusSpec& spec, const PretrainOptions& opts) {
  const CorpusSplit generic = generic_domain(spec, opts.seed);
  FinetuneOptions fo;
  fo.epochs = opts.epochs;
  fo.lr = opts.lr;
  fo.batch_size = opts.batch_size;
  fo.seed = derive_seed(opts.seed, 0x707265ULL);
  return finetune(init, generic.labeled, fo).params;
}

namespace {

TokenId pick_token(const RowVec& logits, const Vocabulary& vocab, const Decoder& decoder, Rng& rng) {
  RowVec masked = logits;
  for (TokenId s : {Vocabulary::kPad, Vocabulary::kBos, Vocabulary::kMask})
    masked(s) = -std::numeric_limits<double>::infinity();
  (void)vocab;
  if (decoder.kind == DecoderKind::greedy) {
    Eigen::Index best = 0;
    masked.maxCoeff(&best);
    return static_cast<TokenId>(best);
  }
  const Mat probs = ad::softmax_rows(masked);
  std::vector<int> idx(static_cast<std::size_t>(probs.cols()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return probs(0, a) > probs(0, b); });
  // Smallest prefix of the sorted distribution with mass >= top_p.
  double mass = 0.0;
  std::size_t keep = 0;
  while (keep < idx.size() && mass < decoder.top_p) mass += probs(0, idx[keep++]);
  keep = std::max<std::size_t>(keep, 1);
  std::uniform_real_distribution<double> u(0.0, mass);
  const double r = u(rng);
  double acc = 0.0;
  for (std::size_t k = 0; k < keep; ++k) {
    acc += probs(0, idx[k]);
    if (r < acc) return idx[k];
  }
  return idx[keep - 1];
}

}  // namespace

Caption generate_pseudo_text(const CaptionerParams& p, const SyntheticImage& image, const Vocabulary& vocab,
                             const Decoder& decoder, std::uint64_t seed, const AttributeIdentity* truth) {
  require(decoder.kind == DecoderKind::greedy || (decoder.top_p > 0.0 && decoder.top_p <= 1.0),
          "generate_pseudo_text: top_p must lie in (0, 1]");
  Rng rng(seed);
  Caption c;
  c.provenance = Provenance::pseudo;
  c.tokens.push_back(Vocabulary::kBos);
  const int max_len = p.config.max_len;
  while (static_cast<int>(c.tokens.size()) < max_len) {
    ad::Tape t(false);
    const Mat logits = t.value(captioner_logits(t, p, image.patches, c.tokens));
    const TokenId next = pick_token(logits.row(logits.rows() - 1), vocab, decoder, rng);
    c.tokens.push_back(next);
    if (next == Vocabulary::kEos) break;
  }
  if (c.tokens.back() != Vocabulary::kEos) {
    c.truncated = true;
    c.tokens.back() = Vocabulary::kEos;
  }
  if (truth) c.oracle_corruption_rate = contradiction_rate(c, vocab, *truth);
  return c;
}

std::vector<ImageTextPair> generate_pseudo_set(const CaptionerParams& p, const CorpusSplit& split,
                                               const Decoder& decoder, std::uint64_t seed,
                                               int texts_per_image, Exec exec) {
  require(texts_per_image >= 1, "generate_pseudo_set: texts_per_image must be positive");
  const Vocabulary vocab = split.vocab();
  const int n = static_cast<int>(split.unlabeled.size());
  std::vector<ImageTextPair> out(static_cast<std::size_t>(n) * static_cast<std::size_t>(texts_per_image));
#pragma omp parallel for schedule(dynamic) if (exec == Exec::parallel)
  for (int i = 0; i < n; ++i) {
    const SyntheticImage& img = split.unlabeled[static_cast<std::size_t>(i)];
    for (int k = 0; k < texts_per_image; ++k) {
      const std::size_t slot = static_cast<std::size_t>(i) * static_cast<std::size_t>(texts_per_image) +
                               static_cast<std::size_t>(k);
      out[slot].image = img;
      out[slot].caption = generate_pseudo_text(p, img, vocab, decoder, derive_seed(seed, img.image_id, k),
                                               &split.identity(img.identity_id));
    }
  }
  const auto truncated = std::count_if(out.begin(), out.end(), [](const ImageTextPair& pr) { return pr.caption.truncated; });
  if (truncated) spdlog::info("pseudo-text generation: {} of {} captions truncated at max length", truncated, out.size());
  return out;
}

void write_pseudo_set(const std::filesystem::path& path, std::span<const ImageTextPair> pairs) {
  std::ofstream os(path);
  if (!os) throw StageError("cannot write pseudo set " + path.string());
  for (const ImageTextPair& pr : pairs)
    os << nlohmann::json{{"image_id", pr.image.image_id}, {"caption", caption_to_json(pr.caption)}}.dump() << '\n';
}

std::vector<ImageTextPair> read_pseudo_set(const std::filesystem::path& path, const CorpusSplit& split) {
  std::ifstream is(path);
  if (!is) throw StageError("cannot read pseudo set " + path.string());
  std::unordered_map<int, const SyntheticImage*> by_id;
  for (const SyntheticImage& img : split.unlabeled) by_id[img.image_id] = &img;
  std::vector<ImageTextPair> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    const auto it = by_id.find(j.at("image_id").get<int>());
    if (it == by_id.end()) throw StageError("pseudo set references an image outside the unlabeled split");
    out.push_back({*it->second, caption_from_json(j.at("caption"))});
  }
  return out;
}

}  // namespace tbps
