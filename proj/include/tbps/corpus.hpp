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

// Synthetic attribute-person corpus: identities are attribute tuples, images
// are patch grids with one designated patch per attribute, captions are token
// sequences over a closed vocabulary.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "tbps/common.hpp"

namespace tbps {

struct CorpusSpec {
  int num_train_identities = 300;
  int images_per_identity = 4;
  int captions_per_image = 2;
  int num_test_identities = 100;
  int test_images_per_identity = 2;
  double labeled_ratio = 0.01;
  int num_attributes = 6;
  int values_per_attribute = 8;
  int num_patches = 16;
  int patch_dim = 16;
  double sigma_img = 0.3;

  int max_caption_length() const { return 2 * num_attributes + 4; }
  void validate() const;
};

void to_json(nlohmann::json& j, const CorpusSpec& s);
void from_json(const nlohmann::json& j, CorpusSpec& s);

using TokenId = int;

// Token layout: PAD, BOS, EOS, MASK, then A*V attribute-value tokens, then two
// connective tokens per attribute.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kMask = 3;
  static constexpr int kConnectivesPerAttribute = 2;

  Vocabulary() = default;
  Vocabulary(int num_attributes, int values_per_attribute)
      : attrs_(num_attributes), values_(values_per_attribute) {}
  explicit Vocabulary(const CorpusSpec& s) : Vocabulary(s.num_attributes, s.values_per_attribute) {}

  int size() const { return 4 + attrs_ * values_ + attrs_ * kConnectivesPerAttribute; }
  int num_attributes() const { return attrs_; }
  int values_per_attribute() const { return values_; }

  TokenId value_token(int attribute, int value) const { return 4 + attribute * values_ + value; }
  TokenId connective_token(int attribute, int variant) const {
    return 4 + attrs_ * values_ + attribute * kConnectivesPerAttribute + variant;
  }

  bool in_vocab(TokenId t) const { return t >= 0 && t < size(); }
  bool is_special(TokenId t) const { return t >= 0 && t < 4; }
  bool is_value(TokenId t) const { return t >= 4 && t < 4 + attrs_ * values_; }
  bool is_connective(TokenId t) const { return t >= 4 + attrs_ * values_ && t < size(); }
  int attribute_of(TokenId value_tok) const { return (value_tok - 4) / values_; }
  int value_of(TokenId value_tok) const { return (value_tok - 4) % values_; }

 private:
  int attrs_ = 6;
  int values_ = 8;
};

struct AttributeIdentity {
  int id = 0;
  std::vector<int> attrs;
};

struct SyntheticImage {
  int image_id = 0;
  int identity_id = 0;
  Mat patches;  // num_patches x patch_dim
  std::uint64_t observation_seed = 0;
};

enum class Provenance { human, pseudo };

struct Caption {
  std::vector<TokenId> tokens;
  Provenance provenance = Provenance::human;
  double oracle_corruption_rate = 0.0;
  bool truncated = false;
};

struct ImageTextPair {
  SyntheticImage image;
  Caption caption;
};

// One retrieval training pair; sample ids are unique within a training set.
struct PairedSample {
  int sample_id = 0;
  SyntheticImage image;
  Caption caption;

  bool is_pseudo() const { return caption.provenance == Provenance::pseudo; }
};

struct TestQuery {
  int query_id = 0;
  int identity_id = 0;
  Caption caption;
};

struct CorpusSplit {
  CorpusSpec spec;
  std::uint64_t seed = 0;
  std::vector<AttributeIdentity> identities;  // indexed by identity id
  std::vector<ImageTextPair> labeled;
  std::vector<SyntheticImage> unlabeled;
  std::vector<SyntheticImage> test_gallery;
  std::vector<TestQuery> test_queries;

  const AttributeIdentity& identity(int id) const { return identities.at(static_cast<std::size_t>(id)); }
  Vocabulary vocab() const { return Vocabulary(spec); }
};

// Patch index that renders attribute a.
int attribute_patch(const CorpusSpec& spec, int attribute);

// Value-specific base patterns, one patch_dim row per (attribute, value).
Mat value_patterns(const CorpusSpec& spec, std::uint64_t seed);

SyntheticImage render_image(const CorpusSpec& spec, const Mat& patterns,
                            const AttributeIdentity& who, int image_id,
                            std::uint64_t observation_seed, double sigma);

Caption human_caption(const CorpusSpec& spec, const AttributeIdentity& who, Rng& rng);

CorpusSplit generate_corpus(const CorpusSpec& spec, std::uint64_t seed);

// Replaces each attribute-value token, with probability rate, by a uniformly
// drawn different value of the same attribute.
Caption corrupt_caption(const Caption& c, const Vocabulary& vocab, double rate, std::uint64_t seed);

// Fraction of attribute-value tokens that contradict the identity; 0 when the
// caption carries no value tokens.
double contradiction_rate(const Caption& c, const Vocabulary& vocab, const AttributeIdentity& who);

// Number of tokens that are neither special nor padding.
int content_token_count(const Caption& c, const Vocabulary& vocab);

// ---- persistence -----------------------------------------------------------
// <dir>/manifest.jsonl: header line (spec, seed, blob name) followed by one
// record per identity, image, and caption. <dir>/images.bin holds every
// image's patches as little-endian f64, referenced by offset.

void write_corpus(const std::filesystem::path& dir, const CorpusSplit& split);
CorpusSplit read_corpus(const std::filesystem::path& dir);

nlohmann::json caption_to_json(const Caption& c);
Caption caption_from_json(const nlohmann::json& j);

}  // namespace tbps
