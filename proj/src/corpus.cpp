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

#include "tbps/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace tbps {

void CorpusSpec::validate() const {
  if (!(labeled_ratio > 0.0 && labeled_ratio <= 1.0))
    throw ContractError("corpus: labeled_ratio must be in (0, 1]");
  if (num_train_identities < 2 || num_test_identities < 2)
    throw ContractError("corpus: need at least 2 identities per split");
  if (images_per_identity < 1 || captions_per_image < 1 || test_images_per_identity < 1)
    throw ContractError("corpus: per-identity counts must be positive");
  if (num_attributes < 1 || values_per_attribute < 2 || patch_dim < 1)
    throw ContractError("corpus: attribute schema must be positive");
  if (num_patches < num_attributes)
    throw ContractError("corpus: need one patch per attribute");
  if (sigma_img < 0.0) throw ContractError("corpus: sigma_img must be non-negative");
  const double combos = std::pow(static_cast<double>(values_per_attribute), num_attributes);
  if (combos < static_cast<double>(num_train_identities + num_test_identities))
    throw ContractError("corpus: attribute space too small for distinct identities");
}

void to_json(nlohmann::json& j, const CorpusSpec& s) {
  j = nlohmann::json{{"num_train_identities", s.num_train_identities},
                     {"images_per_identity", s.images_per_identity},
                     {"captions_per_image", s.captions_per_image},
                     {"num_test_identities", s.num_test_identities},
                     {"test_images_per_identity", s.test_images_per_identity},
                     {"labeled_ratio", s.labeled_ratio},
                     {"num_attributes", s.num_attributes},
                     {"values_per_attribute", s.values_per_attribute},
                     {"num_patches", s.num_patches},
                     {"patch_dim", s.patch_dim},
                     {"sigma_img", s.sigma_img}};
}

void from_json(const nlohmann::json& j, CorpusSpec& s) {
  CorpusSpec d;
  s.num_train_identities = j.value("num_train_identities", d.num_train_identities);
  s.images_per_identity = j.value("images_per_identity", d.images_per_identity);
  s.captions_per_image = j.value("captions_per_image", d.captions_per_image);
  s.num_test_identities = j.value("num_test_identities", d.num_test_identities);
  s.test_images_per_identity = j.value("test_images_per_identity", d.test_images_per_identity);
  s.labeled_ratio = j.value("labeled_ratio", d.labeled_ratio);
  s.num_attributes = j.value("num_attributes", d.num_attributes);
  s.values_per_attribute = j.value("values_per_attribute", d.values_per_attribute);
  s.num_patches = j.value("num_patches", d.num_patches);
  s.patch_dim = j.value("patch_dim", d.patch_dim);
  s.sigma_img = j.value("sigma_img", d.sigma_img);
}

int attribute_patch(const CorpusSpec& spec, int attribute) {
  return attribute * spec.num_patches / spec.num_attributes;
}

Mat value_patterns(const CorpusSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x7061747465726eULL));
  std::normal_distribution<double> n01(0.0, 1.0);
  Mat p(spec.num_attributes * spec.values_per_attribute, spec.patch_dim);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = n01(rng);
  return p;
}

SyntheticImage render_image(const CorpusSpec& spec, const Mat& patterns,
                            const AttributeIdentity& who, int image_id,
                            std::uint64_t observation_seed, double sigma) {
  SyntheticImage img;
  img.image_id = image_id;
  img.identity_id = who.id;
  img.observation_seed = observation_seed;
  img.patches = Mat::Zero(spec.num_patches, spec.patch_dim);
  for (int a = 0; a < spec.num_attributes; ++a)
    img.patches.row(attribute_patch(spec, a)) =
        patterns.row(a * spec.values_per_attribute + who.attrs[static_cast<std::size_t>(a)]);
  if (sigma > 0.0) {
    Rng rng(observation_seed);
    std::normal_distribution<double> noise(0.0, sigma);
    for (Eigen::Index i = 0; i < img.patches.size(); ++i) img.patches.data()[i] += noise(rng);
  }
  return img;
}

Caption human_caption(const CorpusSpec& spec, const AttributeIdentity& who, Rng& rng) {
  const Vocabulary vocab(spec);
  std::vector<int> order(static_cast<std::size_t>(spec.num_attributes));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::bernoulli_distribution omit(0.5);
  if (spec.num_attributes > 1 && omit(rng)) order.pop_back();
  std::uniform_int_distribution<int> variant(0, Vocabulary::kConnectivesPerAttribute - 1);

  Caption c;
  c.provenance = Provenance::human;
  c.tokens.push_back(Vocabulary::kBos);
  for (int a : order) {
    c.tokens.push_back(vocab.connective_token(a, variant(rng)));
    c.tokens.push_back(vocab.value_token(a, who.attrs[static_cast<std::size_t>(a)]));
  }
  c.tokens.push_back(Vocabulary::kEos);
  return c;
}

CorpusSplit generate_corpus(const CorpusSpec& spec, std::uint64_t seed) {
  spec.validate();
  CorpusSplit split;
  split.spec = spec;
  split.seed = seed;

  // Distinct attribute tuples, drawn by rejection.
  Rng id_rng(derive_seed(seed, 1));
  std::uniform_int_distribution<int> value(0, spec.values_per_attribute - 1);
  std::set<std::vector<int>> seen;
  const int total_ids = spec.num_train_identities + spec.num_test_identities;
  while (static_cast<int>(split.identities.size()) < total_ids) {
    std::vector<int> attrs(static_cast<std::size_t>(spec.num_attributes));
    for (int& v : attrs) v = value(id_rng);
    if (!seen.insert(attrs).second) continue;
    split.identities.push_back({static_cast<int>(split.identities.size()), std::move(attrs)});
  }

  const Mat patterns = value_patterns(spec, seed);
  Rng cap_rng(derive_seed(seed, 2));
  int next_image = 0;

  std::vector<SyntheticImage> train_images;
  for (int id = 0; id < spec.num_train_identities; ++id)
    for (int k = 0; k < spec.images_per_identity; ++k) {
      const int image_id = next_image++;
      train_images.push_back(render_image(spec, patterns, split.identities[id], image_id,
                                          derive_seed(seed, 3, image_id), spec.sigma_img));
    }

  const int n_images = static_cast<int>(train_images.size());
  const int n_labeled = std::clamp(
      static_cast<int>(std::floor(spec.labeled_ratio * n_images + 1e-9)), 1, n_images);
  std::vector<int> order(static_cast<std::size_t>(n_images));
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(seed, 4));
  std::shuffle(order.begin(), order.end(), split_rng);
  std::vector<char> is_labeled(static_cast<std::size_t>(n_images), 0);
  for (int i = 0; i < n_labeled; ++i) is_labeled[static_cast<std::size_t>(order[i])] = 1;

  for (int i = 0; i < n_images; ++i) {
    SyntheticImage& img = train_images[static_cast<std::size_t>(i)];
    if (is_labeled[static_cast<std::size_t>(i)]) {
      Caption c = human_caption(spec, split.identity(img.identity_id), cap_rng);
      split.labeled.push_back({std::move(img), std::move(c)});
    } else {
      split.unlabeled.push_back(std::move(img));
    }
  }

  int next_query = 0;
  for (int t = 0; t < spec.num_test_identities; ++t) {
    const AttributeIdentity& who = split.identities[static_cast<std::size_t>(spec.num_train_identities + t)];
    for (int k = 0; k < spec.test_images_per_identity; ++k) {
      const int image_id = next_image++;
      split.test_gallery.push_back(render_image(spec, patterns, who, image_id,
                                                derive_seed(seed, 3, image_id), spec.sigma_img));
      for (int c = 0; c < spec.captions_per_image; ++c)
        split.test_queries.push_back({next_query++, who.id, human_caption(spec, who, cap_rng)});
    }
  }
  return split;
}

Caption corrupt_caption(const Caption& c, const Vocabulary& vocab, double rate, std::uint64_t seed) {
  require(c.provenance == Provenance::human, "corrupt_caption: expects a human caption");
  require(rate >= 0.0 && rate <= 1.0, "corrupt_caption: rate must be in [0, 1]");
  Rng rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> other(1, vocab.values_per_attribute() - 1);
  Caption out = c;
  out.provenance = Provenance::pseudo;
  out.oracle_corruption_rate = rate;
  for (TokenId& t : out.tokens) {
    if (!vocab.is_value(t)) continue;
    if (u01(rng) >= rate) continue;
    const int a = vocab.attribute_of(t);
    const int v = (vocab.value_of(t) + other(rng)) % vocab.values_per_attribute();
    t = vocab.value_token(a, v);
  }
  return out;
}

double contradiction_rate(const Caption& c, const Vocabulary& vocab, const AttributeIdentity& who) {
  int values = 0, wrong = 0;
  for (TokenId t : c.tokens) {
    if (!vocab.is_value(t)) continue;
    ++values;
    if (who.attrs[static_cast<std::size_t>(vocab.attribute_of(t))] != vocab.value_of(t)) ++wrong;
  }
  return values ? static_cast<double>(wrong) / values : 0.0;
}

int content_token_count(const Caption& c, const Vocabulary& vocab) {
  return static_cast<int>(std::count_if(c.tokens.begin(), c.tokens.end(),
                                        [&](TokenId t) { return !vocab.is_special(t); }));
}

// ---- persistence -----------------------------------------------------------

namespace {

const char* provenance_name(Provenance p) { return p == Provenance::human ? "human" : "pseudo"; }

struct BlobWriter {
  std::ofstream os;
  std::uint64_t offset = 0;  // in doubles
  std::uint64_t put(const Mat& m) {
    const std::uint64_t at = offset;
    os.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(sizeof(double) * m.size()));
    offset += static_cast<std::uint64_t>(m.size());
    return at;
  }
};

nlohmann::json image_record(const SyntheticImage& img, const char* split, std::uint64_t offset) {
  return {{"kind", "image"},
          {"split", split},
          {"image_id", img.image_id},
          {"identity", img.identity_id},
          {"observation_seed", img.observation_seed},
          {"offset", offset},
          {"rows", img.patches.rows()},
          {"cols", img.patches.cols()}};
}

}  // namespace

nlohmann::json caption_to_json(const Caption& c) {
  return {{"tokens", c.tokens},
          {"provenance", provenance_name(c.provenance)},
          {"oracle_corruption_rate", c.oracle_corruption_rate},
          {"truncated", c.truncated}};
}

Caption caption_from_json(const nlohmann::json& j) {
  Caption c;
  c.tokens = j.at("tokens").get<std::vector<TokenId>>();
  c.provenance = j.at("provenance").get<std::string>() == "human" ? Provenance::human : Provenance::pseudo;
  c.oracle_corruption_rate = j.at("oracle_corruption_rate").get<double>();
  c.truncated = j.value("truncated", false);
  return c;
}

void write_corpus(const std::filesystem::path& dir, const CorpusSplit& split) {
  static_assert(std::endian::native == std::endian::little);
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.jsonl");
  BlobWriter blob{std::ofstream(dir / "images.bin", std::ios::binary)};
  if (!manifest || !blob.os) throw StageError("corpus: cannot write into " + dir.string());

  manifest << nlohmann::json{{"kind", "header"},
                             {"schema", 1},
                             {"spec", split.spec},
                             {"seed", split.seed},
                             {"blob", "images.bin"}}
                  .dump()
           << '\n';
  for (const AttributeIdentity& who : split.identities)
    manifest << nlohmann::json{{"kind", "identity"}, {"id", who.id}, {"attrs", who.attrs}}.dump() << '\n';
  for (const ImageTextPair& p : split.labeled) {
    manifest << image_record(p.image, "labeled", blob.put(p.image.patches)).dump() << '\n';
    nlohmann::json cap = caption_to_json(p.caption);
    cap["kind"] = "caption";
    cap["split"] = "labeled";
    cap["image_id"] = p.image.image_id;
    manifest << cap.dump() << '\n';
  }
  for (const SyntheticImage& img : split.unlabeled)
    manifest << image_record(img, "unlabeled", blob.put(img.patches)).dump() << '\n';
  for (const SyntheticImage& img : split.test_gallery)
    manifest << image_record(img, "gallery", blob.put(img.patches)).dump() << '\n';
  for (const TestQuery& q : split.test_queries) {
    nlohmann::json cap = caption_to_json(q.caption);
    cap["kind"] = "caption";
    cap["split"] = "query";
    cap["query_id"] = q.query_id;
    cap["identity"] = q.identity_id;
    manifest << cap.dump() << '\n';
  }
  if (!manifest || !blob.os) throw StageError("corpus: write failed in " + dir.string());
}

CorpusSplit read_corpus(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw StageError("corpus: missing manifest in " + dir.string());
  std::string line;
  if (!std::getline(manifest, line)) throw StageError("corpus: empty manifest");
  const nlohmann::json header = nlohmann::json::parse(line);
  if (header.at("kind") != "header") throw StageError("corpus: manifest lacks header");

  CorpusSplit split;
  split.spec = header.at("spec").get<CorpusSpec>();
  split.seed = header.at("seed").get<std::uint64_t>();

  std::ifstream blob(dir / header.at("blob").get<std::string>(), std::ios::binary);
  if (!blob) throw StageError("corpus: missing image blob");
  auto load = [&](const nlohmann::json& rec) {
    SyntheticImage img;
    img.image_id = rec.at("image_id");
    img.identity_id = rec.at("identity");
    img.observation_seed = rec.at("observation_seed");
    img.patches.resize(rec.at("rows").get<int>(), rec.at("cols").get<int>());
    blob.seekg(static_cast<std::streamoff>(rec.at("offset").get<std::uint64_t>() * sizeof(double)));
    blob.read(reinterpret_cast<char*>(img.patches.data()),
              static_cast<std::streamsize>(sizeof(double) * img.patches.size()));
    if (!blob) throw StageError("corpus: truncated image blob");
    return img;
  };

  std::optional<SyntheticImage> pending_labeled;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const nlohmann::json rec = nlohmann::json::parse(line);
    const std::string kind = rec.at("kind");
    if (kind == "identity") {
      split.identities.push_back({rec.at("id"), rec.at("attrs").get<std::vector<int>>()});
    } else if (kind == "image") {
      const std::string which = rec.at("split");
      if (which == "labeled") pending_labeled = load(rec);
      else if (which == "unlabeled") split.unlabeled.push_back(load(rec));
      else split.test_gallery.push_back(load(rec));
    } else if (kind == "caption") {
      if (rec.at("split") == "labeled") {
        if (!pending_labeled || pending_labeled->image_id != rec.at("image_id").get<int>())
          throw StageError("corpus: labeled caption without its image");
        split.labeled.push_back({std::move(*pending_labeled), caption_from_json(rec)});
        pending_labeled.reset();
      } else {
        split.test_queries.push_back({rec.at("query_id"), rec.at("identity"), caption_from_json(rec)});
      }
    } else {
      throw StageError("corpus: unknown record kind " + kind);
    }
  }
  return split;
}

}  // namespace tbps
