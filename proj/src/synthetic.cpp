#include "compcap/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

namespace compcap {

namespace {

constexpr std::size_t kSizeChannel = 0;
constexpr std::size_t kColorChannel = 3;
constexpr std::size_t kBeakChannel = 9;
constexpr std::size_t kWingChannel = 11;
constexpr std::size_t kMaskChannel = 14;
constexpr std::size_t kBiasChannel = 15;
constexpr std::size_t kMinFeatures = 16;

std::string capitalize_mention(int animal) { return "Animal " + std::to_string(animal); }

template <std::size_t N>
int index_in(const std::array<std::string_view, N>& names, const std::string& token) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == token) return static_cast<int>(i);
  }
  return -1;
}

int animal_of(const std::string& token) {
  if (token == "<animal1>") return 1;
  if (token == "<animal2>") return 2;
  return 0;
}

int sign(int v) { return (v > 0) - (v < 0); }

// Claim with `subject` as the grammatical subject, rewritten from <animal1>'s
// point of view.
Claim oriented(Attribute a, int subject, int subject_value, int object_value) {
  return subject == 1 ? Claim{a, subject_value, object_value} : Claim{a, object_value, subject_value};
}

std::optional<Claim> parse_sentence(const std::vector<std::string>& s) {
  auto is = [&](std::size_t i, std::string_view w) { return i < s.size() && s[i] == w; };
  if (s.empty()) return std::nullopt;
  const int subject = animal_of(s[0]);
  if (subject == 0) return std::nullopt;

  if (s.size() == 5 && is(1, "is") && is(3, "than") && animal_of(s[4]) == 3 - subject) {
    int rel = s[2] == "larger" ? 1 : s[2] == "smaller" ? -1 : 0;
    if (rel != 0) return oriented(Attribute::size, subject, rel, -rel);
  }
  if (s.size() == 8 && is(1, "is") && is(3, ",") && is(4, "while") &&
      animal_of(s[5]) == 3 - subject && is(6, "is")) {
    int c1 = index_in(kColors, s[2]);
    int c2 = index_in(kColors, s[7]);
    if (c1 >= 0 && c2 >= 0) return oriented(Attribute::color, subject, c1, c2);
  }
  if (s.size() == 7 && is(1, "has") && is(2, "a") && is(4, "beak") && is(5, "than") &&
      animal_of(s[6]) == 3 - subject) {
    int rel = s[3] == "longer" ? 1 : s[3] == "shorter" ? -1 : 0;
    if (rel != 0) return oriented(Attribute::beak, subject, rel, -rel);
  }
  if (s.size() == 10 && is(1, "has") && is(3, "wings") && is(4, ",") && is(5, "while") &&
      animal_of(s[6]) == 3 - subject && is(7, "has") && is(9, "wings")) {
    int w1 = index_in(kWings, s[2]);
    int w2 = index_in(kWings, s[8]);
    if (w1 >= 0 && w2 >= 0) return oriented(Attribute::wings, subject, w1, w2);
  }
  return std::nullopt;
}

}  // namespace

const char* attribute_name(Attribute a) {
  switch (a) {
    case Attribute::size:
      return "size";
    case Attribute::color:
      return "color";
    case Attribute::beak:
      return "beak";
    case Attribute::wings:
      return "wings";
  }
  return "?";
}

int BirdAttributes::get(Attribute a) const {
  switch (a) {
    case Attribute::size:
      return size;
    case Attribute::color:
      return color;
    case Attribute::beak:
      return beak;
    case Attribute::wings:
      return wings;
  }
  return 0;
}

std::vector<Attribute> differing_attributes(const BirdAttributes& a, const BirdAttributes& b) {
  std::vector<Attribute> out;
  for (Attribute attr : kAttributes) {
    if (a.get(attr) != b.get(attr)) out.push_back(attr);
  }
  return out;
}

std::string synthetic_caption(const BirdAttributes& first, const BirdAttributes& second) {
  const std::string a1 = capitalize_mention(1);
  const std::string a2 = capitalize_mention(2);
  std::vector<std::string> sentences;
  for (Attribute attr : differing_attributes(first, second)) {
    switch (attr) {
      case Attribute::size:
        sentences.push_back(a1 + " is " + (first.size > second.size ? "larger" : "smaller") +
                            " than " + a2 + ".");
        break;
      case Attribute::color:
        sentences.push_back(a1 + " is " + std::string(kColors[first.color]) + ", while " + a2 +
                            " is " + std::string(kColors[second.color]) + ".");
        break;
      case Attribute::beak:
        sentences.push_back(a1 + " has a " + (first.beak > second.beak ? "longer" : "shorter") +
                            " beak than " + a2 + ".");
        break;
      case Attribute::wings:
        sentences.push_back(a1 + " has " + std::string(kWings[first.wings]) + " wings, while " +
                            a2 + " has " + std::string(kWings[second.wings]) + " wings.");
        break;
    }
  }
  if (sentences.empty()) return std::string(kSameCaption);
  std::string text;
  for (const auto& s : sentences) {
    if (!text.empty()) text += ' ';
    text += s;
  }
  return text;
}

ParsedCaption parse_caption(std::string_view text) {
  ParsedCaption out;
  std::vector<std::string> tokens;
  if (text.find_first_not_of(" \t\r\n") != std::string_view::npos) {
    tokens = preprocess(text, 0);
  }
  std::vector<std::string> sentence;
  auto flush = [&] {
    if (sentence.empty()) return;
    static const std::vector<std::string> same{"both", "animals", "appear", "exactly", "the", "same"};
    if (sentence == same) {
      out.states_identical = true;
    } else if (auto claim = parse_sentence(sentence)) {
      out.claims.push_back(*claim);
    } else {
      ++out.unparsed_sentences;
    }
    sentence.clear();
  };
  for (auto& t : tokens) {
    if (t == "." || t == "!" || t == "?") {
      flush();
    } else {
      sentence.push_back(std::move(t));
    }
  }
  flush();
  return out;
}

bool claim_holds(const Claim& claim, const BirdAttributes& a1, const BirdAttributes& a2) {
  const int v1 = a1.get(claim.attribute);
  const int v2 = a2.get(claim.attribute);
  if (claim.attribute == Attribute::size || claim.attribute == Attribute::beak) {
    return sign(v1 - v2) == claim.first && claim.first != 0;
  }
  return v1 == claim.first && v2 == claim.second;
}

const SyntheticImage& SyntheticWorld::image(const std::string& image_id) const {
  auto it = by_id_.find(image_id);
  if (it == by_id_.end()) {
    throw std::out_of_range("synthetic world has no image '" + image_id + "'");
  }
  return images[it->second];
}

FeatureGrid render_grid(const std::string& image_id, const BirdAttributes& attributes,
                        std::size_t d, std::size_t f, double noise, Rng& rng) {
  FeatureGrid grid{image_id, d, f, std::vector<double>(d * d * f, 0.0)};
  const std::size_t extent = std::max<std::size_t>(1, (d * (attributes.size + 2) + 3) / 4);
  const std::size_t wing_row = std::min<std::size_t>(1, extent - 1);
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      double* cell = grid.values.data() + (r * d + c) * f;
      cell[kBiasChannel] = 1.0;
      if (r >= extent || c >= extent) continue;
      cell[kMaskChannel] = 1.0;
      cell[kSizeChannel + static_cast<std::size_t>(attributes.size)] = 1.0;
      cell[kColorChannel + static_cast<std::size_t>(attributes.color)] = 1.0;
      if (r == 0 && c == 0) cell[kBeakChannel + static_cast<std::size_t>(attributes.beak)] = 1.0;
      if (r == wing_row) cell[kWingChannel + static_cast<std::size_t>(attributes.wings)] = 1.0;
    }
  }
  for (double& v : grid.values) {
    v = static_cast<double>(static_cast<float>(v + noise * rng.normal()));
  }
  return grid;
}

SyntheticWorld make_world(const WorldConfig& config) {
  if (config.d < 1 || config.f < kMinFeatures) {
    throw std::invalid_argument("make_world: need d >= 1 and f >= " + std::to_string(kMinFeatures));
  }
  if (config.images_per_species < 1 || config.raters < 1) {
    throw std::invalid_argument("make_world: images_per_species and raters must be at least 1");
  }
  std::vector<TaxonRecord> records;
  std::vector<std::pair<TaxonId, BirdAttributes>> species;
  records.push_back({TaxonId{"aves"}, std::nullopt, 4, "birds"});
  int genus_index = 0;
  for (int o = 0; o < 3; ++o) {
    TaxonId order{"order-" + std::to_string(o)};
    records.push_back({order, TaxonId{"aves"}, 3, std::string(kSizes[o]) + " birds"});
    for (int fa = 0; fa < 2; ++fa) {
      const int wings = (o + fa) % 3;
      const std::string fpath = std::to_string(o) + "-" + std::to_string(fa);
      TaxonId family{"family-" + fpath};
      records.push_back({family, order, 2, std::string(kWings[wings]) + "-winged"});
      for (int g = 0; g < 2; ++g, ++genus_index) {
        const std::string gpath = fpath + "-" + std::to_string(g);
        TaxonId genus{"genus-" + gpath};
        records.push_back({genus, family, 1, std::string(kBeaks[g]) + "-billed"});
        for (int s = 0; s < 2; ++s) {
          const int color = (2 * genus_index + s) % 6;
          TaxonId sp{"species-" + gpath + "-" + std::to_string(s)};
          records.push_back({sp, genus, 0, std::string(kColors[color]) + " bird"});
          species.push_back({sp, BirdAttributes{o, color, g, wings}});
        }
      }
    }
  }

  SyntheticWorld world{Taxonomy(std::move(records))};
  Rng rng(derive_seed(config.seed, "synthetic-world"));
  for (const auto& [sp, attrs] : species) {
    for (std::size_t k = 0; k < config.images_per_species; ++k) {
      std::string id = "img-" + sp.value.substr(8) + "-" + std::to_string(k);
      world.by_id_.emplace(id, world.images.size());
      world.images.push_back({id, sp, attrs});
      world.grids.push_back(render_grid(id, attrs, config.d, config.f, config.noise, rng));
      world.embeddings.push_back({id, sp, world.grids.back().mean_pooled()});
      const bool unclear = rng.uniform01() < config.unclear_fraction;
      for (std::size_t r = 0; r < config.raters; ++r) {
        const bool negative = unclear && r < 2;
        world.ratings.push_back({id, "r" + std::to_string(r), true, true, !negative, true});
      }
    }
  }
  return world;
}

std::vector<Paragraph> annotate_pairs(const SyntheticWorld& world, std::span<const ImagePair> pairs,
                                      std::size_t raters) {
  std::vector<Paragraph> out;
  for (const auto& pair : pairs) {
    const std::string text =
        synthetic_caption(world.image(pair.i1).attributes, world.image(pair.i2).attributes);
    for (std::size_t r = 0; r < raters; ++r) {
      out.push_back(make_paragraph(pair.pair_id, "r" + std::to_string(r), text));
    }
  }
  return out;
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusConfig& config) {
  SyntheticCorpus corpus{make_world(config.world), {}};
  const SyntheticWorld& world = corpus.world;
  const Observations observations = observations_from(world.embeddings);
  const QuantizedIndex index = QuantizedIndex::build(world.embeddings);
  const auto& leaves = world.taxonomy.leaves();
  Rng rng(derive_seed(config.world.seed, "synthetic-pairs"));

  std::set<std::pair<std::string, std::string>> seen;
  std::vector<ImagePair> pairs;
  for (std::size_t i = 0; i < config.n_pairs; ++i) {
    const int stratum = static_cast<int>(i % 6);
    std::optional<ImagePair> chosen;
    for (int attempt = 0; attempt < 100 && !chosen; ++attempt) {
      const TaxonId& c = leaves[rng.uniform_index(leaves.size())];
      const auto& imgs = observations.at(c);
      Pivot pivot{c, imgs[rng.uniform_index(imgs.size())]};
      BranchResult branch;
      if (stratum == 0) {
        branch = branch_visual(pivot, index, 1);
      } else {
        BranchBudget budget{0, {{stratum, 1}}};
        branch = branch_taxonomic(pivot, world.taxonomy, observations, budget, rng);
      }
      if (branch.pairs.empty()) continue;
      ImagePair& p = branch.pairs.front();
      if (seen.insert({p.i1, p.i2}).second) chosen = p;
    }
    if (!chosen) {
      throw std::runtime_error("generate_synthetic_corpus: could not draw a new pair for stratum " +
                               std::to_string(stratum));
    }
    char id[16];
    std::snprintf(id, sizeof id, "s%04zu", i);
    chosen->pair_id = id;
    pairs.push_back(*chosen);
  }
  corpus.records = join_records(pairs, annotate_pairs(world, pairs, config.references));
  return corpus;
}

}  // namespace compcap
