#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "compcap/corpus.hpp"
#include "compcap/sampler.hpp"
#include "compcap/taxonomy.hpp"
#include "compcap/visual_index.hpp"

namespace compcap {

// Toy birds described by four attributes. Captions compare exactly the
// attributes on which two birds differ, so caption content is a function of
// the attribute difference and can be parsed back.

enum class Attribute { size, color, beak, wings };
inline constexpr std::array<Attribute, 4> kAttributes{Attribute::size, Attribute::color,
                                                       Attribute::beak, Attribute::wings};
const char* attribute_name(Attribute a);

inline constexpr std::array<std::string_view, 3> kSizes{"small", "medium", "large"};
inline constexpr std::array<std::string_view, 6> kColors{"gray",  "brown", "black",
                                                          "white", "yellow", "red"};
inline constexpr std::array<std::string_view, 2> kBeaks{"short", "long"};
inline constexpr std::array<std::string_view, 3> kWings{"plain", "striped", "spotted"};

struct BirdAttributes {
  int size = 0;
  int color = 0;
  int beak = 0;
  int wings = 0;
  int get(Attribute a) const;
  bool operator==(const BirdAttributes&) const = default;
};

std::vector<Attribute> differing_attributes(const BirdAttributes& a, const BirdAttributes& b);

/// Template comparison of bird 1 against bird 2; identical birds get
/// "Both animals appear exactly the same."
std::string synthetic_caption(const BirdAttributes& first, const BirdAttributes& second);
inline constexpr std::string_view kSameCaption = "Both animals appear exactly the same.";

/// One comparative statement recovered from a caption, normalised so that
/// `first` describes <animal1>. Size and beak statements are relational:
/// first/second hold the ordering (+1 / -1) instead of attribute values.
struct Claim {
  Attribute attribute = Attribute::size;
  int first = 0;
  int second = 0;
  bool operator==(const Claim&) const = default;
};

struct ParsedCaption {
  std::vector<Claim> claims;
  bool states_identical = false;
  std::size_t unparsed_sentences = 0;
};

/// Parses template sentences from raw caption text (after preprocess(); no
/// clipping). Sentences outside the templates are counted, not rejected.
ParsedCaption parse_caption(std::string_view text);

/// Whether a claim holds when <animal1> is `a1` and <animal2> is `a2`.
bool claim_holds(const Claim& claim, const BirdAttributes& a1, const BirdAttributes& a2);

struct SyntheticImage {
  std::string image_id;
  TaxonId class_id;
  BirdAttributes attributes;
};

struct WorldConfig {
  std::size_t d = 4;
  std::size_t f = 16;
  std::size_t images_per_species = 6;
  double noise = 0.1;
  /// Fraction of images that receive two negative clarity ratings out of five.
  double unclear_fraction = 0.0;
  std::size_t raters = 5;
  std::uint64_t seed = 0;
};

/// A class -> 3 orders (one size each) -> 2 families (one wing pattern each)
/// -> 2 genera (short / long beak) -> 2 species (distinct colours) world of
/// 24 species, with feature grids, mean-pooled embeddings and clarity ratings.
struct SyntheticWorld {
  Taxonomy taxonomy;
  std::vector<SyntheticImage> images;
  std::vector<FeatureGrid> grids;
  std::vector<Embedding> embeddings;
  std::vector<ClarityRating> ratings;

  const SyntheticImage& image(const std::string& image_id) const;

 private:
  friend SyntheticWorld make_world(const WorldConfig& config);
  explicit SyntheticWorld(Taxonomy t) : taxonomy(std::move(t)) {}
  std::unordered_map<std::string, std::size_t> by_id_;
};

/// Throws std::invalid_argument for d or f below 1, or f too small to hold the
/// attribute channels (16).
SyntheticWorld make_world(const WorldConfig& config);

/// Deterministic attribute encoding plus seeded Gaussian noise, rounded to
/// float32 so that grids survive a save/load round trip unchanged.
FeatureGrid render_grid(const std::string& image_id, const BirdAttributes& attributes,
                        std::size_t d, std::size_t f, double noise, Rng& rng);

/// References for each pair: `raters` copies of the template caption with
/// rater ids r0, r1, ...
std::vector<Paragraph> annotate_pairs(const SyntheticWorld& world, std::span<const ImagePair> pairs,
                                      std::size_t raters = 5);

struct SyntheticCorpusConfig {
  std::size_t n_pairs = 64;
  WorldConfig world;
  std::size_t references = 5;
};

struct SyntheticCorpus {
  SyntheticWorld world;
  std::vector<DatasetRecord> records;
};

/// Pairs cycle through the strata visual, species, genus, family, order,
/// class; each draws a fresh pivot and one branch image from that stratum.
/// Pair ids are "s0000", "s0001", ...
SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusConfig& config);

}  // namespace compcap
