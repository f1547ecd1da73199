#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "compcap/jsonl.hpp"
#include "compcap/rng.hpp"
#include "compcap/taxonomy.hpp"
#include "compcap/visual_index.hpp"

namespace compcap {

/// Images recorded per class, in file order.
using Observations = std::map<TaxonId, std::vector<std::string>>;

Observations observations_from(std::span<const Embedding> embeddings);

struct PivotSpec {
  std::size_t min_observations = 4;
  std::size_t pivot_count = 405;
  /// Images inspected per candidate class; the first clear one becomes the pivot.
  std::size_t review_count = 4;
  /// Reject classes whose taxonomic branches cannot fill every level budget.
  bool strict_lookahead = false;
};

/// k = visual + sum of per-level taxonomic budgets. Level 1 is "same
/// species, different image"; level l >= 2 draws from taxon_partition(c, l-1).
struct BranchBudget {
  std::size_t visual = 2;
  std::map<int, std::size_t> taxonomic{{1, 2}, {2, 2}, {3, 2}, {4, 2}, {5, 2}};

  std::size_t total() const;
};

enum class Provenance { visual, taxonomic };

struct ImagePair {
  std::string pair_id;
  std::string i1;  // pivot
  std::string i2;  // branch
  Provenance provenance = Provenance::visual;
  std::optional<int> level;  // set iff taxonomic
  TaxonId pivot_class;

  bool operator==(const ImagePair&) const = default;
};

/// Sampling stratum of a pair: "visual", "species", "genus", "family",
/// "order" or "class" (taxonomic levels 1..5).
std::string category_of(const ImagePair& pair);

struct Pivot {
  TaxonId class_id;
  std::string image_id;
};

using ClarityPredicate = std::function<bool(const std::string& image_id)>;

/// Draws classes uniformly without replacement from those with at least
/// min_observations images and picks one clear pivot image per class.
/// Throws std::runtime_error when too few classes qualify.
std::vector<Pivot> select_pivots(const Taxonomy& taxonomy, const Observations& observations,
                                 const PivotSpec& spec, Rng& rng,
                                 const ClarityPredicate& is_clear = {},
                                 const BranchBudget* lookahead_budget = nullptr);

struct BranchResult {
  std::vector<ImagePair> pairs;  // pair_id left empty; assigned by sample_pairs
  /// Pairs missing per stratum (key 0 = visual, l = taxonomic level).
  std::map<int, std::size_t> shortfall;
};

BranchResult branch_visual(const Pivot& pivot, const QuantizedIndex& index, std::size_t k_visual);

/// Round-robin over candidate classes in seeded shuffled order, one image per
/// class per round. An empty stratum is reported as shortfall, not an error.
/// Throws std::invalid_argument for a budget level above depth + 1.
BranchResult branch_taxonomic(const Pivot& pivot, const Taxonomy& taxonomy,
                              const Observations& observations, const BranchBudget& budget,
                              Rng& rng);

struct SampleResult {
  std::vector<Pivot> pivots;
  std::vector<ImagePair> pairs;
  std::map<int, std::size_t> shortfall;
};

/// Pivot selection followed by visual and taxonomic branching. Each pivot's
/// taxonomic branch uses its own sub-stream derived from (seed, pivot image).
SampleResult sample_pairs(const Taxonomy& taxonomy, const Observations& observations,
                          const QuantizedIndex& index, const PivotSpec& spec,
                          const BranchBudget& budget, std::uint64_t seed,
                          const ClarityPredicate& is_clear = {});

enum class SamplingStrategy { paired, pivot_branch };

/// Annotation-cost multiplier when each image is usable with probability p:
/// 1/p^2 for independent pairs, where both images must survive, and 1/p with
/// vetted pivots, where only the branch can fail. p = 2/3 gives 2.25 and 1.5.
/// Throws std::domain_error unless 0 < p <= 1.
double annotation_cost(double p, SamplingStrategy strategy);

struct ClarityRating {
  std::string image_id;
  std::string rater_id;
  bool single_instance = false;
  bool animal = false;
  bool focus = false;
  bool visibility = false;

  bool overall() const { return single_instance && animal && focus && visibility; }
};

/// Per-image fraction of raters whose overall clarity judgement is positive.
std::map<std::string, double> positive_fractions(std::span<const ClarityRating> ratings);

struct GateResult {
  std::vector<ImagePair> kept;
  double retention = 0.0;
};

/// Keeps a pair iff both images have positive-rating fraction >= threshold.
/// Throws ValidationError naming the first unrated image.
GateResult apply_clarity_gate(std::span<const ImagePair> pairs,
                              std::span<const ClarityRating> ratings,
                              double threshold = 4.0 / 5.0);

struct DatasetSplits {
  std::vector<ImagePair> train;
  std::vector<ImagePair> dev;
  std::vector<ImagePair> test;
  std::vector<TaxonId> train_classes;
  std::vector<TaxonId> dev_classes;
  std::vector<TaxonId> test_classes;
};

/// Splits by pivot class: shuffled classes, floor(train*n) to train,
/// floor(dev*n) to dev, the rest to test. Throws std::invalid_argument for
/// fewer than 3 classes or fractions outside [0, 1].
DatasetSplits split_dataset(std::span<const ImagePair> pairs, double train_fraction,
                            double dev_fraction, Rng& rng);

// File formats.
Json pair_to_json(const ImagePair& pair);
std::vector<ImagePair> load_pairs(const std::filesystem::path& path);
void save_pairs(const std::filesystem::path& path, std::span<const ImagePair> pairs);
std::vector<ClarityRating> load_ratings(const std::filesystem::path& path);
void save_ratings(const std::filesystem::path& path, std::span<const ClarityRating> ratings);

}  // namespace compcap
