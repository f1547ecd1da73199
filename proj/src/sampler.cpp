#include "compcap/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

#include "compcap/jsonl.hpp"

namespace compcap {

namespace {

// Candidate pool of (class, images) for one taxonomic stratum of a pivot.
std::vector<std::pair<TaxonId, std::vector<std::string>>> stratum_pool(
    const Pivot& pivot, const Taxonomy& taxonomy, const Observations& observations, int level) {
  std::vector<std::pair<TaxonId, std::vector<std::string>>> pool;
  auto images_of = [&](const TaxonId& c) {
    auto it = observations.find(c);
    return it == observations.end() ? std::vector<std::string>{} : it->second;
  };
  if (level == 1) {
    std::vector<std::string> same = images_of(pivot.class_id);
    std::erase(same, pivot.image_id);
    if (!same.empty()) {
      pool.emplace_back(pivot.class_id, std::move(same));
    }
    return pool;
  }
  for (const TaxonId& c : taxonomy.taxon_partition(pivot.class_id, level - 1)) {
    auto images = images_of(c);
    if (!images.empty()) {
      pool.emplace_back(c, std::move(images));
    }
  }
  return pool;
}

std::size_t pool_images(const std::vector<std::pair<TaxonId, std::vector<std::string>>>& pool) {
  std::size_t n = 0;
  for (const auto& [c, images] : pool) n += images.size();
  return n;
}

const char* provenance_name(Provenance p) { return p == Provenance::visual ? "visual" : "taxonomic"; }

}  // namespace

Observations observations_from(std::span<const Embedding> embeddings) {
  Observations obs;
  for (const auto& e : embeddings) {
    obs[e.class_id].push_back(e.image_id);
  }
  return obs;
}

std::size_t BranchBudget::total() const {
  std::size_t k = visual;
  for (const auto& [level, count] : taxonomic) k += count;
  return k;
}

std::string category_of(const ImagePair& pair) {
  static const char* kLevels[] = {"species", "genus", "family", "order", "class"};
  if (pair.provenance == Provenance::visual) {
    return "visual";
  }
  int level = pair.level.value_or(0);
  if (level < 1 || level > 5) {
    return "level" + std::to_string(level);
  }
  return kLevels[level - 1];
}

std::vector<Pivot> select_pivots(const Taxonomy& taxonomy, const Observations& observations,
                                 const PivotSpec& spec, Rng& rng, const ClarityPredicate& is_clear,
                                 const BranchBudget* lookahead_budget) {
  if (spec.pivot_count < 1 || spec.min_observations < 1 || spec.review_count < 1) {
    throw std::invalid_argument("select_pivots: counts must be at least 1");
  }
  std::vector<TaxonId> eligible;
  for (const auto& [c, images] : observations) {
    if (taxonomy.contains(c) && taxonomy.is_leaf(c) && images.size() >= spec.min_observations) {
      eligible.push_back(c);
    }
  }
  if (eligible.size() < spec.pivot_count) {
    throw std::runtime_error("select_pivots: only " + std::to_string(eligible.size()) +
                             " classes have at least " + std::to_string(spec.min_observations) +
                             " observations; " + std::to_string(spec.pivot_count) + " requested");
  }
  rng.shuffle(std::span(eligible));

  std::vector<Pivot> pivots;
  for (const TaxonId& c : eligible) {
    if (pivots.size() == spec.pivot_count) {
      break;
    }
    std::vector<std::string> reviewed = observations.at(c);
    std::sort(reviewed.begin(), reviewed.end());
    rng.shuffle(std::span(reviewed));
    reviewed.resize(std::min(reviewed.size(), spec.review_count));
    auto chosen = std::find_if(reviewed.begin(), reviewed.end(),
                               [&](const std::string& id) { return !is_clear || is_clear(id); });
    if (chosen == reviewed.end()) {
      continue;
    }
    Pivot pivot{c, *chosen};
    if (spec.strict_lookahead && lookahead_budget) {
      bool covered = true;
      for (const auto& [level, count] : lookahead_budget->taxonomic) {
        if (level - 1 > taxonomy.depth() ||
            pool_images(stratum_pool(pivot, taxonomy, observations, level)) < count) {
          covered = false;
          break;
        }
      }
      if (!covered) {
        continue;
      }
    }
    pivots.push_back(std::move(pivot));
  }
  if (pivots.size() < spec.pivot_count) {
    throw std::runtime_error("select_pivots: found " + std::to_string(pivots.size()) +
                             " usable pivots, " + std::to_string(spec.pivot_count) + " requested");
  }
  return pivots;
}

BranchResult branch_visual(const Pivot& pivot, const QuantizedIndex& index, std::size_t k_visual) {
  BranchResult result;
  if (k_visual == 0) {
    return result;
  }
  KnnResult nn = index.knn(pivot.image_id, k_visual);
  for (const auto& id : nn.ids) {
    result.pairs.push_back(ImagePair{"", pivot.image_id, id, Provenance::visual, std::nullopt,
                                     pivot.class_id});
  }
  if (nn.truncated) {
    result.shortfall[0] = k_visual - nn.ids.size();
  }
  return result;
}

BranchResult branch_taxonomic(const Pivot& pivot, const Taxonomy& taxonomy,
                              const Observations& observations, const BranchBudget& budget,
                              Rng& rng) {
  BranchResult result;
  for (const auto& [level, count] : budget.taxonomic) {
    if (level < 1 || level - 1 > taxonomy.depth()) {
      throw std::invalid_argument("branch_taxonomic: budget level " + std::to_string(level) +
                                  " is outside 1.." + std::to_string(taxonomy.depth() + 1));
    }
    if (count == 0) {
      continue;
    }
    auto pool = stratum_pool(pivot, taxonomy, observations, level);
    rng.shuffle(std::span(pool));
    for (auto& [c, images] : pool) {
      std::sort(images.begin(), images.end());
      rng.shuffle(std::span(images));
    }
    std::vector<std::size_t> cursor(pool.size(), 0);
    std::size_t taken = 0;
    bool progress = true;
    while (taken < count && progress) {
      progress = false;
      for (std::size_t i = 0; i < pool.size() && taken < count; ++i) {
        if (cursor[i] == pool[i].second.size()) {
          continue;
        }
        result.pairs.push_back(ImagePair{"", pivot.image_id, pool[i].second[cursor[i]++],
                                         Provenance::taxonomic, level, pivot.class_id});
        ++taken;
        progress = true;
      }
    }
    if (taken < count) {
      result.shortfall[level] = count - taken;
    }
  }
  return result;
}

SampleResult sample_pairs(const Taxonomy& taxonomy, const Observations& observations,
                          const QuantizedIndex& index, const PivotSpec& spec,
                          const BranchBudget& budget, std::uint64_t seed,
                          const ClarityPredicate& is_clear) {
  SampleResult out;
  Rng pivot_rng(derive_seed(seed, "pivots"));
  out.pivots = select_pivots(taxonomy, observations, spec, pivot_rng, is_clear, &budget);
  for (std::size_t p = 0; p < out.pivots.size(); ++p) {
    const Pivot& pivot = out.pivots[p];
    Rng branch_rng(derive_seed(seed, "branch:" + pivot.image_id));
    BranchResult visual = branch_visual(pivot, index, budget.visual);
    BranchResult taxo = branch_taxonomic(pivot, taxonomy, observations, budget, branch_rng);
    std::size_t b = 0;
    for (auto* part : {&visual, &taxo}) {
      for (auto& pair : part->pairs) {
        char id[32];
        std::snprintf(id, sizeof id, "p%05zu-%02zu", p, b++);
        pair.pair_id = id;
        out.pairs.push_back(std::move(pair));
      }
      for (const auto& [stratum, missing] : part->shortfall) out.shortfall[stratum] += missing;
    }
  }
  return out;
}

double annotation_cost(double p, SamplingStrategy strategy) {
  if (!(p > 0.0 && p <= 1.0)) {
    throw std::domain_error("annotation_cost: usable-image probability must lie in (0, 1]");
  }
  return strategy == SamplingStrategy::paired ? 1.0 / (p * p) : 1.0 / p;
}

std::map<std::string, double> positive_fractions(std::span<const ClarityRating> ratings) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;
  for (const auto& r : ratings) {
    auto& [pos, total] = counts[r.image_id];
    pos += r.overall() ? 1 : 0;
    ++total;
  }
  std::map<std::string, double> out;
  for (const auto& [id, c] : counts) {
    out[id] = double(c.first) / double(c.second);
  }
  return out;
}

GateResult apply_clarity_gate(std::span<const ImagePair> pairs,
                              std::span<const ClarityRating> ratings, double threshold) {
  auto fractions = positive_fractions(ratings);
  auto clear = [&](const std::string& image) {
    auto it = fractions.find(image);
    if (it == fractions.end()) {
      throw ValidationError("image '" + image + "' has no clarity rating");
    }
    // Tolerance absorbs representation error, e.g. 4/5 vs a threshold of 0.8.
    return it->second >= threshold - 1e-12;
  };
  GateResult result;
  for (const auto& pair : pairs) {
    bool first = clear(pair.i1);
    bool second = clear(pair.i2);
    if (first && second) {
      result.kept.push_back(pair);
    }
  }
  result.retention = pairs.empty() ? 0.0 : double(result.kept.size()) / double(pairs.size());
  return result;
}

DatasetSplits split_dataset(std::span<const ImagePair> pairs, double train_fraction,
                            double dev_fraction, Rng& rng) {
  if (!(train_fraction >= 0.0 && dev_fraction >= 0.0 && train_fraction + dev_fraction <= 1.0)) {
    throw std::invalid_argument("split_dataset: fractions must be nonnegative and sum to at most 1");
  }
  std::set<TaxonId> class_set;
  for (const auto& p : pairs) class_set.insert(p.pivot_class);
  std::vector<TaxonId> classes(class_set.begin(), class_set.end());
  const std::size_t n = classes.size();
  if (n < 3) {
    throw std::invalid_argument("split_dataset: need at least 3 pivot classes, got " +
                                std::to_string(n));
  }
  rng.shuffle(std::span(classes));
  // The small offset keeps products like 0.7 * 10 from flooring to 6.
  auto n_train = static_cast<std::size_t>(std::floor(train_fraction * double(n) + 1e-9));
  auto n_dev = static_cast<std::size_t>(std::floor(dev_fraction * double(n) + 1e-9));
  n_dev = std::min(n_dev, n - n_train);

  DatasetSplits s;
  s.train_classes.assign(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.dev_classes.assign(classes.begin() + static_cast<std::ptrdiff_t>(n_train),
                       classes.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev));
  s.test_classes.assign(classes.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev), classes.end());
  std::set<TaxonId> train(s.train_classes.begin(), s.train_classes.end());
  std::set<TaxonId> dev(s.dev_classes.begin(), s.dev_classes.end());
  for (const auto& p : pairs) {
    if (train.contains(p.pivot_class)) {
      s.train.push_back(p);
    } else if (dev.contains(p.pivot_class)) {
      s.dev.push_back(p);
    } else {
      s.test.push_back(p);
    }
  }
  return s;
}

Json pair_to_json(const ImagePair& pair) {
  return Json{{"pair_id", pair.pair_id},
              {"i1", pair.i1},
              {"i2", pair.i2},
              {"provenance", provenance_name(pair.provenance)},
              {"level", pair.level ? Json(*pair.level) : Json(nullptr)},
              {"pivot_class", pair.pivot_class.value}};
}

std::vector<ImagePair> load_pairs(const std::filesystem::path& path) {
  std::vector<ImagePair> out;
  for_each_jsonl(path, [&](const Json& j, std::size_t line) {
    ImagePair p;
    p.pair_id = id_field(j, "pair_id", line);
    p.i1 = id_field(j, "i1", line);
    p.i2 = id_field(j, "i2", line);
    std::string prov = string_field(j, "provenance", line);
    const Json& level = require_field(j, "level", line);
    if (prov == "visual") {
      p.provenance = Provenance::visual;
      if (!level.is_null()) {
        throw ValidationError("visual pair must have level null", line);
      }
    } else if (prov == "taxonomic") {
      p.provenance = Provenance::taxonomic;
      if (!level.is_number_integer() || level.get<int>() < 1) {
        throw ValidationError("taxonomic pair needs an integer level >= 1", line);
      }
      p.level = level.get<int>();
    } else {
      throw ValidationError("unknown provenance '" + prov + "'", line);
    }
    p.pivot_class = TaxonId{id_field(j, "pivot_class", line)};
    if (p.i1 == p.i2) {
      throw ValidationError("pair '" + p.pair_id + "' compares an image with itself", line);
    }
    out.push_back(std::move(p));
  });
  return out;
}

void save_pairs(const std::filesystem::path& path, std::span<const ImagePair> pairs) {
  std::vector<Json> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(pair_to_json(p));
  write_jsonl(path, out);
}

std::vector<ClarityRating> load_ratings(const std::filesystem::path& path) {
  std::vector<ClarityRating> out;
  for_each_jsonl(path, [&](const Json& j, std::size_t line) {
    ClarityRating r;
    r.image_id = id_field(j, "image_id", line);
    r.rater_id = id_field(j, "rater_id", line);
    auto flag = [&](const char* key) {
      const Json& v = require_field(j, key, line);
      if (!v.is_boolean()) {
        throw ValidationError(std::string("field '") + key + "' must be boolean", line);
      }
      return v.get<bool>();
    };
    r.single_instance = flag("single_instance");
    r.animal = flag("animal");
    r.focus = flag("focus");
    r.visibility = flag("visibility");
    if (j.contains("overall") && flag("overall") != r.overall()) {
      throw ValidationError("'overall' disagrees with the conjunction of the four criteria", line);
    }
    out.push_back(std::move(r));
  });
  return out;
}

void save_ratings(const std::filesystem::path& path, std::span<const ClarityRating> ratings) {
  std::vector<Json> out;
  out.reserve(ratings.size());
  for (const auto& r : ratings) {
    out.push_back(Json{{"image_id", r.image_id},
                       {"rater_id", r.rater_id},
                       {"single_instance", r.single_instance},
                       {"animal", r.animal},
                       {"focus", r.focus},
                       {"visibility", r.visibility},
                       {"overall", r.overall()}});
  }
  write_jsonl(path, out);
}

}  // namespace compcap
