#include "compcap/baselines.hpp"

#include <map>
#include <stdexcept>

#include "compcap/rng.hpp"
#include "compcap/visual_index.hpp"

namespace compcap {

namespace {

std::map<std::string, std::size_t> paragraph_counts(std::span<const DatasetRecord> train) {
  std::map<std::string, std::size_t> counts;
  for (const auto& rec : train) {
    for (const auto& p : rec.references) ++counts[p.text];
  }
  if (counts.empty()) {
    throw std::invalid_argument("baseline: training set has no paragraphs");
  }
  return counts;
}

}  // namespace

MostFrequentBaseline::MostFrequentBaseline(std::span<const DatasetRecord> train) {
  // std::map iterates lexicographically and only a strictly larger count
  // replaces the current choice.
  for (const auto& [text, n] : paragraph_counts(train)) {
    if (n > count_) {
      text_ = text;
      count_ = n;
    }
  }
}

TextOnlyBaseline::TextOnlyBaseline(std::span<const DatasetRecord> train, std::uint64_t seed)
    : seed_(seed) {
  for (const auto& [text, n] : paragraph_counts(train)) {
    texts_.push_back(text);
    weights_.push_back(double(n));
  }
}

const std::string& TextOnlyBaseline::generate(const std::string& pair_id) const {
  Rng rng(derive_seed(seed_, "text-only:" + pair_id));
  return texts_[rng.weighted_index(weights_)];
}

NearestNeighborBaseline::NearestNeighborBaseline(std::span<const DatasetRecord> train,
                                                 const GridTable& grids, std::uint64_t seed)
    : seed_(seed) {
  auto pooled = [&](const std::string& image_id, const std::string& pair_id) {
    auto it = grids.find(image_id);
    if (it == grids.end()) {
      throw std::invalid_argument("nearest-neighbor baseline: training pair '" + pair_id +
                                  "' image '" + image_id + "' has no feature grid");
    }
    return it->second.mean_pooled();
  };
  for (const auto& rec : train) {
    if (rec.references.empty()) continue;
    Entry e{rec.pair.pair_id, pooled(rec.pair.i1, rec.pair.pair_id),
            pooled(rec.pair.i2, rec.pair.pair_id), {}};
    for (const auto& p : rec.references) e.texts.push_back(p.text);
    entries_.push_back(std::move(e));
  }
  if (entries_.empty()) {
    throw std::invalid_argument("nearest-neighbor baseline: training set has no paragraphs");
  }
}

NeighborMatch NearestNeighborBaseline::nearest(const FeatureGrid& first,
                                               const FeatureGrid& second) const {
  const std::vector<double> q1 = first.mean_pooled();
  const std::vector<double> q2 = second.mean_pooled();
  NeighborMatch best;
  bool have = false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const Entry& e = entries_[i];
    if (e.first.size() != q1.size() || e.second.size() != q2.size()) {
      throw std::invalid_argument("nearest-neighbor baseline: query feature size " +
                                  std::to_string(q1.size()) + " differs from training size " +
                                  std::to_string(e.first.size()));
    }
    const double dist = l2_distance(q1, e.first) + l2_distance(q2, e.second);
    if (!have || dist < best.distance || (dist == best.distance && e.pair_id < best.pair_id)) {
      best = {i, e.pair_id, dist};
      have = true;
    }
  }
  return best;
}

const std::string& NearestNeighborBaseline::generate(const std::string& pair_id,
                                                     const FeatureGrid& first,
                                                     const FeatureGrid& second) const {
  const Entry& e = entries_[nearest(first, second).index];
  Rng rng(derive_seed(seed_, "nearest-neighbor:" + pair_id));
  return e.texts[rng.uniform_index(e.texts.size())];
}

}  // namespace compcap
