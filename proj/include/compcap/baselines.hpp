#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "compcap/corpus.hpp"

namespace compcap {

/// Emits the most frequent training paragraph (raw text); ties go to the
/// lexicographically smallest.
class MostFrequentBaseline {
 public:
  explicit MostFrequentBaseline(std::span<const DatasetRecord> train);
  const std::string& text() const { return text_; }
  std::size_t count() const { return count_; }

 private:
  std::string text_;
  std::size_t count_ = 0;
};

/// Samples training paragraphs in proportion to their frequency. Each query
/// draws from its own stream derived from (seed, pair_id), so output does not
/// depend on query order.
class TextOnlyBaseline {
 public:
  TextOnlyBaseline(std::span<const DatasetRecord> train, std::uint64_t seed);
  const std::string& generate(const std::string& pair_id) const;
  const std::vector<std::string>& paragraphs() const { return texts_; }
  const std::vector<double>& weights() const { return weights_; }

 private:
  std::vector<std::string> texts_;  // distinct, lexicographic
  std::vector<double> weights_;
  std::uint64_t seed_;
};

struct NeighborMatch {
  std::size_t index = 0;  // among training records that have paragraphs
  std::string pair_id;
  double distance = 0.0;
};

/// Embeds each image as its mean-pooled feature grid and picks the training
/// pair minimising |q1 - t1| + |q2 - t2| (ties by ascending pair_id), then
/// one of its paragraphs drawn from (seed, query pair_id).
class NearestNeighborBaseline {
 public:
  /// Throws std::invalid_argument when a training image has no grid or the
  /// training set is empty.
  NearestNeighborBaseline(std::span<const DatasetRecord> train, const GridTable& grids,
                          std::uint64_t seed);
  NeighborMatch nearest(const FeatureGrid& first, const FeatureGrid& second) const;
  const std::string& generate(const std::string& pair_id, const FeatureGrid& first,
                              const FeatureGrid& second) const;

 private:
  struct Entry {
    std::string pair_id;
    std::vector<double> first;
    std::vector<double> second;
    std::vector<std::string> texts;
  };
  std::vector<Entry> entries_;
  std::uint64_t seed_;
};

}  // namespace compcap
