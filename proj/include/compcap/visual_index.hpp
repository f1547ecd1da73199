#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "compcap/taxonomy.hpp"

namespace compcap {

struct Embedding {
  std::string image_id;
  TaxonId class_id;
  std::vector<double> vector;
};

/// Reads {image_id, class_id, vector:[...]} lines; rejects non-finite
/// components and mixed dimensionality with the offending line number.
std::vector<Embedding> load_embeddings(const std::filesystem::path& path);
void save_embeddings(const std::filesystem::path& path, std::span<const Embedding> embeddings);

struct KnnResult {
  std::vector<std::string> ids;  // ascending distance, ties by ascending id
  bool truncated = false;        // fewer than k candidates were available
};

/// Exhaustive-scan nearest-neighbour index over 8-bit uniformly quantized
/// embeddings. Each dimension gets its own [min, max] range split into 255
/// steps; distances are L2 over the dequantized codes.
class QuantizedIndex {
 public:
  static constexpr int kLevels = 256;

  /// Throws std::invalid_argument on empty input, mismatched dimensions,
  /// non-finite components or duplicate image ids.
  static QuantizedIndex build(std::span<const Embedding> embeddings);

  std::size_t size() const { return ids_.size(); }
  std::size_t dimension() const { return mins_.size(); }
  bool contains(const std::string& image_id) const { return row_.contains(image_id); }

  const std::vector<std::string>& ids() const { return ids_; }
  const TaxonId& class_of(const std::string& image_id) const;

  double step(std::size_t dim) const { return steps_[dim]; }
  std::span<const std::uint8_t> codes(const std::string& image_id) const;
  std::vector<double> quantize_roundtrip(std::span<const double> v) const;

  /// L2 distance between two indexed images over their quantized codes.
  double distance(const std::string& a, const std::string& b) const;

  /// The k images nearest to `query`, never including the query itself or
  /// anything in `exclude`. Throws std::out_of_range for an unknown query and
  /// std::invalid_argument when k < 1.
  KnnResult knn(const std::string& query, std::size_t k,
                const std::set<std::string>& exclude = {}) const;

  /// Median pairwise distance of the indexed set (over at most 10k pairs);
  /// the calibration scale of visual_similarity. 1.0 when every sampled
  /// distance is zero.
  double similarity_scale() const { return scale_; }

 private:
  std::vector<std::string> ids_;
  std::vector<TaxonId> classes_;
  std::unordered_map<std::string, std::size_t> row_;
  std::vector<double> mins_;
  std::vector<double> steps_;
  std::vector<std::uint8_t> codes_;  // row-major, size() x dimension()
  double scale_ = 1.0;

  double row_distance(std::size_t a, std::size_t b) const;
};

/// exp(-||a - b|| / scale): 1 for identical vectors, strictly decreasing in
/// distance, bounded in (0, 1]. Throws std::invalid_argument on dimension
/// mismatch or a non-positive scale.
double visual_similarity(std::span<const double> a, std::span<const double> b, double scale);
double visual_similarity(const Embedding& a, const Embedding& b, double scale);

double l2_distance(std::span<const double> a, std::span<const double> b);

}  // namespace compcap
