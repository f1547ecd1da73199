#include "compcap/visual_index.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "compcap/jsonl.hpp"
#include "compcap/rng.hpp"

namespace compcap {

namespace {

constexpr std::size_t kScaleSamplePairs = 10000;
constexpr std::uint64_t kScaleSeed = 0x5ca1eULL;

}  // namespace

std::vector<Embedding> load_embeddings(const std::filesystem::path& path) {
  std::vector<Embedding> out;
  for_each_jsonl(path, [&](const Json& j, std::size_t line) {
    Embedding e;
    e.image_id = id_field(j, "image_id", line);
    e.class_id = TaxonId{id_field(j, "class_id", line)};
    const Json& v = require_field(j, "vector", line);
    if (!v.is_array() || v.empty()) {
      throw ValidationError("field 'vector' must be a nonempty array", line);
    }
    for (const Json& x : v) {
      if (!x.is_number()) {
        throw ValidationError("vector component is not a number", line);
      }
      double d = x.get<double>();
      if (!std::isfinite(d)) {
        throw ValidationError("vector component is not finite", line);
      }
      e.vector.push_back(d);
    }
    if (!out.empty() && out.front().vector.size() != e.vector.size()) {
      throw ValidationError("vector dimension " + std::to_string(e.vector.size()) +
                                " differs from " + std::to_string(out.front().vector.size()),
                            line);
    }
    out.push_back(std::move(e));
  });
  return out;
}

void save_embeddings(const std::filesystem::path& path, std::span<const Embedding> embeddings) {
  std::vector<Json> out;
  out.reserve(embeddings.size());
  for (const auto& e : embeddings) {
    out.push_back(Json{{"image_id", e.image_id}, {"class_id", e.class_id.value}, {"vector", e.vector}});
  }
  write_jsonl(path, out);
}

QuantizedIndex QuantizedIndex::build(std::span<const Embedding> embeddings) {
  if (embeddings.empty()) {
    throw std::invalid_argument("build_index: no embeddings");
  }
  const std::size_t dim = embeddings.front().vector.size();
  if (dim == 0) {
    throw std::invalid_argument("build_index: zero-dimensional embedding");
  }
  QuantizedIndex index;
  index.mins_.assign(dim, 0.0);
  std::vector<double> maxs(dim, 0.0);
  for (std::size_t r = 0; r < embeddings.size(); ++r) {
    const auto& e = embeddings[r];
    if (e.vector.size() != dim) {
      throw std::invalid_argument("build_index: '" + e.image_id + "' has dimension " +
                                  std::to_string(e.vector.size()) + ", expected " +
                                  std::to_string(dim));
    }
    if (!index.row_.emplace(e.image_id, r).second) {
      throw std::invalid_argument("build_index: duplicate image id '" + e.image_id + "'");
    }
    for (std::size_t d = 0; d < dim; ++d) {
      double x = e.vector[d];
      if (!std::isfinite(x)) {
        throw std::invalid_argument("build_index: non-finite component in '" + e.image_id + "'");
      }
      if (r == 0 || x < index.mins_[d]) index.mins_[d] = x;
      if (r == 0 || x > maxs[d]) maxs[d] = x;
    }
    index.ids_.push_back(e.image_id);
    index.classes_.push_back(e.class_id);
  }
  index.steps_.resize(dim);
  for (std::size_t d = 0; d < dim; ++d) {
    index.steps_[d] = (maxs[d] - index.mins_[d]) / (kLevels - 1);
  }
  index.codes_.resize(embeddings.size() * dim);
  for (std::size_t r = 0; r < embeddings.size(); ++r) {
    for (std::size_t d = 0; d < dim; ++d) {
      double code = 0.0;
      if (index.steps_[d] > 0.0) {
        code = std::nearbyint((embeddings[r].vector[d] - index.mins_[d]) / index.steps_[d]);
        code = std::clamp(code, 0.0, double(kLevels - 1));
      }
      index.codes_[r * dim + d] = static_cast<std::uint8_t>(code);
    }
  }

  // Calibration scale: median over all pairs, or over a fixed-seed sample of
  // pairs when the set is large.
  const std::size_t n = index.size();
  std::vector<double> dists;
  if (n >= 2) {
    const std::size_t all_pairs = n * (n - 1) / 2;
    if (all_pairs <= kScaleSamplePairs) {
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a + 1; b < n; ++b) dists.push_back(index.row_distance(a, b));
    } else {
      Rng rng(kScaleSeed);
      while (dists.size() < kScaleSamplePairs) {
        std::size_t a = rng.uniform_index(n);
        std::size_t b = rng.uniform_index(n);
        if (a != b) dists.push_back(index.row_distance(a, b));
      }
    }
  }
  if (!dists.empty()) {
    auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
    std::nth_element(dists.begin(), mid, dists.end());
    double median = *mid;
    if (dists.size() % 2 == 0) {
      double lower = *std::max_element(dists.begin(), mid);
      median = 0.5 * (median + lower);
    }
    index.scale_ = median > 0.0 ? median : 1.0;
  }
  return index;
}

const TaxonId& QuantizedIndex::class_of(const std::string& image_id) const {
  auto it = row_.find(image_id);
  if (it == row_.end()) {
    throw std::out_of_range("image '" + image_id + "' is not indexed");
  }
  return classes_[it->second];
}

std::span<const std::uint8_t> QuantizedIndex::codes(const std::string& image_id) const {
  auto it = row_.find(image_id);
  if (it == row_.end()) {
    throw std::out_of_range("image '" + image_id + "' is not indexed");
  }
  return {codes_.data() + it->second * dimension(), dimension()};
}

std::vector<double> QuantizedIndex::quantize_roundtrip(std::span<const double> v) const {
  if (v.size() != dimension()) {
    throw std::invalid_argument("quantize_roundtrip: dimension mismatch");
  }
  std::vector<double> out(v.size());
  for (std::size_t d = 0; d < v.size(); ++d) {
    if (steps_[d] == 0.0) {
      out[d] = mins_[d];
      continue;
    }
    double code = std::clamp(std::nearbyint((v[d] - mins_[d]) / steps_[d]), 0.0, double(kLevels - 1));
    out[d] = mins_[d] + code * steps_[d];
  }
  return out;
}

double QuantizedIndex::row_distance(std::size_t a, std::size_t b) const {
  const std::size_t dim = dimension();
  const std::uint8_t* x = codes_.data() + a * dim;
  const std::uint8_t* y = codes_.data() + b * dim;
  double sum = 0.0;
  for (std::size_t d = 0; d < dim; ++d) {
    double diff = (double(x[d]) - double(y[d])) * steps_[d];
    sum += diff * diff;
  }
  return std::sqrt(sum);
}

double QuantizedIndex::distance(const std::string& a, const std::string& b) const {
  auto ia = row_.find(a);
  auto ib = row_.find(b);
  if (ia == row_.end() || ib == row_.end()) {
    throw std::out_of_range("distance: image not indexed");
  }
  return row_distance(ia->second, ib->second);
}

KnnResult QuantizedIndex::knn(const std::string& query, std::size_t k,
                              const std::set<std::string>& exclude) const {
  if (k < 1) {
    throw std::invalid_argument("knn: k must be at least 1");
  }
  auto q = row_.find(query);
  if (q == row_.end()) {
    throw std::out_of_range("knn: query '" + query + "' is not indexed");
  }
  std::vector<std::pair<double, std::size_t>> candidates;
  candidates.reserve(size());
  for (std::size_t r = 0; r < size(); ++r) {
    if (r == q->second || exclude.contains(ids_[r])) {
      continue;
    }
    candidates.emplace_back(row_distance(q->second, r), r);
  }
  auto closer = [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return ids_[a.second] < ids_[b.second];
  };
  KnnResult result;
  std::size_t take = std::min(k, candidates.size());
  result.truncated = take < k;
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                    candidates.end(), closer);
  for (std::size_t i = 0; i < take; ++i) {
    result.ids.push_back(ids_[candidates[i].second]);
  }
  return result;
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("l2_distance: dimension mismatch (" + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()) + ")");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

double visual_similarity(std::span<const double> a, std::span<const double> b, double scale) {
  if (!(scale > 0.0)) {
    throw std::invalid_argument("visual_similarity: scale must be positive");
  }
  return std::exp(-l2_distance(a, b) / scale);
}

double visual_similarity(const Embedding& a, const Embedding& b, double scale) {
  return visual_similarity(a.vector, b.vector, scale);
}

}  // namespace compcap
