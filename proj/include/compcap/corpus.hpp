#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "compcap/sampler.hpp"

namespace compcap {

inline constexpr std::size_t kMaxParagraphTokens = 64;

/// Lowercases, rewrites image mentions to <animal1>/<animal2>, splits on
/// whitespace with punctuation detached, and clips to max_tokens (0 = no
/// clip). Recognised mentions: "animal 1", "animal1", "animal one" and the
/// corresponding 2-forms. Throws std::invalid_argument on blank input.
std::vector<std::string> preprocess(std::string_view text,
                                    std::size_t max_tokens = kMaxParagraphTokens);

std::string join_tokens(std::span<const std::string> tokens);

/// Sentences end at '.', '!' or '?' followed by whitespace or end of text;
/// trailing text without a terminator counts as one more sentence.
std::size_t count_sentences(std::string_view text);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kAnimal1 = 4;
  static constexpr int kAnimal2 = 5;
  static const std::vector<std::string>& specials();

  /// Tokens in id order; the first six must be the specials.
  explicit Vocabulary(std::vector<std::string> tokens);

  /// Tokens with frequency >= min_frequency, by descending frequency then
  /// lexicographically, after the specials.
  static Vocabulary build(std::span<const std::vector<std::string>> corpus,
                          std::size_t min_frequency = 1);

  std::size_t size() const { return tokens_.size(); }
  int id(std::string_view token) const;  // kUnk when absent
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(std::span<const std::string> tokens) const;
  std::vector<std::string> decode(std::span<const int> ids) const;
  /// Decoded text, stopping at <eos> and dropping <bos>/<pad>.
  std::string detokenize(std::span<const int> ids) const;

  /// FNV-1a over the token list; checkpoints record it.
  std::uint64_t hash() const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

struct Paragraph {
  std::string pair_id;
  std::string rater_id;
  std::string text;
  std::vector<std::string> tokens;
};

Paragraph make_paragraph(std::string pair_id, std::string rater_id, std::string text);

struct DatasetRecord {
  ImagePair pair;
  std::vector<Paragraph> references;
};

struct CorpusStats {
  std::size_t pairs = 0;
  std::size_t paragraphs = 0;
  double paragraphs_per_pair = 0.0;
  double tokens_per_paragraph = 0.0;
  double sentences_per_paragraph = 0.0;
};

/// Token counts are unclipped. Throws std::invalid_argument on empty input.
CorpusStats corpus_stats(std::span<const DatasetRecord> records);

/// (d, d, f) activations, row-major with the feature axis fastest.
struct FeatureGrid {
  std::string image_id;
  std::size_t d = 0;
  std::size_t f = 0;
  std::vector<double> values;

  double at(std::size_t row, std::size_t col, std::size_t feature) const {
    return values[(row * d + col) * f + feature];
  }
  std::vector<double> mean_pooled() const;
};

using GridTable = std::unordered_map<std::string, FeatureGrid>;

/// Manifest lines {image_id, d, f} in `manifest`; payload of little-endian
/// float32 values in manifest order next to it with extension ".bin".
void save_feature_grids(const std::filesystem::path& manifest, std::span<const FeatureGrid> grids);
std::vector<FeatureGrid> load_feature_grids(const std::filesystem::path& manifest);
std::filesystem::path grid_payload_path(const std::filesystem::path& manifest);
GridTable index_grids(std::vector<FeatureGrid> grids);

// Paragraphs file: {pair_id, rater_id, text}. Records file: pair fields plus
// references:[{rater_id, text}].
std::vector<Paragraph> load_paragraphs(const std::filesystem::path& path);
void save_paragraphs(const std::filesystem::path& path, std::span<const Paragraph> paragraphs);
std::vector<DatasetRecord> load_records(const std::filesystem::path& path);
void save_records(const std::filesystem::path& path, std::span<const DatasetRecord> records);

/// Joins pairs with their paragraphs; pairs without paragraphs are dropped.
std::vector<DatasetRecord> join_records(std::span<const ImagePair> pairs,
                                        std::span<const Paragraph> paragraphs);

}  // namespace compcap
