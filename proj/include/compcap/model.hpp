#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "compcap/autodiff.hpp"
#include "compcap/corpus.hpp"
#include "compcap/jsonl.hpp"
#include "compcap/rng.hpp"

namespace compcap {

enum class Mutation { add, sub, max, mul };

/// Blocks of the joint encoding in their fixed concatenation order.
enum class JointBlock { e1 = 0, e2 = 1, sub = 2, add = 3, max = 4, mul = 5 };
inline constexpr std::size_t kJointBlockKinds = 6;
const char* block_name(JointBlock b);

struct JointEncodingSpec {
  bool include_e1 = true;
  bool include_e2 = true;
  std::vector<Mutation> mutations{Mutation::mul};

  /// Selected blocks in the order [e1, e2, sub, add, max, mul].
  std::vector<JointBlock> blocks() const;
  /// Comma-separated block names, e.g. "e1,e2,mul".
  std::string to_string() const;
  static JointEncodingSpec parse(std::string_view text);
  bool operator==(const JointEncodingSpec&) const = default;
};

struct ComparativeSpec {
  enum class Mode { passthrough, encoder };
  Mode mode = Mode::encoder;
  std::size_t layers = 2;
  bool operator==(const ComparativeSpec&) const = default;
};

/// Desk-scale defaults. The full-scale configuration is hidden 512, 8 heads,
/// 6 encoder layers and 6 decoder layers (see full_scale()).
struct ModelConfig {
  std::size_t d = 4;
  std::size_t f = 16;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t ff_multiplier = 4;
  JointEncodingSpec joint;
  ComparativeSpec comparative;
  std::size_t decoder_layers = 2;
  std::size_t vocab_size = 0;
  /// Decoder steps including <eos>: 64 clipped tokens + 1.
  std::size_t max_decode_length = kMaxParagraphTokens + 1;

  static ModelConfig full_scale(std::size_t vocab_size);
  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
  Json to_json() const;
  static ModelConfig from_json(const Json& j);
  bool operator==(const ModelConfig&) const = default;
};

/// Joint encoding before segment/position embeddings: the selected blocks
/// stacked along the sequence axis.
Var joint_pre_embedding(Graph& g, Var e1, Var e2, const JointEncodingSpec& spec);

/// One training or evaluation example: two grids and the target token ids
/// without <bos>/<eos>.
struct Example {
  std::string pair_id;
  const FeatureGrid* first = nullptr;
  const FeatureGrid* second = nullptr;
  std::vector<int> target;
};

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  /// Row-major flatten to (d^2, f) followed by the shared projection f -> hidden.
  std::pair<Var, Var> embed_images(Graph& g, const FeatureGrid& first, const FeatureGrid& second);
  /// Pre-embedding blocks plus per-block segment and per-cell position embeddings.
  Var joint_encode(Graph& g, Var e1, Var e2);
  Var compare(Graph& g, Var joint);
  Var encode(Graph& g, const FeatureGrid& first, const FeatureGrid& second);
  /// Teacher-forced logits (inputs.size(), vocab) for decoder inputs that start
  /// with <bos>.
  Var decode_logits(Graph& g, Var memory, std::span<const int> inputs);

  using GridPair = std::pair<const FeatureGrid*, const FeatureGrid*>;
  /// Rows of joint encoding (and of C) per image pair.
  std::size_t memory_rows() const;
  /// Encodes several pairs at once; the result stacks each pair's C, so pair
  /// i owns rows [i * memory_rows(), (i + 1) * memory_rows()). Row-wise layers
  /// run on the whole stack and attention stays within a pair.
  Var encode_batch(Graph& g, std::span<const GridPair> pairs);
  /// Decodes several sequences against stacked memories (one segment of
  /// memory_lengths per sequence); logits are stacked in input order.
  Var decode_batch(Graph& g, Var memory, std::span<const std::size_t> memory_lengths,
                   std::span<const std::vector<int>> inputs);
  /// Mean per-token cross entropy over all target tokens plus <eos> of every
  /// example in the batch.
  Var loss(Graph& g, std::span<const Example> batch);

  /// Comparative representation C as a plain tensor, for decoding.
  Tensor encode_value(const FeatureGrid& first, const FeatureGrid& second);
  /// Log-probabilities of the next token after `prefix` (which starts with <bos>).
  std::vector<double> next_log_probs(const Tensor& memory, std::span<const int> prefix);

 private:
  Var linear(Graph& g, const std::string& name, Var x);
  Var attention(Graph& g, const std::string& name, Var x, Var memory,
                std::span<const std::size_t> x_lengths, std::span<const std::size_t> memory_lengths,
                bool causal);
  Var compare_segments(Graph& g, Var joint, std::span<const std::size_t> lengths);
  Var feed_forward(Graph& g, const std::string& name, Var x);
  Var norm(Graph& g, const std::string& name, Var x);
  void check_grid(const FeatureGrid& grid) const;

  void add_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  void add_attention(const std::string& name, Rng& rng);
  void add_norm(const std::string& name);
  void add_feed_forward(const std::string& name, Rng& rng);

  ModelConfig config_;
  ParameterStore params_;
  Tensor positions_;  // sinusoidal decoder positions
};

/// Sinusoidal position table (rows, width): sin on even columns, cos on odd.
Tensor sinusoidal_positions(std::size_t rows, std::size_t width);

}  // namespace compcap
