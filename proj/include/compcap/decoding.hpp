#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "compcap/model.hpp"
#include "compcap/rng.hpp"

namespace compcap {

/// Log-probabilities over the vocabulary for the token following `prefix`.
using StepFunction = std::function<std::vector<double>(std::span<const int> prefix)>;

struct DecodeOptions {
  int bos = 1;
  /// Hypotheses end at this token; with no eos every hypothesis runs to max_length.
  std::optional<int> eos = 2;
  /// Generated tokens per hypothesis, eos included.
  std::size_t max_length = 65;
};

struct Hypothesis {
  std::vector<int> tokens;  // generated tokens, eos included when reached
  double log_prob = 0.0;
  bool finished = false;  // ended with eos
  bool operator==(const Hypothesis&) const = default;
};

/// Argmax at each step, ties to the lowest token id.
Hypothesis greedy_decode(const StepFunction& step, const DecodeOptions& options);

/// Samples from softmax(log_prob / temperature). Throws std::invalid_argument
/// unless temperature > 0.
Hypothesis sample_decode(const StepFunction& step, const DecodeOptions& options, double temperature,
                         Rng& rng);

/// Keeps the `width` best partial hypotheses by total log-probability.
/// Hypotheses that emit eos are retired and compete on raw log-probability
/// (no length normalisation); the search stops once the best retired
/// hypothesis beats every live one. Candidates tied on score are ordered by
/// parent rank, then token id. Returns all retired and remaining hypotheses,
/// best first. Throws std::invalid_argument for width 0.
std::vector<Hypothesis> beam_decode(const StepFunction& step, const DecodeOptions& options,
                                    std::size_t width);

/// Step function over a model for one encoded pair.
StepFunction model_step(Model& model, const Tensor& memory);

enum class DecodeMode { greedy, multinomial, beam };

struct GenerationOptions {
  DecodeMode mode = DecodeMode::beam;
  std::size_t beam_width = 5;
  double temperature = 1.0;
  std::size_t max_length = 65;
};

/// Best hypothesis for a pair of feature grids under the chosen algorithm.
/// `rng` is used only in multinomial mode.
Hypothesis generate(Model& model, const FeatureGrid& first, const FeatureGrid& second,
                    const GenerationOptions& options, Rng& rng);

}  // namespace compcap
