#include "compcap/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace compcap {

namespace {

std::vector<int> with_bos(int bos, const std::vector<int>& tokens) {
  std::vector<int> prefix;
  prefix.reserve(tokens.size() + 1);
  prefix.push_back(bos);
  prefix.insert(prefix.end(), tokens.begin(), tokens.end());
  return prefix;
}

std::vector<double> checked_step(const StepFunction& step, const std::vector<int>& prefix) {
  std::vector<double> lp = step(prefix);
  if (lp.empty()) {
    throw std::invalid_argument("decoder step returned an empty distribution");
  }
  return lp;
}

}  // namespace

Hypothesis greedy_decode(const StepFunction& step, const DecodeOptions& options) {
  Hypothesis h;
  while (h.tokens.size() < options.max_length) {
    std::vector<double> lp = checked_step(step, with_bos(options.bos, h.tokens));
    std::size_t best = 0;
    for (std::size_t v = 1; v < lp.size(); ++v) {
      if (lp[v] > lp[best]) best = v;
    }
    h.log_prob = h.log_prob + lp[best];
    h.tokens.push_back(static_cast<int>(best));
    if (options.eos && static_cast<int>(best) == *options.eos) {
      h.finished = true;
      break;
    }
  }
  return h;
}

Hypothesis sample_decode(const StepFunction& step, const DecodeOptions& options, double temperature,
                         Rng& rng) {
  if (!(temperature > 0.0)) {
    throw std::invalid_argument("sample_decode: temperature must be positive");
  }
  Hypothesis h;
  while (h.tokens.size() < options.max_length) {
    std::vector<double> lp = checked_step(step, with_bos(options.bos, h.tokens));
    const double mx = *std::max_element(lp.begin(), lp.end());
    std::vector<double> weights(lp.size());
    for (std::size_t v = 0; v < lp.size(); ++v) weights[v] = std::exp((lp[v] - mx) / temperature);
    const std::size_t pick = rng.weighted_index(weights);
    h.log_prob = h.log_prob + lp[pick];
    h.tokens.push_back(static_cast<int>(pick));
    if (options.eos && static_cast<int>(pick) == *options.eos) {
      h.finished = true;
      break;
    }
  }
  return h;
}

std::vector<Hypothesis> beam_decode(const StepFunction& step, const DecodeOptions& options,
                                    std::size_t width) {
  if (width == 0) {
    throw std::invalid_argument("beam_decode: width must be at least 1");
  }
  struct Candidate {
    double score;
    std::size_t parent;
    int token;
  };
  std::vector<Hypothesis> alive{Hypothesis{}};
  std::vector<Hypothesis> retired;
  bool stopped_early = false;
  for (std::size_t t = 0; t < options.max_length && !alive.empty(); ++t) {
    std::vector<Candidate> candidates;
    for (std::size_t i = 0; i < alive.size(); ++i) {
      std::vector<double> lp = checked_step(step, with_bos(options.bos, alive[i].tokens));
      for (std::size_t v = 0; v < lp.size(); ++v) {
        candidates.push_back({alive[i].log_prob + lp[v], i, static_cast<int>(v)});
      }
    }
    // Candidates were generated in (parent, token) order, so a stable sort on
    // score alone applies the documented tie rule.
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
    std::vector<Hypothesis> next;
    for (std::size_t rank = 0; rank < candidates.size() && next.size() < width; ++rank) {
      const Candidate& c = candidates[rank];
      Hypothesis h{alive[c.parent].tokens, c.score, false};
      h.tokens.push_back(c.token);
      if (options.eos && c.token == *options.eos) {
        if (rank < width) {
          h.finished = true;
          retired.push_back(std::move(h));
        }
        continue;
      }
      next.push_back(std::move(h));
    }
    alive = std::move(next);
    if (!retired.empty() && !alive.empty()) {
      double best_retired = retired.front().log_prob;
      for (const auto& r : retired) best_retired = std::max(best_retired, r.log_prob);
      if (best_retired >= alive.front().log_prob) {
        stopped_early = true;
        break;
      }
    }
  }
  std::vector<Hypothesis> out = std::move(retired);
  if (!stopped_early) {
    // Hypotheses cut off by max_length compete alongside the retired ones.
    out.insert(out.end(), alive.begin(), alive.end());
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.log_prob > b.log_prob; });
  return out;
}

StepFunction model_step(Model& model, const Tensor& memory) {
  return [&model, memory](std::span<const int> prefix) { return model.next_log_probs(memory, prefix); };
}

Hypothesis generate(Model& model, const FeatureGrid& first, const FeatureGrid& second,
                    const GenerationOptions& options, Rng& rng) {
  const Tensor memory = model.encode_value(first, second);
  DecodeOptions decode{Vocabulary::kBos, Vocabulary::kEos,
                       std::min(options.max_length, model.config().max_decode_length)};
  StepFunction step = model_step(model, memory);
  switch (options.mode) {
    case DecodeMode::greedy:
      return greedy_decode(step, decode);
    case DecodeMode::multinomial:
      return sample_decode(step, decode, options.temperature, rng);
    case DecodeMode::beam:
      return beam_decode(step, decode, options.beam_width).front();
  }
  throw std::logic_error("generate: unknown decode mode");
}

}  // namespace compcap
