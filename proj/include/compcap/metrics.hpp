#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "compcap/jsonl.hpp"
#include "compcap/rng.hpp"

namespace compcap {

using Tokens = std::vector<std::string>;

struct EvalInstance {
  std::string pair_id;
  Tokens candidate;
  std::vector<Tokens> references;
};

/// Corpus BLEU-4: clipped n-gram matches and candidate n-gram totals summed
/// over the corpus for n = 1..4, uniform geometric mean, brevity penalty
/// against the closest reference length (shorter wins ties). A zero match
/// count is replaced by 1e-9. Throws std::invalid_argument on an empty corpus
/// or an instance without references.
double bleu4(std::span<const EvalInstance> instances);

/// LCS F-measure (1 + b^2) P R / (R + b^2 P) per reference, maximised over
/// references, averaged over instances.
double rouge_l(std::span<const EvalInstance> instances, double beta = 1.2);
double rouge_l_sentence(const Tokens& candidate, const std::vector<Tokens>& references,
                        double beta = 1.2);

/// CIDEr-D with idf from the references of the evaluated instances,
/// min-clipped tf-idf cosine, Gaussian length penalty (sigma 6), averaged
/// over n = 1..4 and references, times 10. Throws std::invalid_argument with
/// fewer than two instances, where idf is degenerate.
double cider_d(std::span<const EvalInstance> instances);
/// Per-instance CIDEr-D scores in input order.
std::vector<double> cider_d_scores(std::span<const EvalInstance> instances);

enum class Metric { bleu4, rouge_l, cider_d };
const char* metric_name(Metric m);
double score(Metric m, std::span<const EvalInstance> instances);

struct MetricReport {
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double cider_d = 0.0;
  std::vector<std::string> pair_ids;
  std::vector<double> rouge_l_per_instance;
  std::vector<double> cider_d_per_instance;
  Json to_json(bool per_instance = false) const;
};

MetricReport evaluate(std::span<const EvalInstance> instances);

struct BaselineStats {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation over runs
  std::vector<double> runs;
};

/// One-vs-rest: each run holds out one reference per instance (seeded) as the
/// candidate and scores it against the rest. Throws std::invalid_argument
/// when an instance has fewer than two references.
BaselineStats human_baseline(std::span<const EvalInstance> instances, Metric metric,
                             std::size_t runs, std::uint64_t seed);

}  // namespace compcap
