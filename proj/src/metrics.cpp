#include "compcap/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <map>
#include <stdexcept>

namespace compcap {

namespace {

constexpr int kMaxOrder = 4;
constexpr double kBleuEpsilon = 1e-9;
constexpr double kCiderSigma = 6.0;

using NgramCounts = std::map<Tokens, std::size_t>;

NgramCounts ngrams(const Tokens& tokens, int n) {
  NgramCounts counts;
  const std::size_t len = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + len <= tokens.size(); ++i) {
    ++counts[Tokens(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                    tokens.begin() + static_cast<std::ptrdiff_t>(i + len))];
  }
  return counts;
}

void require_references(std::span<const EvalInstance> instances, const char* metric) {
  if (instances.empty()) {
    throw std::invalid_argument(std::string(metric) + ": no instances");
  }
  for (const auto& inst : instances) {
    if (inst.references.empty()) {
      throw std::invalid_argument(std::string(metric) + ": instance '" + inst.pair_id +
                                  "' has no references");
    }
  }
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// tf-idf vectors for n = 1..4 plus their norms.
struct CiderVector {
  std::array<std::map<Tokens, double>, kMaxOrder> weights;
  std::array<double, kMaxOrder> norms{};
  std::size_t length = 0;
};

}  // namespace

double bleu4(std::span<const EvalInstance> instances) {
  require_references(instances, "bleu4");
  std::array<double, kMaxOrder> matched{};
  std::array<double, kMaxOrder> total{};
  double cand_len = 0.0;
  double ref_len = 0.0;
  for (const auto& inst : instances) {
    cand_len += double(inst.candidate.size());
    std::size_t closest = inst.references.front().size();
    for (const auto& r : inst.references) {
      const auto diff = [&](std::size_t len) {
        return len > inst.candidate.size() ? len - inst.candidate.size() : inst.candidate.size() - len;
      };
      if (diff(r.size()) < diff(closest) || (diff(r.size()) == diff(closest) && r.size() < closest)) {
        closest = r.size();
      }
    }
    ref_len += double(closest);
    for (int n = 1; n <= kMaxOrder; ++n) {
      NgramCounts cand = ngrams(inst.candidate, n);
      NgramCounts max_ref;
      for (const auto& r : inst.references) {
        for (const auto& [g, c] : ngrams(r, n)) max_ref[g] = std::max(max_ref[g], c);
      }
      for (const auto& [g, c] : cand) {
        auto it = max_ref.find(g);
        matched[n - 1] += double(std::min(c, it == max_ref.end() ? 0 : it->second));
        total[n - 1] += double(c);
      }
    }
  }
  if (cand_len == 0.0) {
    return 0.0;
  }
  double log_sum = 0.0;
  for (int n = 0; n < kMaxOrder; ++n) {
    const double m = matched[n] > 0.0 ? matched[n] : kBleuEpsilon;
    log_sum += std::log(m / std::max(total[n], 1.0)) / kMaxOrder;
  }
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return bp * std::exp(log_sum);
}

double rouge_l_sentence(const Tokens& candidate, const std::vector<Tokens>& references, double beta) {
  double best = 0.0;
  for (const auto& r : references) {
    const std::size_t lcs = lcs_length(candidate, r);
    if (lcs == 0) continue;
    const double p = double(lcs) / double(candidate.size());
    const double rec = double(lcs) / double(r.size());
    const double b2 = beta * beta;
    best = std::max(best, (1.0 + b2) * p * rec / (rec + b2 * p));
  }
  return best;
}

double rouge_l(std::span<const EvalInstance> instances, double beta) {
  require_references(instances, "rouge_l");
  double sum = 0.0;
  for (const auto& inst : instances) sum += rouge_l_sentence(inst.candidate, inst.references, beta);
  return sum / double(instances.size());
}

std::vector<double> cider_d_scores(std::span<const EvalInstance> instances) {
  require_references(instances, "cider_d");
  if (instances.size() < 2) {
    throw std::invalid_argument("cider_d: idf needs at least two instances");
  }
  std::map<Tokens, double> document_frequency;
  for (const auto& inst : instances) {
    std::map<Tokens, bool> present;
    for (const auto& r : inst.references) {
      for (int n = 1; n <= kMaxOrder; ++n) {
        for (const auto& [g, c] : ngrams(r, n)) present[g] = true;
      }
    }
    for (const auto& [g, yes] : present) document_frequency[g] += 1.0;
  }
  const double log_docs = std::log(double(instances.size()));
  auto vectorize = [&](const Tokens& tokens) {
    CiderVector v;
    v.length = tokens.size();
    for (int n = 1; n <= kMaxOrder; ++n) {
      for (const auto& [g, c] : ngrams(tokens, n)) {
        auto it = document_frequency.find(g);
        const double df = std::log(std::max(1.0, it == document_frequency.end() ? 0.0 : it->second));
        const double w = double(c) * (log_docs - df);
        v.weights[n - 1][g] = w;
        v.norms[n - 1] += w * w;
      }
    }
    for (double& norm : v.norms) norm = std::sqrt(norm);
    return v;
  };

  std::vector<double> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) {
    const CiderVector cand = vectorize(inst.candidate);
    double total = 0.0;
    for (const auto& r : inst.references) {
      const CiderVector ref = vectorize(r);
      const double delta = double(cand.length) - double(ref.length);
      const double penalty = std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
      for (int n = 0; n < kMaxOrder; ++n) {
        double val = 0.0;
        for (const auto& [g, w] : cand.weights[n]) {
          auto it = ref.weights[n].find(g);
          if (it != ref.weights[n].end()) val += std::min(w, it->second) * it->second;
        }
        if (cand.norms[n] != 0.0 && ref.norms[n] != 0.0) {
          val /= cand.norms[n] * ref.norms[n];
        }
        total += val * penalty;
      }
    }
    out.push_back(10.0 * total / kMaxOrder / double(inst.references.size()));
  }
  return out;
}

double cider_d(std::span<const EvalInstance> instances) {
  const std::vector<double> scores = cider_d_scores(instances);
  double sum = 0.0;
  for (double s : scores) sum += s;
  return sum / double(scores.size());
}

const char* metric_name(Metric m) {
  switch (m) {
    case Metric::bleu4:
      return "bleu4";
    case Metric::rouge_l:
      return "rougeL";
    case Metric::cider_d:
      return "ciderD";
  }
  return "?";
}

double score(Metric m, std::span<const EvalInstance> instances) {
  switch (m) {
    case Metric::bleu4:
      return bleu4(instances);
    case Metric::rouge_l:
      return rouge_l(instances);
    case Metric::cider_d:
      return cider_d(instances);
  }
  throw std::logic_error("score: unknown metric");
}

Json MetricReport::to_json(bool per_instance) const {
  Json j{{"bleu4", bleu4}, {"rougeL", rouge_l}, {"ciderD", cider_d}};
  if (per_instance) {
    Json rows = Json::array();
    for (std::size_t i = 0; i < pair_ids.size(); ++i) {
      rows.push_back(
          {{"pair_id", pair_ids[i]}, {"rougeL", rouge_l_per_instance[i]}, {"ciderD", cider_d_per_instance[i]}});
    }
    j["instances"] = rows;
  }
  return j;
}

MetricReport evaluate(std::span<const EvalInstance> instances) {
  MetricReport r;
  r.bleu4 = bleu4(instances);
  r.rouge_l = rouge_l(instances);
  r.cider_d_per_instance = cider_d_scores(instances);
  double sum = 0.0;
  for (double s : r.cider_d_per_instance) sum += s;
  r.cider_d = sum / double(instances.size());
  for (const auto& inst : instances) {
    r.pair_ids.push_back(inst.pair_id);
    r.rouge_l_per_instance.push_back(rouge_l_sentence(inst.candidate, inst.references));
  }
  return r;
}

BaselineStats human_baseline(std::span<const EvalInstance> instances, Metric metric,
                             std::size_t runs, std::uint64_t seed) {
  if (runs == 0) {
    throw std::invalid_argument("human_baseline: need at least one run");
  }
  for (const auto& inst : instances) {
    if (inst.references.size() < 2) {
      throw std::invalid_argument("human_baseline: instance '" + inst.pair_id + "' has " +
                                  std::to_string(inst.references.size()) +
                                  " references; at least 2 are needed");
    }
  }
  BaselineStats stats;
  Rng rng(derive_seed(seed, "human-baseline"));
  for (std::size_t run = 0; run < runs; ++run) {
    std::vector<EvalInstance> held;
    held.reserve(instances.size());
    for (const auto& inst : instances) {
      const std::size_t out = static_cast<std::size_t>(rng.uniform_index(inst.references.size()));
      EvalInstance e{inst.pair_id, inst.references[out], {}};
      for (std::size_t k = 0; k < inst.references.size(); ++k) {
        if (k != out) e.references.push_back(inst.references[k]);
      }
      held.push_back(std::move(e));
    }
    stats.runs.push_back(score(metric, held));
  }
  double sum = 0.0;
  for (double v : stats.runs) sum += v;
  stats.mean = sum / double(runs);
  double var = 0.0;
  for (double v : stats.runs) var += (v - stats.mean) * (v - stats.mean);
  stats.stddev = std::sqrt(var / double(runs));
  return stats;
}

}  // namespace compcap
