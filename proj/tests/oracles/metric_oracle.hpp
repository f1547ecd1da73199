#pragma once

// Caption metrics recomputed directly from their definitions, written
// without reference to the library code: n-grams are keyed by joined
// strings, LCS is computed top-down and everything is accumulated per
// instance before any corpus-level reduction.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace oracle {

using Sentence = std::vector<std::string>;

struct Item {
  Sentence candidate;
  std::vector<Sentence> references;
};

inline std::map<std::string, int> grams(const Sentence& s, int n) {
  std::map<std::string, int> out;
  for (int i = 0; i + n <= static_cast<int>(s.size()); ++i) {
    std::string key;
    for (int k = 0; k < n; ++k) key += s[static_cast<std::size_t>(i + k)] + '\x1f';
    out[key] += 1;
  }
  return out;
}

inline double bleu4(const std::vector<Item>& items) {
  double c = 0, r = 0;
  double match[4] = {0, 0, 0, 0};
  double count[4] = {0, 0, 0, 0};
  for (const auto& it : items) {
    const int cl = static_cast<int>(it.candidate.size());
    c += cl;
    // closest reference length, shorter on ties
    int best = -1;
    for (const auto& ref : it.references) {
      const int rl = static_cast<int>(ref.size());
      if (best < 0 || std::abs(rl - cl) < std::abs(best - cl) ||
          (std::abs(rl - cl) == std::abs(best - cl) && rl < best)) {
        best = rl;
      }
    }
    r += best;
    for (int n = 1; n <= 4; ++n) {
      for (const auto& [g, k] : grams(it.candidate, n)) {
        int allowed = 0;
        for (const auto& ref : it.references) {
          auto rg = grams(ref, n);
          allowed = std::max(allowed, rg.count(g) ? rg[g] : 0);
        }
        match[n - 1] += std::min(k, allowed);
        count[n - 1] += k;
      }
    }
  }
  if (c == 0) return 0.0;
  double product = 1.0;
  for (int n = 0; n < 4; ++n) {
    const double m = match[n] == 0 ? 1e-9 : match[n];
    product *= std::pow(m / std::max(count[n], 1.0), 0.25);
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * product;
}

inline int lcs(const Sentence& a, const Sentence& b) {
  std::map<std::pair<std::size_t, std::size_t>, int> memo;
  std::function<int(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> int {
    if (i == a.size() || j == b.size()) return 0;
    auto key = std::make_pair(i, j);
    if (auto f = memo.find(key); f != memo.end()) return f->second;
    int v = a[i] == b[j] ? 1 + go(i + 1, j + 1) : std::max(go(i + 1, j), go(i, j + 1));
    memo[key] = v;
    return v;
  };
  return go(0, 0);
}

inline double rouge_l(const std::vector<Item>& items, double beta = 1.2) {
  double total = 0;
  for (const auto& it : items) {
    double best = 0;
    for (const auto& ref : it.references) {
      const int l = lcs(it.candidate, ref);
      if (l == 0) continue;
      const double p = double(l) / it.candidate.size();
      const double rec = double(l) / ref.size();
      best = std::max(best, ((1 + beta * beta) * p * rec) / (rec + beta * beta * p));
    }
    total += best;
  }
  return total / items.size();
}

inline double cider_d(const std::vector<Item>& items) {
  const double sigma = 6.0;
  const double N = double(items.size());
  std::map<std::string, double> df;
  for (const auto& it : items) {
    std::set<std::string> seen;
    for (const auto& ref : it.references)
      for (int n = 1; n <= 4; ++n)
        for (const auto& [g, k] : grams(ref, n)) seen.insert(g);
    for (const auto& g : seen) df[g] += 1;
  }
  auto idf = [&](const std::string& g) { return std::log(N) - std::log(std::max(1.0, df.count(g) ? df[g] : 0.0)); };
  double sum = 0;
  for (const auto& it : items) {
    double per_item = 0;
    for (const auto& ref : it.references) {
      const double delta = double(it.candidate.size()) - double(ref.size());
      const double penalty = std::exp(-delta * delta / (2 * sigma * sigma));
      double per_ref = 0;
      for (int n = 1; n <= 4; ++n) {
        auto cg = grams(it.candidate, n);
        auto rg = grams(ref, n);
        double nc = 0, nr = 0, dot = 0;
        for (const auto& [g, k] : cg) nc += std::pow(k * idf(g), 2);
        for (const auto& [g, k] : rg) nr += std::pow(k * idf(g), 2);
        for (const auto& [g, k] : cg) {
          if (!rg.count(g)) continue;
          const double wc = k * idf(g);
          const double wr = rg[g] * idf(g);
          dot += std::min(wc, wr) * wr;
        }
        double sim = dot;
        if (nc > 0 && nr > 0) sim = dot / (std::sqrt(nc) * std::sqrt(nr));
        per_ref += sim * penalty;
      }
      per_item += per_ref / 4.0;
    }
    sum += 10.0 * per_item / it.references.size();
  }
  return sum / items.size();
}

}  // namespace oracle
