#pragma once

// Brute-force lowest common ancestors: walk both leaves to the root through
// parent() and find the first shared node.

#include <map>
#include <vector>

#include "compcap/taxonomy.hpp"

namespace oracle {

inline std::vector<compcap::TaxonId> path_to_root(const compcap::Taxonomy& t, compcap::TaxonId id) {
  std::vector<compcap::TaxonId> path{id};
  while (auto p = t.parent(path.back())) path.push_back(*p);
  return path;
}

// Steps above `a` to the first ancestor that is also an ancestor of `b`.
inline int lca_steps(const compcap::Taxonomy& t, const compcap::TaxonId& a, const compcap::TaxonId& b) {
  const auto pa = path_to_root(t, a);
  const auto pb = path_to_root(t, b);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (const auto& x : pb) {
      if (x == pa[i]) return static_cast<int>(i);
    }
  }
  return -1;
}

// Leaves grouped by LCA distance from c, excluding c itself.
inline std::map<int, std::vector<compcap::TaxonId>> partition(const compcap::Taxonomy& t,
                                                              const compcap::TaxonId& c) {
  std::map<int, std::vector<compcap::TaxonId>> out;
  for (const auto& leaf : t.leaves()) {
    if (leaf == c) continue;
    out[lca_steps(t, c, leaf)].push_back(leaf);
  }
  return out;
}

}  // namespace oracle
