#include "compcap/taxonomy.hpp"

#include <algorithm>
#include <iterator>
#include <stdexcept>

#include "compcap/jsonl.hpp"

namespace compcap {

Taxonomy::Taxonomy(std::vector<TaxonRecord> records, std::vector<std::size_t> lines) {
  if (lines.empty()) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      lines.push_back(i + 1);
    }
  }
  if (lines.size() != records.size()) {
    throw std::invalid_argument("Taxonomy: line table does not match records");
  }
  if (records.empty()) {
    throw ValidationError("taxonomy is empty");
  }

  nodes_.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& r = records[i];
    if (r.id.value.empty()) {
      throw ValidationError("empty taxon id", lines[i]);
    }
    if (r.rank < 0) {
      throw ValidationError("negative rank for '" + r.id.value + "'", lines[i]);
    }
    if (!index_.emplace(r.id.value, i).second) {
      throw ValidationError("duplicate taxon id '" + r.id.value + "'", lines[i]);
    }
    nodes_.push_back(Node{r.id, std::nullopt, r.rank, r.name, {}, {}});
  }

  std::optional<std::size_t> root;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!r.parent) {
      if (root) {
        throw ValidationError("second root '" + r.id.value + "' (first root is '" +
                                  nodes_[*root].id.value + "')",
                              lines[i]);
      }
      root = i;
      continue;
    }
    auto it = index_.find(r.parent->value);
    if (it == index_.end()) {
      throw ValidationError("unknown parent '" + r.parent->value + "' of '" + r.id.value + "'",
                            lines[i]);
    }
    if (it->second == i) {
      throw ValidationError("taxon '" + r.id.value + "' is its own parent", lines[i]);
    }
    nodes_[i].parent = it->second;
    nodes_[it->second].children.push_back(i);
  }
  if (!root) {
    throw ValidationError("taxonomy has no root (every record names a parent)");
  }
  root_ = *root;

  // Reachability from the root also rules out cycles: a node on a cycle can
  // never be reached from the unique parentless node.
  std::vector<bool> seen(nodes_.size(), false);
  std::vector<std::size_t> stack{root_};
  seen[root_] = true;
  while (!stack.empty()) {
    std::size_t n = stack.back();
    stack.pop_back();
    for (std::size_t ch : nodes_[n].children) {
      if (!seen[ch]) {
        seen[ch] = true;
        stack.push_back(ch);
      }
    }
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!seen[i]) {
      throw ValidationError("taxon '" + nodes_[i].id.value +
                                "' is not reachable from the root (cycle or detached subtree)",
                            lines[i]);
    }
  }

  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.children.empty() && n.rank != 0) {
      throw ValidationError("leaf '" + n.id.value + "' has rank " + std::to_string(n.rank) +
                                "; leaves must be species (rank 0)",
                            lines[i]);
    }
    if (!n.children.empty() && n.rank == 0) {
      throw ValidationError("rank-0 taxon '" + n.id.value + "' has children", lines[i]);
    }
    if (n.parent && nodes_[*n.parent].rank != n.rank + 1) {
      throw ValidationError("taxon '" + n.id.value + "' has rank " + std::to_string(n.rank) +
                                " but its parent '" + nodes_[*n.parent].id.value + "' has rank " +
                                std::to_string(nodes_[*n.parent].rank) +
                                "; ranks must be contiguous",
                            lines[i]);
    }
  }

  std::vector<std::size_t> leaf_nodes;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].children.empty()) {
      leaf_nodes.push_back(i);
    }
  }
  std::sort(leaf_nodes.begin(), leaf_nodes.end(),
            [&](std::size_t a, std::size_t b) { return nodes_[a].id < nodes_[b].id; });
  for (std::size_t leaf : leaf_nodes) {
    leaf_ids_.push_back(nodes_[leaf].id);
    for (std::optional<std::size_t> n = leaf; n; n = nodes_[*n].parent) {
      nodes_[*n].leaves.push_back(leaf);
    }
  }
}

Taxonomy Taxonomy::load(const std::filesystem::path& path) {
  std::vector<TaxonRecord> records;
  std::vector<std::size_t> lines;
  for_each_jsonl(path, [&](const Json& j, std::size_t line) {
    TaxonRecord r;
    r.id = TaxonId{id_field(j, "id", line)};
    const Json& parent = require_field(j, "parent_id", line);
    if (!parent.is_null()) {
      r.parent = TaxonId{id_field(j, "parent_id", line)};
    }
    const Json& rank = require_field(j, "rank", line);
    if (!rank.is_number_integer()) {
      throw ValidationError("field 'rank' must be an integer", line);
    }
    r.rank = rank.get<int>();
    r.name = j.contains("name") && j["name"].is_string() ? j["name"].get<std::string>() : r.id.value;
    records.push_back(std::move(r));
    lines.push_back(line);
  });
  return Taxonomy(std::move(records), std::move(lines));
}

void Taxonomy::save(const std::filesystem::path& path) const {
  std::vector<Json> out;
  out.reserve(nodes_.size());
  for (const Node& n : nodes_) {
    Json j;
    j["id"] = n.id.value;
    j["parent_id"] = n.parent ? Json(nodes_[*n.parent].id.value) : Json(nullptr);
    j["rank"] = n.rank;
    j["name"] = n.name;
    out.push_back(std::move(j));
  }
  write_jsonl(path, out);
}

std::size_t Taxonomy::index_of(const TaxonId& id) const {
  auto it = index_.find(id.value);
  if (it == index_.end()) {
    throw std::out_of_range("unknown taxon '" + id.value + "'");
  }
  return it->second;
}

std::size_t Taxonomy::leaf_index(const TaxonId& c) const {
  std::size_t i = index_of(c);
  if (!nodes_[i].children.empty()) {
    throw std::domain_error("taxon '" + c.value + "' is not a leaf");
  }
  return i;
}

std::size_t Taxonomy::ancestor_index(std::size_t leaf, int levels) const {
  if (levels < 1 || levels > depth() - nodes_[leaf].rank) {
    throw std::out_of_range("level offset " + std::to_string(levels) + " outside 1.." +
                            std::to_string(depth()) + " for '" + nodes_[leaf].id.value + "'");
  }
  std::size_t n = leaf;
  for (int i = 0; i < levels; ++i) {
    n = *nodes_[n].parent;
  }
  return n;
}

bool Taxonomy::is_leaf(const TaxonId& id) const {
  return nodes_[index_of(id)].children.empty();
}

int Taxonomy::rank(const TaxonId& id) const { return nodes_[index_of(id)].rank; }

std::optional<TaxonId> Taxonomy::parent(const TaxonId& id) const {
  const Node& n = nodes_[index_of(id)];
  if (!n.parent) {
    return std::nullopt;
  }
  return nodes_[*n.parent].id;
}

const std::string& Taxonomy::name(const TaxonId& id) const { return nodes_[index_of(id)].name; }

const TaxonId& Taxonomy::ancestor_at(const TaxonId& c, int levels) const {
  return nodes_[ancestor_index(leaf_index(c), levels)].id;
}

std::vector<TaxonId> Taxonomy::taxon_partition(const TaxonId& c, int levels) const {
  std::size_t leaf = leaf_index(c);
  std::size_t upper = ancestor_index(leaf, levels);
  std::size_t lower = levels == 1 ? leaf : ancestor_index(leaf, levels - 1);
  const auto& above = nodes_[upper].leaves;
  const auto& below = nodes_[lower].leaves;
  std::vector<std::size_t> diff;
  std::set_difference(above.begin(), above.end(), below.begin(), below.end(),
                      std::back_inserter(diff), [&](std::size_t a, std::size_t b) {
                        return nodes_[a].id < nodes_[b].id;
                      });
  std::vector<TaxonId> out;
  out.reserve(diff.size());
  for (std::size_t l : diff) {
    out.push_back(nodes_[l].id);
  }
  return out;
}

int Taxonomy::lca_levels(const TaxonId& a, const TaxonId& b) const {
  std::size_t x = leaf_index(a);
  std::size_t y = leaf_index(b);
  int levels = 0;
  while (x != y) {
    x = *nodes_[x].parent;
    y = *nodes_[y].parent;
    ++levels;
  }
  return levels;
}

std::vector<TaxonId> Taxonomy::leaves_under(const TaxonId& node) const {
  std::vector<TaxonId> out;
  for (std::size_t l : nodes_[index_of(node)].leaves) {
    out.push_back(nodes_[l].id);
  }
  return out;
}

}  // namespace compcap
