#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace compcap {

/// Stable identifier of a taxonomy node. Integer ids in files are kept as
/// their decimal text.
struct TaxonId {
  std::string value;

  auto operator<=>(const TaxonId&) const = default;
};

struct TaxonRecord {
  TaxonId id;
  std::optional<TaxonId> parent;
  int rank = 0;  // 0 = species; the root has the largest rank
  std::string name;
};

/// Rooted, rank-aligned taxonomic tree. Leaves are the species-level classes.
///
/// Construction validates every structural invariant: one root, no cycles,
/// every node reachable, leaves at rank 0, and each parent exactly one rank
/// above its child. The last rule forces uniform depth, so "l levels above c"
/// is well defined for every leaf. Immutable after construction.
class Taxonomy {
 public:
  /// Throws ValidationError naming the offending record. `lines` maps each
  /// record to its source line; when empty, 1-based positions are reported.
  explicit Taxonomy(std::vector<TaxonRecord> records, std::vector<std::size_t> lines = {});

  /// Loads the line-delimited {id, parent_id|null, rank, name} format.
  static Taxonomy load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const TaxonId& root() const { return nodes_[root_].id; }
  int depth() const { return nodes_[root_].rank; }
  std::size_t size() const { return nodes_.size(); }

  /// Leaves in ascending id order.
  const std::vector<TaxonId>& leaves() const { return leaf_ids_; }

  bool contains(const TaxonId& id) const { return index_.contains(id.value); }
  bool is_leaf(const TaxonId& id) const;
  int rank(const TaxonId& id) const;
  std::optional<TaxonId> parent(const TaxonId& id) const;
  const std::string& name(const TaxonId& id) const;

  /// Node exactly `levels` above leaf c. Throws std::domain_error when c is
  /// not a leaf and std::out_of_range when levels is 0 or exceeds depth().
  const TaxonId& ancestor_at(const TaxonId& c, int levels) const;

  /// Leaves whose lowest common ancestor with c sits exactly `levels` above
  /// c, ascending by id. Never contains c. Errors as ancestor_at.
  std::vector<TaxonId> taxon_partition(const TaxonId& c, int levels) const;

  /// Number of levels above a at which leaves a and b first share an
  /// ancestor (0 when a == b).
  int lca_levels(const TaxonId& a, const TaxonId& b) const;

  /// Leaves under an arbitrary node, ascending by id.
  std::vector<TaxonId> leaves_under(const TaxonId& node) const;

 private:
  struct Node {
    TaxonId id;
    std::optional<std::size_t> parent;
    int rank = 0;
    std::string name;
    std::vector<std::size_t> children;
    std::vector<std::size_t> leaves;  // leaf indices under this node, sorted by id
  };

  std::size_t index_of(const TaxonId& id) const;
  std::size_t leaf_index(const TaxonId& c) const;
  std::size_t ancestor_index(std::size_t leaf, int levels) const;

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t root_ = 0;
  std::vector<TaxonId> leaf_ids_;
};

}  // namespace compcap
