#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "compcap/jsonl.hpp"
#include "compcap/synthetic.hpp"

namespace compcap {

enum class Decision { correct_assignment, swapped_assignment, cannot_tell };
const char* decision_name(Decision d);
/// Throws std::invalid_argument for an unknown name.
Decision parse_decision(std::string_view name);

struct Judgment {
  std::string item_id;
  std::string rater_id;
  Decision decision = Decision::cannot_tell;
};

/// The decision made by at least `quorum` raters, if any. Throws
/// std::invalid_argument for an empty list, mixed items or a repeated rater.
std::optional<Decision> consensus(std::span<const Judgment> judgments, std::size_t quorum = 2);

inline constexpr std::array<std::string_view, 6> kJudgeCategories{
    "visual", "species", "genus", "family", "order", "class"};

struct JudgedItem {
  std::string item_id;
  std::string category;
  std::optional<Decision> decision;  // consensus
  std::size_t raters = 0;
  /// Fewer or more than the standard three judgments.
  bool flagged() const { return raters != 3; }
};

struct CategoryScore {
  std::string category;
  std::size_t items = 0;
  double score = 0.0;  // mean of +1 correct, -1 swapped, 0 otherwise
};

/// Per-category scores in the order of kJudgeCategories; categories without
/// items are omitted. Throws std::invalid_argument for an unknown category.
std::vector<CategoryScore> score_items(std::span<const JudgedItem> items);

/// Groups judgments by item and applies consensus; items with fewer
/// judgments than usual need only a majority of those present and are
/// flagged. `categories` maps item id to sampling category; a judged item
/// missing from it throws ValidationError.
std::vector<JudgedItem> judge_items(std::span<const Judgment> judgments,
                                    const std::map<std::string, std::string>& categories,
                                    std::size_t quorum = 2);

/// Decision of a reader who knows both birds' attributes: the assignment
/// under which more of the caption's claims hold wins; no claims or a tie
/// means cannot_tell.
Decision programmatic_decision(std::string_view caption, const BirdAttributes& first,
                               const BirdAttributes& second);

/// `raters` identical judgments ("auto0", "auto1", ...) for one item.
std::vector<Judgment> programmatic_judgments(const std::string& item_id, Decision decision,
                                             std::size_t raters = 3);

std::vector<Judgment> load_judgments(const std::filesystem::path& path);
void save_judgments(const std::filesystem::path& path, std::span<const Judgment> judgments);

/// {"columns": [...categories], "rows": [{"name", "scores": {category: score},
/// "items": {category: n}, "flagged": n}]}
Json judge_report_row(const std::string& name, std::span<const JudgedItem> items);

}  // namespace compcap
