#include "compcap/judge.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace compcap {

const char* decision_name(Decision d) {
  switch (d) {
    case Decision::correct_assignment:
      return "correct_assignment";
    case Decision::swapped_assignment:
      return "swapped_assignment";
    case Decision::cannot_tell:
      return "cannot_tell";
  }
  return "?";
}

Decision parse_decision(std::string_view name) {
  for (Decision d : {Decision::correct_assignment, Decision::swapped_assignment, Decision::cannot_tell}) {
    if (name == decision_name(d)) return d;
  }
  throw std::invalid_argument("unknown decision '" + std::string(name) +
                              "' (expected correct_assignment, swapped_assignment or cannot_tell)");
}

std::optional<Decision> consensus(std::span<const Judgment> judgments, std::size_t quorum) {
  if (judgments.empty()) {
    throw std::invalid_argument("consensus: no judgments");
  }
  std::set<std::string> raters;
  std::map<Decision, std::size_t> votes;
  for (const auto& j : judgments) {
    if (j.item_id != judgments.front().item_id) {
      throw std::invalid_argument("consensus: judgments for items '" + judgments.front().item_id +
                                  "' and '" + j.item_id + "' mixed");
    }
    if (!raters.insert(j.rater_id).second) {
      throw std::invalid_argument("consensus: rater '" + j.rater_id + "' judged item '" + j.item_id +
                                  "' twice");
    }
    ++votes[j.decision];
  }
  for (const auto& [d, n] : votes) {
    if (n >= quorum) return d;
  }
  return std::nullopt;
}

std::vector<CategoryScore> score_items(std::span<const JudgedItem> items) {
  std::map<std::string, std::pair<std::size_t, int>> tally;
  for (const auto& item : items) {
    if (std::find(kJudgeCategories.begin(), kJudgeCategories.end(), item.category) ==
        kJudgeCategories.end()) {
      throw std::invalid_argument("score_items: item '" + item.item_id + "' has unknown category '" +
                                  item.category + "'");
    }
    auto& [n, points] = tally[item.category];
    ++n;
    if (item.decision == Decision::correct_assignment) points += 1;
    if (item.decision == Decision::swapped_assignment) points -= 1;
  }
  std::vector<CategoryScore> out;
  for (std::string_view c : kJudgeCategories) {
    auto it = tally.find(std::string(c));
    if (it == tally.end()) continue;
    out.push_back({it->first, it->second.first, double(it->second.second) / double(it->second.first)});
  }
  return out;
}

std::vector<JudgedItem> judge_items(std::span<const Judgment> judgments,
                                    const std::map<std::string, std::string>& categories,
                                    std::size_t quorum) {
  std::map<std::string, std::vector<Judgment>> by_item;
  for (const auto& j : judgments) by_item[j.item_id].push_back(j);
  std::vector<JudgedItem> out;
  for (const auto& [id, js] : by_item) {
    auto it = categories.find(id);
    if (it == categories.end()) {
      throw ValidationError("judged item '" + id + "' has no sampling category");
    }
    // Partial items use a simple majority of the judgments present.
    const std::size_t q = std::min(quorum, js.size() / 2 + 1);
    out.push_back({id, it->second, consensus(js, q), js.size()});
  }
  return out;
}

Decision programmatic_decision(std::string_view caption, const BirdAttributes& first,
                               const BirdAttributes& second) {
  const ParsedCaption parsed = parse_caption(caption);
  if (parsed.claims.empty()) return Decision::cannot_tell;
  std::size_t as_given = 0;
  std::size_t swapped = 0;
  for (const auto& c : parsed.claims) {
    as_given += claim_holds(c, first, second) ? 1 : 0;
    swapped += claim_holds(c, second, first) ? 1 : 0;
  }
  if (as_given > swapped) return Decision::correct_assignment;
  if (swapped > as_given) return Decision::swapped_assignment;
  return Decision::cannot_tell;
}

std::vector<Judgment> programmatic_judgments(const std::string& item_id, Decision decision,
                                             std::size_t raters) {
  std::vector<Judgment> out;
  for (std::size_t r = 0; r < raters; ++r) out.push_back({item_id, "auto" + std::to_string(r), decision});
  return out;
}

std::vector<Judgment> load_judgments(const std::filesystem::path& path) {
  std::vector<Judgment> out;
  std::set<std::pair<std::string, std::string>> seen;
  for_each_jsonl(path, [&](const Json& rec, std::size_t line) {
    Judgment j{id_field(rec, "item_id", line), id_field(rec, "rater_id", line), Decision::cannot_tell};
    try {
      j.decision = parse_decision(string_field(rec, "decision", line));
    } catch (const std::invalid_argument& e) {
      throw ValidationError(e.what(), line);
    }
    if (!seen.insert({j.item_id, j.rater_id}).second) {
      throw ValidationError("rater '" + j.rater_id + "' judged item '" + j.item_id + "' twice", line);
    }
    out.push_back(std::move(j));
  });
  return out;
}

void save_judgments(const std::filesystem::path& path, std::span<const Judgment> judgments) {
  std::vector<Json> rows;
  for (const auto& j : judgments) {
    rows.push_back({{"item_id", j.item_id}, {"rater_id", j.rater_id}, {"decision", decision_name(j.decision)}});
  }
  write_jsonl(path, rows);
}

Json judge_report_row(const std::string& name, std::span<const JudgedItem> items) {
  Json scores = Json::object();
  Json counts = Json::object();
  for (const auto& s : score_items(items)) {
    scores[s.category] = s.score;
    counts[s.category] = s.items;
  }
  const auto flagged = std::count_if(items.begin(), items.end(), [](const JudgedItem& i) { return i.flagged(); });
  return Json{{"name", name}, {"scores", scores}, {"items", counts}, {"flagged", flagged}};
}

}  // namespace compcap
