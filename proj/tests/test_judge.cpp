#include <doctest.h>

#include "compcap/baselines.hpp"
#include "compcap/judge.hpp"
#include "test_util.hpp"

using namespace compcap;

namespace {

Judgment vote(const std::string& item, const std::string& rater, Decision d) { return {item, rater, d}; }

}  // namespace

TEST_SUITE("judge") {
  TEST_CASE("decision names round trip") {
    for (Decision d : {Decision::correct_assignment, Decision::swapped_assignment, Decision::cannot_tell}) {
      CHECK(parse_decision(decision_name(d)) == d);
    }
    CHECK_THROWS_AS(parse_decision("maybe"), std::invalid_argument);
  }

  TEST_CASE("consensus needs a quorum") {
    std::vector<Judgment> js{vote("i", "a", Decision::correct_assignment),
                             vote("i", "b", Decision::swapped_assignment),
                             vote("i", "c", Decision::correct_assignment)};
    CHECK(consensus(js) == Decision::correct_assignment);
    js[2].decision = Decision::cannot_tell;
    CHECK_FALSE(consensus(js).has_value());
    CHECK(consensus(js, 1).has_value());
    js[2].rater_id = "a";
    CHECK_THROWS_AS(consensus(js), std::invalid_argument);
    js[2] = vote("j", "c", Decision::cannot_tell);
    CHECK_THROWS_AS(consensus(js), std::invalid_argument);
    CHECK_THROWS_AS(consensus(std::vector<Judgment>{}), std::invalid_argument);
  }

  TEST_CASE("category scores average plus and minus one") {
    std::vector<JudgedItem> items{{"1", "genus", Decision::correct_assignment, 3},
                                  {"2", "genus", Decision::swapped_assignment, 3},
                                  {"3", "genus", Decision::correct_assignment, 3},
                                  {"4", "genus", std::nullopt, 3},
                                  {"5", "visual", Decision::cannot_tell, 2}};
    auto scores = score_items(items);
    REQUIRE(scores.size() == 2);
    CHECK(scores[0].category == "visual");
    CHECK(scores[0].score == 0.0);
    CHECK(scores[1].score == 0.25);
    CHECK(scores[1].items == 4);
    items.push_back({"6", "kingdom", std::nullopt, 3});
    CHECK_THROWS_AS(score_items(items), std::invalid_argument);
  }

  TEST_CASE("partial items use a majority of the judgments present") {
    std::vector<Judgment> js{vote("full", "a", Decision::correct_assignment),
                             vote("full", "b", Decision::correct_assignment),
                             vote("full", "c", Decision::swapped_assignment),
                             vote("one", "a", Decision::swapped_assignment),
                             vote("two", "a", Decision::swapped_assignment),
                             vote("two", "b", Decision::correct_assignment)};
    std::map<std::string, std::string> cats{{"full", "species"}, {"one", "species"}, {"two", "class"}};
    auto items = judge_items(js, cats);
    REQUIRE(items.size() == 3);
    CHECK(items[0].decision == Decision::correct_assignment);
    CHECK_FALSE(items[0].flagged());
    CHECK(items[1].decision == Decision::swapped_assignment);
    CHECK(items[1].flagged());
    CHECK_FALSE(items[2].decision.has_value());
    Json row = judge_report_row("m", items);
    CHECK(row["flagged"] == 2);
    CHECK(row["scores"]["species"] == 0.0);
    cats.erase("two");
    CHECK_THROWS_AS(judge_items(js, cats), ValidationError);
  }

  TEST_CASE("the programmatic reader checks claims under both assignments") {
    BirdAttributes big{2, 0, 1, 0}, small{0, 5, 0, 0};
    const std::string right = synthetic_caption(big, small);
    CHECK(programmatic_decision(right, big, small) == Decision::correct_assignment);
    CHECK(programmatic_decision(right, small, big) == Decision::swapped_assignment);
    CHECK(programmatic_decision(kSameCaption, big, small) == Decision::cannot_tell);
    CHECK(programmatic_decision("nice birds.", big, small) == Decision::cannot_tell);
    // one right claim and one wrong claim cancel out
    CHECK(programmatic_decision("Animal 1 is larger than Animal 2. Animal 1 has a shorter beak than Animal 2.",
                                big, small) == Decision::cannot_tell);
    // a claim that holds under neither assignment
    CHECK(programmatic_decision("Animal 1 is white, while Animal 2 is black.", big, small) ==
          Decision::cannot_tell);
    auto js = programmatic_judgments("x", Decision::correct_assignment);
    CHECK(js.size() == 3);
    CHECK(consensus(js) == Decision::correct_assignment);
  }

  TEST_CASE("scores stay within minus one and one") {
    Rng rng(3);
    const Decision all[] = {Decision::correct_assignment, Decision::swapped_assignment, Decision::cannot_tell};
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<JudgedItem> items;
      const std::size_t n = 1 + rng.uniform_index(20);
      for (std::size_t i = 0; i < n; ++i) {
        std::optional<Decision> d;
        if (rng.uniform_index(4) != 0) d = all[rng.uniform_index(3)];
        items.push_back({std::to_string(i), std::string(kJudgeCategories[rng.uniform_index(6)]), d, 3});
      }
      for (const auto& s : score_items(items)) {
        CHECK(s.score >= -1.0);
        CHECK(s.score <= 1.0);
      }
    }
  }

  TEST_CASE("judgment files round trip and reject repeats") {
    testutil::TempDir dir("judge");
    std::vector<Judgment> js{vote("i", "a", Decision::correct_assignment), vote("i", "b", Decision::cannot_tell)};
    save_judgments(dir / "j.jsonl", js);
    auto back = load_judgments(dir / "j.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(back[1].decision == Decision::cannot_tell);
    testutil::write_text(dir / "dup.jsonl",
                         "{\"item_id\":\"i\",\"rater_id\":\"a\",\"decision\":\"cannot_tell\"}\n"
                         "{\"item_id\":\"i\",\"rater_id\":\"a\",\"decision\":\"cannot_tell\"}\n");
    CHECK_THROWS_AS(load_judgments(dir / "dup.jsonl"), ValidationError);
    testutil::write_text(dir / "bad.jsonl", "{\"item_id\":\"i\",\"rater_id\":\"a\",\"decision\":\"yes\"}\n");
    CHECK_THROWS_AS(load_judgments(dir / "bad.jsonl"), ValidationError);
  }
}
