#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "compcap/baselines.hpp"
#include "compcap/metrics.hpp"
#include "eval_corpus.hpp"
#include "oracles/metric_oracle.hpp"

using namespace compcap;
using testutil::words;

namespace {

std::vector<oracle::Item> as_items(const std::vector<EvalInstance>& xs) {
  std::vector<oracle::Item> out;
  for (const auto& x : xs) out.push_back({x.candidate, x.references});
  return out;
}

std::vector<EvalInstance> random_corpus(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  const Tokens vocab = words("a b c d e f <animal1> <animal2> .");
  auto sentence = [&] {
    Tokens s;
    const std::size_t len = rng.uniform_index(12);
    for (std::size_t i = 0; i < len; ++i) s.push_back(vocab[rng.uniform_index(vocab.size())]);
    return s;
  };
  std::vector<EvalInstance> out;
  for (std::size_t i = 0; i < n; ++i) {
    EvalInstance e{"r" + std::to_string(i), sentence(), {}};
    const std::size_t refs = 1 + rng.uniform_index(4);
    for (std::size_t r = 0; r < refs; ++r) {
      Tokens ref = sentence();
      if (ref.empty()) ref.push_back("a");
      e.references.push_back(ref);
    }
    out.push_back(std::move(e));
  }
  return out;
}

DatasetRecord record(const std::string& id, const std::string& i1, const std::string& i2,
                     std::vector<std::string> texts) {
  DatasetRecord r{{id, i1, i2, Provenance::visual, std::nullopt, {"c"}}, {}};
  for (std::size_t k = 0; k < texts.size(); ++k) r.references.push_back(make_paragraph(id, "r" + std::to_string(k), texts[k]));
  return r;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("identical candidates score one on BLEU and ROUGE-L") {
    std::vector<EvalInstance> xs{{"a", words("x y z w v"), {words("x y z w v")}},
                                 {"b", words("p q r s"), {words("p q r s"), words("q")}}};
    CHECK(bleu4(xs) == 1.0);
    CHECK(rouge_l(xs) == 1.0);
  }

  TEST_CASE("worked ROUGE-L and brevity examples") {
    std::vector<EvalInstance> xs{{"a", words("a b c d"), {words("a c d e")}}};
    CHECK(rouge_l(xs) == doctest::Approx(0.75));
    // candidate of 4 against a 6-token reference; all n-grams match
    std::vector<EvalInstance> short_one{{"a", words("a b c d"), {words("a b c d e f")}}};
    CHECK(bleu4(short_one) == doctest::Approx(std::exp(1.0 - 6.0 / 4.0)));
    std::vector<EvalInstance> empty{{"a", {}, {words("a b")}}};
    CHECK(bleu4(empty) == 0.0);
    CHECK(rouge_l(empty) == 0.0);
  }

  TEST_CASE("closest reference length prefers the shorter on ties") {
    std::vector<EvalInstance> xs{{"a", words("a b c d e"), {words("a b c d"), words("a b c d e f")}}};
    // r = 4 < c = 5, so no brevity penalty; 4 references' n-grams clip matches
    CHECK(bleu4(xs) == doctest::Approx(oracle::bleu4(as_items(xs))).epsilon(1e-12));
    CHECK(bleu4(xs) == doctest::Approx(1.0));
  }

  TEST_CASE("metrics agree with the from-definition oracles") {
    auto hand = testutil::hand_corpus();
    CHECK(std::abs(bleu4(hand) - oracle::bleu4(as_items(hand))) < 1e-9);
    CHECK(std::abs(rouge_l(hand) - oracle::rouge_l(as_items(hand))) < 1e-9);
    CHECK(std::abs(cider_d(hand) - oracle::cider_d(as_items(hand))) < 1e-9);
    for (std::uint64_t seed = 0; seed < 15; ++seed) {
      auto xs = random_corpus(seed, 8);
      CHECK(std::abs(bleu4(xs) - oracle::bleu4(as_items(xs))) < 1e-9);
      CHECK(std::abs(rouge_l(xs) - oracle::rouge_l(as_items(xs))) < 1e-9);
      CHECK(std::abs(cider_d(xs) - oracle::cider_d(as_items(xs))) < 1e-9);
    }
  }

  TEST_CASE("corpus scores do not depend on instance order") {
    auto xs = testutil::hand_corpus();
    const double b = bleu4(xs), r = rouge_l(xs), c = cider_d(xs);
    std::reverse(xs.begin(), xs.end());
    CHECK(bleu4(xs) == doctest::Approx(b).epsilon(1e-14));
    CHECK(rouge_l(xs) == doctest::Approx(r).epsilon(1e-14));
    CHECK(cider_d(xs) == doctest::Approx(c).epsilon(1e-14));
  }

  TEST_CASE("metric ranges and degenerate inputs") {
    auto xs = testutil::hand_corpus();
    for (double v : cider_d_scores(xs)) CHECK(v >= 0.0);
    CHECK(bleu4(xs) <= 1.0);
    CHECK(rouge_l(xs) <= 1.0);
    CHECK_THROWS_AS(cider_d(std::span(xs).first(1)), std::invalid_argument);
    CHECK_THROWS_AS(bleu4(std::vector<EvalInstance>{}), std::invalid_argument);
    std::vector<EvalInstance> no_refs{{"a", words("a"), {}}};
    CHECK_THROWS_AS(rouge_l(no_refs), std::invalid_argument);
  }

  TEST_CASE("evaluation report carries per-instance scores") {
    auto xs = testutil::hand_corpus();
    MetricReport r = evaluate(xs);
    CHECK(r.bleu4 == bleu4(xs));
    CHECK(r.cider_d == doctest::Approx(cider_d(xs)));
    Json j = r.to_json(true);
    CHECK(j["instances"].size() == xs.size());
    CHECK(j["instances"][3]["pair_id"] == "h3");
    CHECK_FALSE(r.to_json().contains("instances"));
  }

  TEST_CASE("one-vs-rest baseline on identical references") {
    std::vector<EvalInstance> xs;
    for (int i = 0; i < 4; ++i) {
      Tokens ref = words("<animal1> is larger than <animal2> number " + std::to_string(i) + " .");
      xs.push_back({"p" + std::to_string(i), {}, std::vector<Tokens>(5, ref)});
    }
    for (Metric m : {Metric::bleu4, Metric::rouge_l}) {
      BaselineStats s = human_baseline(xs, m, 25, 1);
      CHECK(s.mean == 1.0);
      CHECK(s.stddev == 0.0);
      CHECK(s.runs.size() == 25);
    }
  }

  TEST_CASE("one-vs-rest baseline is seeded and uses population spread") {
    auto xs = testutil::hand_corpus();
    BaselineStats a = human_baseline(xs, Metric::rouge_l, 10, 3);
    BaselineStats b = human_baseline(xs, Metric::rouge_l, 10, 3);
    CHECK(a.runs == b.runs);
    double var = 0;
    for (double v : a.runs) var += (v - a.mean) * (v - a.mean);
    CHECK(a.stddev == doctest::Approx(std::sqrt(var / 10)));
    std::vector<EvalInstance> single{{"a", {}, {words("a b")}}};
    CHECK_THROWS_AS(human_baseline(single, Metric::bleu4, 5, 0), std::invalid_argument);
    CHECK_THROWS_AS(human_baseline(xs, Metric::bleu4, 0, 0), std::invalid_argument);
  }

  TEST_CASE("most frequent baseline breaks ties lexicographically") {
    std::vector<DatasetRecord> train{record("a", "1", "2", {"b text", "a text", "b text"}),
                                     record("b", "3", "4", {"a text", "c text"})};
    MostFrequentBaseline mf(train);
    CHECK(mf.text() == "a text");
    CHECK(mf.count() == 2);
  }

  TEST_CASE("text-only baseline samples by frequency independent of query order") {
    std::vector<DatasetRecord> train{record("a", "1", "2", {"x", "x", "x", "y"})};
    TextOnlyBaseline t(train, 5);
    CHECK(t.paragraphs() == std::vector<std::string>{"x", "y"});
    CHECK(t.weights() == std::vector<double>{3, 1});
    const std::string first = t.generate("q7");
    for (int i = 0; i < 5; ++i) t.generate("q" + std::to_string(i));
    CHECK(t.generate("q7") == first);
    int xs = 0;
    for (int i = 0; i < 400; ++i) xs += t.generate("q" + std::to_string(i)) == "x";
    CHECK(xs > 250);
    CHECK(xs < 350);
  }

  TEST_CASE("nearest neighbour baseline matches pooled features") {
    GridTable grids = index_grids({{"1", 1, 2, {0, 0}}, {"2", 1, 2, {1, 0}}, {"3", 1, 2, {5, 5}},
                                   {"4", 1, 2, {6, 5}}, {"q1", 1, 2, {4.8, 5}}, {"q2", 1, 2, {6.1, 5}}});
    std::vector<DatasetRecord> train{record("b", "1", "2", {"near origin"}),
                                     record("a", "3", "4", {"far away"}),
                                     record("c", "3", "4", {"duplicate"})};
    NearestNeighborBaseline nn(train, grids, 1);
    NeighborMatch m = nn.nearest(grids.at("q1"), grids.at("q2"));
    CHECK(m.pair_id == "a");
    CHECK(m.distance == doctest::Approx(0.3));
    CHECK(nn.generate("x", grids.at("q1"), grids.at("q2")) == "far away");
    CHECK(nn.nearest(grids.at("1"), grids.at("2")).distance == 0.0);
    std::vector<DatasetRecord> missing{record("z", "1", "nope", {"t"})};
    CHECK_THROWS_AS(NearestNeighborBaseline(missing, grids, 1), std::invalid_argument);
  }
}
