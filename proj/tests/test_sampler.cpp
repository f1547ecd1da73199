#include <doctest.h>

#include <set>

#include "compcap/jsonl.hpp"
#include "compcap/sampler.hpp"
#include "compcap/synthetic.hpp"
#include "test_util.hpp"

using namespace compcap;

namespace {

const SyntheticWorld& world() {
  static const SyntheticWorld w = make_world(WorldConfig{});
  return w;
}

ClarityRating rating(const std::string& image, const std::string& rater, bool ok) {
  return {image, rater, true, true, ok, true};
}

}  // namespace

TEST_SUITE("sampler") {
  TEST_CASE("annotation cost for independent and pivot-branch sampling") {
    CHECK(annotation_cost(2.0 / 3.0, SamplingStrategy::paired) == doctest::Approx(2.25).epsilon(1e-14));
    CHECK(annotation_cost(2.0 / 3.0, SamplingStrategy::pivot_branch) == doctest::Approx(1.5).epsilon(1e-14));
    CHECK(annotation_cost(1.0, SamplingStrategy::paired) == 1.0);
    // pivot-branch never costs more than independent pairs
    for (double p = 0.05; p <= 1.0; p += 0.05) {
      CHECK(annotation_cost(p, SamplingStrategy::pivot_branch) <=
            annotation_cost(p, SamplingStrategy::paired));
    }
    CHECK_THROWS_AS(annotation_cost(0.0, SamplingStrategy::paired), std::domain_error);
    CHECK_THROWS_AS(annotation_cost(1.5, SamplingStrategy::pivot_branch), std::domain_error);
  }

  TEST_CASE("budget total counts visual and every taxonomic level") {
    BranchBudget b;
    CHECK(b.total() == 12);
    b.taxonomic.erase(5);
    b.visual = 3;
    CHECK(b.total() == 11);
  }

  TEST_CASE("pivots are distinct eligible classes with clear images") {
    const auto& w = world();
    auto obs = observations_from(w.embeddings);
    PivotSpec spec;
    spec.pivot_count = 10;
    Rng rng(3);
    auto pivots = select_pivots(w.taxonomy, obs, spec, rng);
    std::set<TaxonId> classes;
    for (const auto& p : pivots) {
      CHECK(classes.insert(p.class_id).second);
      CHECK(w.image(p.image_id).class_id == p.class_id);
    }
    spec.pivot_count = 25;
    CHECK_THROWS_AS(select_pivots(w.taxonomy, obs, spec, rng), std::runtime_error);
  }

  TEST_CASE("unclear images are never chosen as pivots") {
    const auto& w = world();
    auto obs = observations_from(w.embeddings);
    PivotSpec spec;
    spec.pivot_count = 24;
    spec.review_count = 6;
    auto clear = [](const std::string& id) { return id.back() != '0'; };
    Rng rng(9);
    for (const auto& p : select_pivots(w.taxonomy, obs, spec, rng, clear)) CHECK(clear(p.image_id));
    Rng rng2(9);
    auto none = [](const std::string&) { return false; };
    CHECK_THROWS_AS(select_pivots(w.taxonomy, obs, spec, rng2, none), std::runtime_error);
  }

  TEST_CASE("visual branch returns the pivot's nearest neighbours") {
    const auto& w = world();
    auto index = QuantizedIndex::build(w.embeddings);
    Pivot p{w.images[0].class_id, w.images[0].image_id};
    auto r = branch_visual(p, index, 2);
    REQUIRE(r.pairs.size() == 2);
    CHECK(r.pairs[0].i2 == index.knn(p.image_id, 2).ids[0]);
    CHECK(r.pairs[0].provenance == Provenance::visual);
    CHECK_FALSE(r.pairs[0].level.has_value());
    CHECK(r.shortfall.empty());
  }

  TEST_CASE("taxonomic branch respects the LCA of every level") {
    const auto& w = world();
    auto obs = observations_from(w.embeddings);
    Pivot p{w.images[7].class_id, w.images[7].image_id};
    Rng rng(1);
    auto r = branch_taxonomic(p, w.taxonomy, obs, BranchBudget{}, rng);
    CHECK(r.pairs.size() == 10);
    for (const auto& pair : r.pairs) {
      const TaxonId& c2 = w.image(pair.i2).class_id;
      REQUIRE(pair.level.has_value());
      if (*pair.level == 1) {
        CHECK(c2 == p.class_id);
        CHECK(pair.i2 != p.image_id);
      } else {
        CHECK(w.taxonomy.lca_levels(p.class_id, c2) == *pair.level - 1);
      }
    }
  }

  TEST_CASE("round robin spreads picks over classes before repeating") {
    const auto& w = world();
    auto obs = observations_from(w.embeddings);
    Pivot p{w.images[0].class_id, w.images[0].image_id};
    BranchBudget b;
    b.taxonomic = {{5, 12}};  // 12 species sit in the other two orders
    Rng rng(2);
    auto r = branch_taxonomic(p, w.taxonomy, obs, b, rng);
    std::set<TaxonId> classes;
    for (const auto& pair : r.pairs) classes.insert(w.image(pair.i2).class_id);
    CHECK(classes.size() == 12);
  }

  TEST_CASE("an exhausted stratum is reported as shortfall") {
    const auto& w = world();
    Observations obs = observations_from(w.embeddings);
    Pivot p{w.images[0].class_id, w.images[0].image_id};
    obs[p.class_id] = {p.image_id, "extra"};
    BranchBudget b;
    b.taxonomic = {{1, 2}};
    Rng rng(0);
    auto r = branch_taxonomic(p, w.taxonomy, obs, b, rng);
    CHECK(r.pairs.size() == 1);
    CHECK(r.shortfall.at(1) == 1);
    b.taxonomic = {{6, 1}};
    CHECK_THROWS_AS(branch_taxonomic(p, w.taxonomy, obs, b, rng), std::invalid_argument);
  }

  TEST_CASE("sampling is a function of the seed") {
    const auto& w = world();
    auto obs = observations_from(w.embeddings);
    auto index = QuantizedIndex::build(w.embeddings);
    PivotSpec spec;
    spec.pivot_count = 8;
    auto a = sample_pairs(w.taxonomy, obs, index, spec, BranchBudget{}, 11);
    auto b = sample_pairs(w.taxonomy, obs, index, spec, BranchBudget{}, 11);
    auto c = sample_pairs(w.taxonomy, obs, index, spec, BranchBudget{}, 12);
    CHECK(a.pairs == b.pairs);
    CHECK(a.pairs != c.pairs);
    CHECK(a.pairs.size() == 8 * 12);
    std::set<std::string> ids;
    for (const auto& p : a.pairs) CHECK(ids.insert(p.pair_id).second);
  }

  TEST_CASE("categories name the sampling stratum") {
    ImagePair p{"x", "a", "b", Provenance::visual, std::nullopt, {"c"}};
    CHECK(category_of(p) == "visual");
    p.provenance = Provenance::taxonomic;
    const char* names[] = {"species", "genus", "family", "order", "class"};
    for (int l = 1; l <= 5; ++l) {
      p.level = l;
      CHECK(category_of(p) == names[l - 1]);
    }
  }

  TEST_CASE("clarity gate keeps pairs whose images both reach the threshold") {
    std::vector<ClarityRating> ratings;
    for (int r = 0; r < 5; ++r) {
      ratings.push_back(rating("good", "r" + std::to_string(r), true));
      ratings.push_back(rating("edge", "r" + std::to_string(r), r != 0));  // 4/5
      ratings.push_back(rating("bad", "r" + std::to_string(r), r > 1));   // 3/5
    }
    std::vector<ImagePair> pairs{{"1", "good", "edge", Provenance::visual, std::nullopt, {"c"}},
                                 {"2", "good", "bad", Provenance::visual, std::nullopt, {"c"}},
                                 {"3", "bad", "edge", Provenance::visual, std::nullopt, {"c"}},
                                 {"4", "edge", "good", Provenance::visual, std::nullopt, {"c"}}};
    auto g = apply_clarity_gate(pairs, ratings);
    REQUIRE(g.kept.size() == 2);
    CHECK(g.kept[0].pair_id == "1");
    CHECK(g.kept[1].pair_id == "4");
    CHECK(g.retention == 0.5);
    pairs.push_back({"5", "good", "unrated", Provenance::visual, std::nullopt, {"c"}});
    CHECK_THROWS_AS(apply_clarity_gate(pairs, ratings), ValidationError);
  }

  TEST_CASE("splits are disjoint by pivot class and cover every pair") {
    std::vector<ImagePair> pairs;
    for (int c = 0; c < 10; ++c)
      for (int k = 0; k < 3; ++k)
        pairs.push_back({"p" + std::to_string(c * 3 + k), "a" + std::to_string(c), "b" + std::to_string(k),
                         Provenance::visual, std::nullopt, {"c" + std::to_string(c)}});
    Rng rng(4);
    auto s = split_dataset(pairs, 0.7, 0.2, rng);
    CHECK(s.train_classes.size() == 7);
    CHECK(s.dev_classes.size() == 2);
    CHECK(s.test_classes.size() == 1);
    CHECK(s.train.size() + s.dev.size() + s.test.size() == pairs.size());
    std::set<TaxonId> train(s.train_classes.begin(), s.train_classes.end());
    for (const auto& p : s.dev) CHECK_FALSE(train.contains(p.pivot_class));
    for (const auto& p : s.test) CHECK_FALSE(train.contains(p.pivot_class));
    Rng again(4);
    CHECK(split_dataset(pairs, 0.7, 0.2, again).train == s.train);
    CHECK_THROWS_AS(split_dataset(std::span(pairs).first(6), 0.8, 0.1, rng), std::invalid_argument);
    CHECK_THROWS_AS(split_dataset(pairs, 0.8, 0.3, rng), std::invalid_argument);
  }

  TEST_CASE("pair and rating files round trip") {
    testutil::TempDir dir("sampler");
    std::vector<ImagePair> pairs{{"a", "1", "2", Provenance::visual, std::nullopt, {"c"}},
                                 {"b", "1", "3", Provenance::taxonomic, 3, {"c"}}};
    save_pairs(dir / "p.jsonl", pairs);
    CHECK(load_pairs(dir / "p.jsonl") == pairs);
    std::vector<ClarityRating> ratings{rating("1", "r", true), rating("2", "r", false)};
    save_ratings(dir / "r.jsonl", ratings);
    auto back = load_ratings(dir / "r.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(back[0].overall());
    CHECK_FALSE(back[1].overall());
  }

  TEST_CASE("malformed pair lines are rejected with their line number") {
    testutil::TempDir dir("sampler");
    const std::string ok =
        "{\"pair_id\":\"a\",\"i1\":\"1\",\"i2\":\"2\",\"provenance\":\"visual\",\"level\":null,\"pivot_class\":\"c\"}\n";
    auto line_of = [&](const std::string& second) -> std::size_t {
      testutil::write_text(dir / "p.jsonl", ok + second);
      try {
        load_pairs(dir / "p.jsonl");
      } catch (const ValidationError& e) {
        return e.line().value_or(0);
      }
      return 0;
    };
    CHECK(line_of("{\"pair_id\":\"b\",\"i1\":\"1\",\"i2\":\"2\",\"provenance\":\"visual\",\"level\":2,\"pivot_class\":\"c\"}\n") == 2);
    CHECK(line_of("{\"pair_id\":\"b\",\"i1\":\"1\",\"i2\":\"2\",\"provenance\":\"taxonomic\",\"level\":null,\"pivot_class\":\"c\"}\n") == 2);
    CHECK(line_of("{\"pair_id\":\"b\",\"i1\":\"1\",\"i2\":\"1\",\"provenance\":\"visual\",\"level\":null,\"pivot_class\":\"c\"}\n") == 2);
    CHECK(line_of("{\"pair_id\":\"b\",\"i1\":\"1\",\"i2\":\"2\",\"provenance\":\"random\",\"level\":null,\"pivot_class\":\"c\"}\n") == 2);
    CHECK(line_of("{\"pair_id\":\"b\"}\n") == 2);
  }

  TEST_CASE("an inconsistent overall rating is rejected") {
    testutil::TempDir dir("sampler");
    testutil::write_text(dir / "r.jsonl",
                         "{\"image_id\":\"1\",\"rater_id\":\"r\",\"single_instance\":true,\"animal\":true,"
                         "\"focus\":false,\"visibility\":true,\"overall\":true}\n");
    CHECK_THROWS_AS(load_ratings(dir / "r.jsonl"), ValidationError);
  }
}
