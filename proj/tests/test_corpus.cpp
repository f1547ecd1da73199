#include <doctest.h>

#include "compcap/corpus.hpp"
#include "compcap/jsonl.hpp"
#include "test_util.hpp"

using namespace compcap;

using Strings = std::vector<std::string>;

TEST_SUITE("corpus") {
  TEST_CASE("mentions of either animal become placeholder tokens") {
    CHECK(preprocess("Animal 1 is larger than animal2.") ==
          Strings{"<animal1>", "is", "larger", "than", "<animal2>", "."});
    CHECK(preprocess("ANIMAL ONE, unlike Animal Two!") ==
          Strings{"<animal1>", ",", "unlike", "<animal2>", "!"});
    CHECK(preprocess("animal 1's beak") == Strings{"<animal1>", "'s", "beak"});
    // not mentions: other numbers, longer words
    CHECK(preprocess("animal 12 animals1 animal") == Strings{"animal", "12", "animals1", "animal"});
  }

  TEST_CASE("punctuation is detached and text is lowercased") {
    CHECK(preprocess("  Both (gray) birds; \"small\".  ") ==
          Strings{"both", "(", "gray", ")", "birds", ";", "\"", "small", "\"", "."});
  }

  TEST_CASE("paragraphs are clipped to the token limit") {
    std::string text;
    for (int i = 0; i < 100; ++i) text += "w" + std::to_string(i) + " ";
    CHECK(preprocess(text).size() == kMaxParagraphTokens);
    CHECK(preprocess(text, 0).size() == 100);
    CHECK(preprocess(text, 3) == Strings{"w0", "w1", "w2"});
    CHECK_THROWS_AS(preprocess("   \n "), std::invalid_argument);
  }

  TEST_CASE("sentence counting") {
    CHECK(count_sentences("One. Two! Three?") == 3);
    CHECK(count_sentences("One. Two") == 2);
    CHECK(count_sentences("Value 3.5 is fine.") == 1);
    CHECK(count_sentences("") == 0);
    CHECK(count_sentences("...") == 1);
  }

  TEST_CASE("vocabulary puts specials first then frequency then text order") {
    std::vector<Strings> corpus{{"b", "a", "c"}, {"a", "c", "<animal1>"}, {"a", "d"}};
    Vocabulary v = Vocabulary::build(corpus);
    CHECK(v.tokens() == Strings{"<pad>", "<bos>", "<eos>", "<unk>", "<animal1>", "<animal2>",
                                "a", "c", "b", "d"});
    CHECK(v.id("<animal1>") == Vocabulary::kAnimal1);
    CHECK(v.id("zzz") == Vocabulary::kUnk);
    Vocabulary pruned = Vocabulary::build(corpus, 2);
    CHECK(pruned.size() == 8);
    std::vector<int> ids{Vocabulary::kBos, v.id("a"), v.id("c"), Vocabulary::kEos, v.id("b")};
    CHECK(v.detokenize(ids) == "a c");
    CHECK(v.decode(v.encode(Strings{"d", "a"})) == Strings{"d", "a"});
    CHECK_THROWS_AS(v.token(99), std::out_of_range);
    CHECK_THROWS_AS(Vocabulary(Strings{"a"}), std::invalid_argument);
  }

  TEST_CASE("vocabulary files round trip with the same hash") {
    testutil::TempDir dir("corpus");
    Vocabulary v = Vocabulary::build(std::vector<Strings>{{"x", "y"}});
    v.save(dir / "v.txt");
    Vocabulary back = Vocabulary::load(dir / "v.txt");
    CHECK(back.tokens() == v.tokens());
    CHECK(back.hash() == v.hash());
    CHECK(Vocabulary::build(std::vector<Strings>{{"x", "z"}}).hash() != v.hash());
  }

  TEST_CASE("feature grids round trip through float32 payloads") {
    testutil::TempDir dir("corpus");
    FeatureGrid g{"img", 2, 3, {}};
    for (int i = 0; i < 12; ++i) g.values.push_back(static_cast<float>(0.1 * i - 0.3));
    FeatureGrid h{"other", 1, 2, {1.5, -2.0}};
    std::vector<FeatureGrid> grids{g, h};
    save_feature_grids(dir / "g.jsonl", grids);
    CHECK(std::filesystem::file_size(dir / "g.bin") == 14 * 4);
    auto back = load_feature_grids(dir / "g.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(back[0].values == g.values);
    CHECK(back[1].values == h.values);
    CHECK(back[0].at(1, 0, 2) == g.values[(1 * 2 + 0) * 3 + 2]);
    CHECK(h.mean_pooled() == std::vector<double>{1.5, -2.0});

    testutil::write_text(dir / "g.bin", "short");
    CHECK_THROWS_AS(load_feature_grids(dir / "g.jsonl"), ValidationError);
    CHECK_THROWS_AS(index_grids({g, g}), ValidationError);
  }

  TEST_CASE("records round trip and join keeps only annotated pairs") {
    testutil::TempDir dir("corpus");
    ImagePair a{"a", "1", "2", Provenance::visual, std::nullopt, {"c"}};
    ImagePair b{"b", "1", "3", Provenance::taxonomic, 2, {"c"}};
    std::vector<Paragraph> paras{make_paragraph("a", "r0", "Animal 1 is small."),
                                 make_paragraph("a", "r1", "Animal 2 is big. It sings.")};
    std::vector<ImagePair> pairs{a, b};
    auto records = join_records(pairs, paras);
    REQUIRE(records.size() == 1);
    CHECK(records[0].references.size() == 2);
    save_records(dir / "r.jsonl", records);
    auto back = load_records(dir / "r.jsonl");
    REQUIRE(back.size() == 1);
    CHECK(back[0].pair == a);
    CHECK(back[0].references[1].tokens == paras[1].tokens);

    auto stats = corpus_stats(records);
    CHECK(stats.pairs == 1);
    CHECK(stats.paragraphs_per_pair == 2.0);
    CHECK(stats.tokens_per_paragraph == doctest::Approx((4 + 7) / 2.0));
    CHECK(stats.sentences_per_paragraph == 1.5);
    CHECK_THROWS_AS(corpus_stats(std::vector<DatasetRecord>{}), std::invalid_argument);
  }

  TEST_CASE("a blank paragraph is reported with its line") {
    testutil::TempDir dir("corpus");
    testutil::write_text(dir / "p.jsonl",
                         "{\"pair_id\":\"a\",\"rater_id\":\"r\",\"text\":\"fine\"}\n"
                         "{\"pair_id\":\"a\",\"rater_id\":\"s\",\"text\":\"  \"}\n");
    try {
      load_paragraphs(dir / "p.jsonl");
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      CHECK(e.line() == 2);
    }
  }
}
