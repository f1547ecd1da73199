#include <doctest.h>

#include <cmath>

#include "compcap/jsonl.hpp"
#include "compcap/visual_index.hpp"
#include "oracles/knn_oracle.hpp"
#include "test_util.hpp"

using namespace compcap;

namespace {

std::vector<Embedding> gaussian(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Embedding> out;
  for (std::size_t i = 0; i < n; ++i) {
    Embedding e{"img" + std::to_string(1000 + i), {"c" + std::to_string(i % 7)}, {}};
    for (std::size_t d = 0; d < dim; ++d) e.vector.push_back(rng.normal());
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

TEST_SUITE("visual_index") {
  TEST_CASE("codes span 0..255 on every non-constant dimension") {
    auto data = gaussian(50, 4, 1);
    data[0].vector[3] = 0.0;
    for (auto& e : data) e.vector[3] = 2.5;  // constant dimension
    auto index = QuantizedIndex::build(data);
    for (std::size_t d = 0; d < 3; ++d) {
      int lo = 255, hi = 0;
      for (const auto& id : index.ids()) {
        lo = std::min<int>(lo, index.codes(id)[d]);
        hi = std::max<int>(hi, index.codes(id)[d]);
      }
      CHECK(lo == 0);
      CHECK(hi == 255);
    }
    CHECK(index.step(3) == 0.0);
    auto round = index.quantize_roundtrip(data[5].vector);
    for (std::size_t d = 0; d < 3; ++d) CHECK(std::abs(round[d] - data[5].vector[d]) <= index.step(d) / 2 + 1e-12);
    CHECK(round[3] == 2.5);
  }

  TEST_CASE("knn excludes the query and the exclusion set") {
    auto data = gaussian(30, 3, 2);
    auto index = QuantizedIndex::build(data);
    auto all = index.knn("img1000", 29);
    CHECK(all.ids.size() == 29);
    CHECK_FALSE(all.truncated);
    CHECK(std::find(all.ids.begin(), all.ids.end(), "img1000") == all.ids.end());
    auto without = index.knn("img1000", 2, {all.ids[0]});
    CHECK(without.ids == std::vector<std::string>{all.ids[1], all.ids[2]});
    auto more = index.knn("img1000", 40);
    CHECK(more.truncated);
    CHECK(more.ids.size() == 29);
  }

  TEST_CASE("equidistant neighbours come back in id order") {
    // The corners fix the code step at exactly 1.
    std::vector<Embedding> data{{"m", {"c"}, {100.0, 100.0}},
                                {"b", {"c"}, {101.0, 100.0}},
                                {"a", {"c"}, {99.0, 100.0}},
                                {"c", {"c"}, {100.0, 101.0}},
                                {"lo", {"c"}, {0.0, 0.0}},
                                {"hi", {"c"}, {255.0, 255.0}}};
    auto index = QuantizedIndex::build(data);
    CHECK(index.knn("m", 3).ids == std::vector<std::string>{"a", "b", "c"});
  }

  TEST_CASE("knn matches the exhaustive oracle") {
    auto data = gaussian(200, 8, 3);
    auto index = QuantizedIndex::build(data);
    for (std::size_t q = 0; q < data.size(); q += 7) {
      CHECK(index.knn(data[q].image_id, 5).ids == oracle::knn(index, data[q].image_id, 5));
    }
  }

  TEST_CASE("bad input is rejected") {
    CHECK_THROWS_AS(QuantizedIndex::build(std::vector<Embedding>{}), std::invalid_argument);
    std::vector<Embedding> mixed{{"a", {"c"}, {1.0}}, {"b", {"c"}, {1.0, 2.0}}};
    CHECK_THROWS_AS(QuantizedIndex::build(mixed), std::invalid_argument);
    std::vector<Embedding> dup{{"a", {"c"}, {1.0}}, {"a", {"c"}, {2.0}}};
    CHECK_THROWS_AS(QuantizedIndex::build(dup), std::invalid_argument);
    std::vector<Embedding> nan{{"a", {"c"}, {std::nan("")}}};
    CHECK_THROWS_AS(QuantizedIndex::build(nan), std::invalid_argument);
    auto index = QuantizedIndex::build(gaussian(5, 2, 4));
    CHECK_THROWS_AS(index.knn("img1000", 0), std::invalid_argument);
    CHECK_THROWS_AS(index.knn("missing", 1), std::out_of_range);
  }

  TEST_CASE("embedding files round trip and report bad lines") {
    testutil::TempDir dir("vi");
    auto data = gaussian(4, 3, 5);
    save_embeddings(dir / "e.jsonl", data);
    auto back = load_embeddings(dir / "e.jsonl");
    REQUIRE(back.size() == 4);
    CHECK(back[2].vector == data[2].vector);
    CHECK(back[2].class_id == data[2].class_id);
    testutil::write_text(dir / "bad.jsonl",
                         "{\"image_id\":\"a\",\"class_id\":\"c\",\"vector\":[1,2]}\n"
                         "{\"image_id\":\"b\",\"class_id\":\"c\",\"vector\":[1]}\n");
    try {
      load_embeddings(dir / "bad.jsonl");
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      CHECK(e.line() == 2);
    }
  }

  TEST_CASE("similarity is one at zero distance and decreases with distance") {
    std::vector<double> a{0, 0}, b{1, 0}, c{3, 4};
    CHECK(visual_similarity(a, a, 2.0) == 1.0);
    CHECK(visual_similarity(a, b, 2.0) == doctest::Approx(std::exp(-0.5)));
    CHECK(visual_similarity(a, c, 2.0) < visual_similarity(a, b, 2.0));
    CHECK(visual_similarity(a, c, 2.0) > 0.0);
    CHECK(visual_similarity(a, b, 1.0) == visual_similarity(b, a, 1.0));
    CHECK_THROWS_AS(visual_similarity(a, b, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(visual_similarity(a, std::vector<double>{1.0}, 1.0), std::invalid_argument);
  }

  TEST_CASE("similarity scale is the median pairwise code distance") {
    std::vector<Embedding> line{{"a", {"c"}, {0.0}}, {"b", {"c"}, {1.0}}, {"c", {"c"}, {3.0}}};
    auto index = QuantizedIndex::build(line);
    // distances 1, 2, 3 (codes are exact at 0, 85, 255 steps of 3/255)
    CHECK(index.similarity_scale() == doctest::Approx(index.distance("a", "c") - index.distance("a", "b")));
    std::vector<Embedding> same{{"a", {"c"}, {1.0}}, {"b", {"c"}, {1.0}}};
    CHECK(QuantizedIndex::build(same).similarity_scale() == 1.0);
  }
}
