#include <doctest.h>

#include <cmath>

#include "compcap/decoding.hpp"
#include "decode_fixture.hpp"
#include "model_fixture.hpp"

using namespace compcap;
using testutil::table_step;

namespace {

// Three tokens, no eos, two steps. Greedy takes 0 then 0 (0.2); the best
// sequence is 1 then 0 (0.36).
StepFunction two_step_table() {
  return table_step({{{1}, {0.5, 0.4, 0.1}},
                     {{1, 0}, {0.4, 0.3, 0.3}},
                     {{1, 1}, {0.9, 0.05, 0.05}},
                     {{1, 2}, {1.0 / 3, 1.0 / 3, 1.0 / 3}}});
}

DecodeOptions no_eos(std::size_t length) {
  DecodeOptions o;
  o.eos = std::nullopt;
  o.max_length = length;
  return o;
}

}  // namespace

TEST_SUITE("decoding") {
  TEST_CASE("greedy takes the argmax and breaks ties to the lowest id") {
    auto step = table_step({{{1}, {0.25, 0.5, 0.25}}, {{1, 1}, {0.4, 0.2, 0.4}}});
    Hypothesis h = greedy_decode(step, no_eos(2));
    CHECK(h.tokens == std::vector<int>{1, 0});
    CHECK(h.log_prob == doctest::Approx(std::log(0.5 * 0.4)));
    CHECK_FALSE(h.finished);
  }

  TEST_CASE("greedy stops at eos") {
    DecodeOptions o;
    o.eos = 2;
    o.max_length = 10;
    auto step = table_step({{{1}, {0.3, 0.3, 0.4}}});
    Hypothesis h = greedy_decode(step, o);
    CHECK(h.tokens == std::vector<int>{2});
    CHECK(h.finished);
  }

  TEST_CASE("beam of two finds the sequence greedy misses") {
    auto step = two_step_table();
    Hypothesis g = greedy_decode(step, no_eos(2));
    auto beams = beam_decode(step, no_eos(2), 2);
    REQUIRE(beams.size() == 2);
    CHECK(g.tokens == std::vector<int>{0, 0});
    CHECK(beams[0].tokens == std::vector<int>{1, 0});
    CHECK(beams[1].tokens == std::vector<int>{0, 0});
    CHECK(beams[0].log_prob == std::log(0.4) + std::log(0.9));
  }

  TEST_CASE("beam of one is greedy on random tables") {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      auto step = table_step({}, 6, seed);
      DecodeOptions o;
      o.eos = 5;
      o.max_length = 8;
      Hypothesis g = greedy_decode(step, o);
      CHECK(beam_decode(step, o, 1).front() == g);
    }
  }

  TEST_CASE("wider beams never score worse") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto step = table_step({}, 5, seed);
      double prev = -INFINITY;
      for (std::size_t w : {1, 2, 4, 8}) {
        auto beams = beam_decode(step, no_eos(3), w);
        CHECK(beams.front().log_prob >= prev - 1e-12);
        prev = beams.front().log_prob;
        for (std::size_t i = 1; i < beams.size(); ++i) CHECK(beams[i - 1].log_prob >= beams[i].log_prob);
      }
    }
  }

  TEST_CASE("a finished hypothesis can win without length normalisation") {
    DecodeOptions o;
    o.eos = 2;
    o.max_length = 5;
    // eos first is 0.45; any longer path is at most 0.55 * 0.5
    auto step = table_step({{{1}, {0.55, 0.0001, 0.4499}},
                            {{1, 0}, {0.5, 0.0, 0.5}},
                            {{1, 1}, {0.5, 0.0, 0.5}}}, 3, 1);
    auto beams = beam_decode(step, o, 2);
    CHECK(beams.front().tokens == std::vector<int>{2});
    CHECK(beams.front().finished);
  }

  TEST_CASE("sampling is seeded and approaches greedy when cold") {
    auto step = table_step({}, 6, 3);
    DecodeOptions o;
    o.eos = 5;
    o.max_length = 6;
    Rng a(1), b(1);
    CHECK(sample_decode(step, o, 1.0, a) == sample_decode(step, o, 1.0, b));
    Rng c(2);
    CHECK(sample_decode(step, o, 1e-4, c).tokens == greedy_decode(step, o).tokens);
    CHECK_THROWS_AS(sample_decode(step, o, 0.0, c), std::invalid_argument);
    CHECK_THROWS_AS(beam_decode(step, o, 0), std::invalid_argument);
  }

  TEST_CASE("model generation is deterministic for greedy and beam") {
    ModelConfig c;
    c.hidden = 16;
    c.heads = 2;
    c.comparative.layers = 1;
    c.decoder_layers = 1;
    c.vocab_size = 12;
    Model m(c, 5);
    auto in = testutil::model_inputs(c, 6);
    GenerationOptions opts;
    opts.max_length = 6;
    Rng rng(0);
    opts.mode = DecodeMode::greedy;
    Hypothesis greedy = generate(m, in.grids[0], in.grids[1], opts, rng);
    CHECK(greedy.tokens.size() <= 6);
    CHECK(generate(m, in.grids[0], in.grids[1], opts, rng) == greedy);
    opts.mode = DecodeMode::beam;
    opts.beam_width = 1;
    CHECK(generate(m, in.grids[0], in.grids[1], opts, rng) == greedy);
    opts.beam_width = 3;
    CHECK(generate(m, in.grids[0], in.grids[1], opts, rng).log_prob >= greedy.log_prob);
  }
}
