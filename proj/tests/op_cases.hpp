#pragma once

// Scalar test functions exercising one differentiable operation each. Every
// output is reduced as sum(out * W) with a fixed random W so that upstream
// gradients are not uniform.

#include <cmath>
#include <string>
#include <vector>

#include "compcap/autodiff.hpp"
#include "compcap/rng.hpp"

namespace testutil {

struct OpCase {
  std::string name;
  compcap::ScalarFunction fn;
  std::vector<compcap::Tensor> inputs;
};

inline compcap::Tensor random_tensor(std::size_t r, std::size_t c, compcap::Rng& rng, double scale = 1.0) {
  compcap::Tensor t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

// Entries bounded away from zero (for relu/max kinks).
inline compcap::Tensor away_from_zero(std::size_t r, std::size_t c, compcap::Rng& rng) {
  compcap::Tensor t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double m = 0.2 + rng.uniform01();
    t[i] = rng.uniform01() < 0.5 ? -m : m;
  }
  return t;
}

inline compcap::Var weighted_sum(compcap::Graph& g, compcap::Var out, std::uint64_t seed) {
  compcap::Rng rng(seed);
  const auto& v = g.value(out);
  return g.sum(g.mul(out, g.constant(random_tensor(v.rows(), v.cols(), rng))));
}

inline std::vector<OpCase> op_cases() {
  using compcap::Graph;
  using compcap::Tensor;
  using compcap::Var;
  compcap::Rng rng(2024);
  std::vector<OpCase> cases;
  auto add_case = [&](std::string name, std::vector<Tensor> inputs, auto body) {
    cases.push_back({std::move(name),
                     [body](Graph& g, std::span<const Var> x) { return weighted_sum(g, body(g, x), 7); },
                     std::move(inputs)});
  };
  add_case("matmul", {random_tensor(3, 4, rng), random_tensor(4, 2, rng)},
           [](Graph& g, std::span<const Var> x) { return g.matmul(x[0], x[1]); });
  add_case("matmul_nt", {random_tensor(3, 4, rng), random_tensor(5, 4, rng)},
           [](Graph& g, std::span<const Var> x) { return g.matmul_nt(x[0], x[1]); });
  add_case("add", {random_tensor(3, 4, rng), random_tensor(3, 4, rng)},
           [](Graph& g, std::span<const Var> x) { return g.add(x[0], x[1]); });
  add_case("add_broadcast", {random_tensor(3, 4, rng), random_tensor(1, 4, rng)},
           [](Graph& g, std::span<const Var> x) { return g.add(x[0], x[1]); });
  add_case("sub_broadcast", {random_tensor(3, 4, rng), random_tensor(1, 4, rng)},
           [](Graph& g, std::span<const Var> x) { return g.sub(x[0], x[1]); });
  add_case("mul", {random_tensor(3, 4, rng), random_tensor(3, 4, rng)},
           [](Graph& g, std::span<const Var> x) { return g.mul(x[0], x[1]); });
  add_case("mul_broadcast", {random_tensor(3, 4, rng), random_tensor(1, 4, rng)},
           [](Graph& g, std::span<const Var> x) { return g.mul(x[0], x[1]); });
  {
    Tensor a = random_tensor(3, 4, rng);
    Tensor b = a;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += (i % 2 ? 0.5 : -0.5);
    add_case("maximum", {a, b}, [](Graph& g, std::span<const Var> x) { return g.maximum(x[0], x[1]); });
  }
  add_case("concat_rows", {random_tensor(2, 3, rng), random_tensor(4, 3, rng)},
           [](Graph& g, std::span<const Var> x) { return g.concat(x.first(2), 0); });
  add_case("concat_cols", {random_tensor(2, 3, rng), random_tensor(2, 1, rng)},
           [](Graph& g, std::span<const Var> x) { return g.concat(x.first(2), 1); });
  add_case("transpose", {random_tensor(2, 5, rng)},
           [](Graph& g, std::span<const Var> x) { return g.transpose(x[0]); });
  add_case("scale", {random_tensor(2, 5, rng)},
           [](Graph& g, std::span<const Var> x) { return g.scale(x[0], -1.7); });
  add_case("relu", {away_from_zero(3, 5, rng)},
           [](Graph& g, std::span<const Var> x) { return g.relu(x[0]); });
  add_case("softmax_rows", {random_tensor(3, 5, rng)},
           [](Graph& g, std::span<const Var> x) { return g.softmax(x[0], 1); });
  add_case("softmax_cols", {random_tensor(3, 5, rng)},
           [](Graph& g, std::span<const Var> x) { return g.softmax(x[0], 0); });
  add_case("layer_norm", {random_tensor(3, 6, rng), random_tensor(1, 6, rng), random_tensor(1, 6, rng)},
           [](Graph& g, std::span<const Var> x) { return g.layer_norm(x[0], x[1], x[2]); });
  add_case("slice_cols", {random_tensor(3, 6, rng)},
           [](Graph& g, std::span<const Var> x) { return g.slice_cols(x[0], 2, 3); });
  add_case("slice_rows", {random_tensor(5, 3, rng)},
           [](Graph& g, std::span<const Var> x) { return g.slice_rows(x[0], 1, 3); });
  add_case("gather_rows", {random_tensor(4, 3, rng)}, [](Graph& g, std::span<const Var> x) {
    const int ids[] = {2, 0, 2, 3};
    return g.gather_rows(x[0], ids);
  });
  add_case("map_tanh", {random_tensor(3, 3, rng)}, [](Graph& g, std::span<const Var> x) {
    return g.map(x[0], [](double v) { return std::tanh(v); },
                 [](double v) { return 1.0 - std::tanh(v) * std::tanh(v); });
  });
  add_case("attention_segments", {random_tensor(5, 4, rng), random_tensor(7, 4, rng), random_tensor(7, 4, rng)},
           [](Graph& g, std::span<const Var> x) {
             const std::size_t ql[] = {2, 3};
             const std::size_t kl[] = {3, 4};
             return g.attention(x[0], x[1], x[2], 2, ql, kl, false);
           });
  add_case("attention_causal", {random_tensor(6, 4, rng), random_tensor(6, 4, rng), random_tensor(6, 4, rng)},
           [](Graph& g, std::span<const Var> x) {
             const std::size_t l[] = {4, 2};
             return g.attention(x[0], x[1], x[2], 2, l, l, true);
           });
  cases.push_back({"cross_entropy",
                   [](Graph& g, std::span<const Var> x) {
                     const int t[] = {1, 0, 4, 2};
                     return g.cross_entropy(x[0], t);
                   },
                   {random_tensor(4, 5, rng)}});
  cases.push_back({"cross_entropy_masked",
                   [](Graph& g, std::span<const Var> x) {
                     const int t[] = {1, 0, 4, 2};
                     const bool m[] = {true, false, true, true};
                     return g.cross_entropy(x[0], t, m);
                   },
                   {random_tensor(4, 5, rng)}});
  cases.push_back({"sum", [](Graph& g, std::span<const Var> x) { return g.sum(x[0]); },
                   {random_tensor(2, 3, rng)}});
  return cases;
}

}  // namespace testutil
