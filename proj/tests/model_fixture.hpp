#pragma once

// Small random inputs for model tests and the configurations of every
// joint-encoding and comparative-module variant.

#include <string>
#include <vector>

#include "compcap/autodiff.hpp"
#include "compcap/model.hpp"

namespace testutil {

inline compcap::FeatureGrid random_grid(const std::string& id, std::size_t d, std::size_t f, compcap::Rng& rng) {
  compcap::FeatureGrid g{id, d, f, {}};
  for (std::size_t i = 0; i < d * d * f; ++i) g.values.push_back(rng.normal());
  return g;
}

struct ModelInputs {
  std::vector<compcap::FeatureGrid> grids;
  std::vector<compcap::Example> examples;
};

// Two examples over four random grids with short targets in a 12-token vocabulary.
inline ModelInputs model_inputs(const compcap::ModelConfig& c, std::uint64_t seed) {
  compcap::Rng rng(seed);
  ModelInputs in;
  for (int i = 0; i < 4; ++i) in.grids.push_back(random_grid("g" + std::to_string(i), c.d, c.f, rng));
  in.examples.push_back({"a", &in.grids[0], &in.grids[1], {6, 7, 4, 8}});
  in.examples.push_back({"b", &in.grids[2], &in.grids[3], {5, 9, 10}});
  return in;
}

struct Variant {
  std::string name;
  compcap::JointEncodingSpec joint;
  compcap::ComparativeSpec comparative;
};

// Joint-encoding rows (each with a 2-layer comparative encoder), then the
// comparative-module rows for three encodings with no encoder, 1 and 2 layers.
inline std::vector<Variant> model_variants() {
  using compcap::ComparativeSpec;
  using compcap::JointEncodingSpec;
  std::vector<Variant> out;
  const ComparativeSpec two{ComparativeSpec::Mode::encoder, 2};
  for (const char* joint : {"e1,e2", "sub", "add", "max", "mul", "e1,e2,sub", "e1,e2,add", "e1,e2,max",
                            "e1,e2,mul", "e1,e2,sub,add,max,mul"}) {
    out.push_back({std::string(joint) + " / encoder x2", JointEncodingSpec::parse(joint), two});
  }
  for (const char* joint : {"mul", "sub", "e1,e2,sub"}) {
    out.push_back({std::string(joint) + " / passthrough", JointEncodingSpec::parse(joint),
                   {ComparativeSpec::Mode::passthrough, 0}});
    out.push_back({std::string(joint) + " / encoder x1", JointEncodingSpec::parse(joint),
                   {ComparativeSpec::Mode::encoder, 1}});
    out.push_back({std::string(joint) + " / encoder x2", JointEncodingSpec::parse(joint), two});
  }
  return out;
}

inline compcap::ModelConfig desk_config(const Variant& v) {
  compcap::ModelConfig c;
  c.joint = v.joint;
  c.comparative = v.comparative;
  c.vocab_size = 12;
  return c;
}

// Worst relative error of sampled parameter gradients of the batch loss.
inline compcap::ParameterCheckReport model_gradient_check(const compcap::ModelConfig& c, std::uint64_t seed) {
  compcap::Model model(c, seed);
  ModelInputs in = model_inputs(c, seed + 1);
  compcap::ParameterCheckOptions opts;
  opts.seed = seed;
  return compcap::grad_check_parameters(
      model.params(), [&](compcap::Graph& g) { return model.loss(g, in.examples); }, opts);
}

}  // namespace testutil
