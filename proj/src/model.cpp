#include "compcap/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "compcap/rng.hpp"

namespace compcap {

namespace {

Tensor random_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Tensor t(rows, cols);
  for (double& v : t.data()) v = stddev * rng.normal();
  return t;
}

std::string layer_name(const char* stack, std::size_t i) { return std::string(stack) + std::to_string(i); }

}  // namespace

const char* block_name(JointBlock b) {
  static const char* kNames[] = {"e1", "e2", "sub", "add", "max", "mul"};
  return kNames[static_cast<int>(b)];
}

std::vector<JointBlock> JointEncodingSpec::blocks() const {
  std::vector<JointBlock> out;
  if (include_e1) out.push_back(JointBlock::e1);
  if (include_e2) out.push_back(JointBlock::e2);
  auto has = [&](Mutation m) { return std::find(mutations.begin(), mutations.end(), m) != mutations.end(); };
  if (has(Mutation::sub)) out.push_back(JointBlock::sub);
  if (has(Mutation::add)) out.push_back(JointBlock::add);
  if (has(Mutation::max)) out.push_back(JointBlock::max);
  if (has(Mutation::mul)) out.push_back(JointBlock::mul);
  return out;
}

std::string JointEncodingSpec::to_string() const {
  std::string out;
  for (JointBlock b : blocks()) {
    if (!out.empty()) out += ',';
    out += block_name(b);
  }
  return out;
}

JointEncodingSpec JointEncodingSpec::parse(std::string_view text) {
  JointEncodingSpec spec{false, false, {}};
  std::stringstream in{std::string(text)};
  std::string item;
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    Mutation m{};
    if (item == "e1") {
      spec.include_e1 = true;
      continue;
    } else if (item == "e2") {
      spec.include_e2 = true;
      continue;
    } else if (item == "add") {
      m = Mutation::add;
    } else if (item == "sub") {
      m = Mutation::sub;
    } else if (item == "max") {
      m = Mutation::max;
    } else if (item == "mul") {
      m = Mutation::mul;
    } else {
      throw std::invalid_argument("joint encoding: unknown block '" + item +
                                  "' (expected e1, e2, sub, add, max, mul)");
    }
    if (std::find(spec.mutations.begin(), spec.mutations.end(), m) == spec.mutations.end()) {
      spec.mutations.push_back(m);
    }
  }
  if (spec.blocks().empty()) {
    throw std::invalid_argument("joint encoding: no blocks selected");
  }
  return spec;
}

ModelConfig ModelConfig::full_scale(std::size_t vocab_size) {
  ModelConfig c;
  c.hidden = 512;
  c.heads = 8;
  c.comparative.layers = 6;
  c.decoder_layers = 6;
  c.joint = JointEncodingSpec{false, false, {Mutation::mul}};
  c.vocab_size = vocab_size;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (d < 1 || f < 1) fail("d and f must be at least 1");
  if (hidden < 1 || heads < 1 || hidden % heads != 0) {
    fail("hidden size " + std::to_string(hidden) + " is not divisible by " + std::to_string(heads) +
         " heads");
  }
  if (ff_multiplier < 1) fail("ff_multiplier must be at least 1");
  if (joint.blocks().empty()) fail("joint encoding selects no blocks");
  if (comparative.mode == ComparativeSpec::Mode::encoder && comparative.layers < 1) {
    fail("encoder comparative module needs at least one layer");
  }
  if (decoder_layers < 1) fail("decoder needs at least one layer");
  if (vocab_size <= static_cast<std::size_t>(Vocabulary::kAnimal2)) {
    fail("vocabulary of " + std::to_string(vocab_size) + " tokens lacks the special tokens");
  }
  if (max_decode_length < 1) fail("max_decode_length must be at least 1");
}

Json ModelConfig::to_json() const {
  return Json{{"d", d},
              {"f", f},
              {"hidden", hidden},
              {"heads", heads},
              {"ff_multiplier", ff_multiplier},
              {"joint", joint.to_string()},
              {"comparative", comparative.mode == ComparativeSpec::Mode::encoder ? "encoder" : "passthrough"},
              {"comparative_layers", comparative.layers},
              {"decoder_layers", decoder_layers},
              {"vocab_size", vocab_size},
              {"max_decode_length", max_decode_length}};
}

ModelConfig ModelConfig::from_json(const Json& j) {
  ModelConfig c;
  try {
    c.d = j.at("d").get<std::size_t>();
    c.f = j.at("f").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.ff_multiplier = j.at("ff_multiplier").get<std::size_t>();
    c.joint = JointEncodingSpec::parse(j.at("joint").get<std::string>());
    const std::string mode = j.at("comparative").get<std::string>();
    if (mode != "encoder" && mode != "passthrough") {
      throw std::invalid_argument("model config: unknown comparative mode '" + mode + "'");
    }
    c.comparative.mode =
        mode == "encoder" ? ComparativeSpec::Mode::encoder : ComparativeSpec::Mode::passthrough;
    c.comparative.layers = j.at("comparative_layers").get<std::size_t>();
    c.decoder_layers = j.at("decoder_layers").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_decode_length = j.at("max_decode_length").get<std::size_t>();
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

Var joint_pre_embedding(Graph& g, Var e1, Var e2, const JointEncodingSpec& spec) {
  std::vector<Var> parts;
  for (JointBlock b : spec.blocks()) {
    switch (b) {
      case JointBlock::e1:
        parts.push_back(e1);
        break;
      case JointBlock::e2:
        parts.push_back(e2);
        break;
      case JointBlock::sub:
        parts.push_back(g.sub(e1, e2));
        break;
      case JointBlock::add:
        parts.push_back(g.add(e1, e2));
        break;
      case JointBlock::max:
        parts.push_back(g.maximum(e1, e2));
        break;
      case JointBlock::mul:
        parts.push_back(g.mul(e1, e2));
        break;
    }
  }
  if (parts.empty()) {
    throw std::invalid_argument("joint encoding: no blocks selected");
  }
  return parts.size() == 1 ? parts.front() : g.concat(parts, 0);
}

Tensor sinusoidal_positions(std::size_t rows, std::size_t width) {
  Tensor t(rows, width);
  for (std::size_t p = 0; p < rows; ++p) {
    for (std::size_t i = 0; i < width; ++i) {
      const double rate = std::pow(10000.0, -double(i - i % 2) / double(width));
      t(p, i) = i % 2 == 0 ? std::sin(double(p) * rate) : std::cos(double(p) * rate);
    }
  }
  return t;
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(derive_seed(seed, "model-init"));
  const std::size_t h = config_.hidden;
  add_linear("embed/proj", config_.f, h, rng);
  params_.add("joint/segment", random_normal(kJointBlockKinds, h, 0.1, rng));
  params_.add("joint/position", random_normal(config_.d * config_.d, h, 0.1, rng));
  if (config_.comparative.mode == ComparativeSpec::Mode::encoder) {
    for (std::size_t i = 0; i < config_.comparative.layers; ++i) {
      const std::string l = layer_name("enc", i);
      add_attention(l + "/attn", rng);
      add_norm(l + "/ln1");
      add_feed_forward(l + "/ff", rng);
      add_norm(l + "/ln2");
    }
  }
  params_.add("dec/embed", random_normal(config_.vocab_size, h, 1.0, rng));
  for (std::size_t i = 0; i < config_.decoder_layers; ++i) {
    const std::string l = layer_name("dec", i);
    add_attention(l + "/self", rng);
    add_norm(l + "/ln1");
    add_attention(l + "/cross", rng);
    add_norm(l + "/ln2");
    add_feed_forward(l + "/ff", rng);
    add_norm(l + "/ln3");
  }
  add_linear("dec/out", h, config_.vocab_size, rng);
  positions_ = sinusoidal_positions(config_.max_decode_length, h);
}

void Model::add_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  params_.add(name + "/w", random_normal(in, out, 1.0 / std::sqrt(double(in)), rng));
  params_.add(name + "/b", Tensor(1, out));
}

void Model::add_attention(const std::string& name, Rng& rng) {
  for (const char* p : {"/q", "/k", "/v", "/o"}) add_linear(name + p, config_.hidden, config_.hidden, rng);
}

void Model::add_norm(const std::string& name) {
  params_.add(name + "/gain", Tensor(1, config_.hidden, 1.0));
  params_.add(name + "/bias", Tensor(1, config_.hidden));
}

void Model::add_feed_forward(const std::string& name, Rng& rng) {
  const std::size_t inner = config_.hidden * config_.ff_multiplier;
  add_linear(name + "/in", config_.hidden, inner, rng);
  add_linear(name + "/out", inner, config_.hidden, rng);
}

Var Model::linear(Graph& g, const std::string& name, Var x) {
  Var w = g.param(params_.get(name + "/w"));
  Var b = g.param(params_.get(name + "/b"));
  return g.add(g.matmul(x, w), b);
}

Var Model::norm(Graph& g, const std::string& name, Var x) {
  return g.layer_norm(x, g.param(params_.get(name + "/gain")), g.param(params_.get(name + "/bias")));
}

Var Model::feed_forward(Graph& g, const std::string& name, Var x) {
  return linear(g, name + "/out", g.relu(linear(g, name + "/in", x)));
}

Var Model::attention(Graph& g, const std::string& name, Var x, Var memory,
                     std::span<const std::size_t> x_lengths,
                     std::span<const std::size_t> memory_lengths, bool causal) {
  Var q = linear(g, name + "/q", x);
  Var k = linear(g, name + "/k", memory);
  Var v = linear(g, name + "/v", memory);
  return linear(g, name + "/o", g.attention(q, k, v, config_.heads, x_lengths, memory_lengths, causal));
}

void Model::check_grid(const FeatureGrid& grid) const {
  if (grid.d != config_.d || grid.f != config_.f || grid.values.size() != grid.d * grid.d * grid.f) {
    throw std::invalid_argument("feature grid '" + grid.image_id + "' has shape (" +
                                std::to_string(grid.d) + ", " + std::to_string(grid.d) + ", " +
                                std::to_string(grid.f) + "); the model expects (" +
                                std::to_string(config_.d) + ", " + std::to_string(config_.d) +
                                ", " + std::to_string(config_.f) + ")");
  }
}

std::pair<Var, Var> Model::embed_images(Graph& g, const FeatureGrid& first, const FeatureGrid& second) {
  check_grid(first);
  check_grid(second);
  const std::size_t cells = config_.d * config_.d;
  Var x1 = g.constant(Tensor(cells, config_.f, first.values));
  Var x2 = g.constant(Tensor(cells, config_.f, second.values));
  return {linear(g, "embed/proj", x1), linear(g, "embed/proj", x2)};
}

std::size_t Model::memory_rows() const { return config_.joint.blocks().size() * config_.d * config_.d; }

namespace {

// Adds segment and position embeddings to a block-major pre-embedding of
// `pairs` pairs and reorders it so each pair's blocks are contiguous.
struct JointLayout {
  std::vector<int> order;     // pair-major row -> block-major row
  std::vector<int> segments;  // segment embedding row per output row
  std::vector<int> cells;     // position embedding row per output row
};

JointLayout joint_layout(const std::vector<JointBlock>& blocks, std::size_t pairs, std::size_t cells) {
  JointLayout l;
  for (std::size_t p = 0; p < pairs; ++p) {
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      for (std::size_t c = 0; c < cells; ++c) {
        l.order.push_back(static_cast<int>((b * pairs + p) * cells + c));
        l.segments.push_back(static_cast<int>(blocks[b]));
        l.cells.push_back(static_cast<int>(c));
      }
    }
  }
  return l;
}

}  // namespace

Var Model::joint_encode(Graph& g, Var e1, Var e2) {
  const std::size_t cells = config_.d * config_.d;
  const std::size_t pairs = g.value(e1).rows() / cells;
  const JointLayout l = joint_layout(config_.joint.blocks(), pairs, cells);
  Var pre = joint_pre_embedding(g, e1, e2, config_.joint);
  if (pairs > 1) pre = g.gather_rows(pre, l.order);
  Var segment = g.gather_rows(g.param(params_.get("joint/segment")), l.segments);
  Var position = g.gather_rows(g.param(params_.get("joint/position")), l.cells);
  return g.add(g.add(pre, segment), position);
}

Var Model::compare(Graph& g, Var joint) {
  const std::size_t lengths[] = {g.value(joint).rows()};
  return compare_segments(g, joint, lengths);
}

Var Model::compare_segments(Graph& g, Var joint, std::span<const std::size_t> lengths) {
  if (config_.comparative.mode == ComparativeSpec::Mode::passthrough) {
    return joint;
  }
  Var c = joint;
  for (std::size_t i = 0; i < config_.comparative.layers; ++i) {
    const std::string l = layer_name("enc", i);
    Var h = norm(g, l + "/ln1", g.add(c, attention(g, l + "/attn", c, c, lengths, lengths, false)));
    c = norm(g, l + "/ln2", g.add(h, feed_forward(g, l + "/ff", h)));
  }
  return c;
}

Var Model::encode(Graph& g, const FeatureGrid& first, const FeatureGrid& second) {
  const GridPair pair{&first, &second};
  return encode_batch(g, std::span(&pair, 1));
}

Var Model::encode_batch(Graph& g, std::span<const GridPair> pairs) {
  if (pairs.empty()) {
    throw std::invalid_argument("encode: no image pairs");
  }
  const std::size_t cells = config_.d * config_.d;
  std::vector<double> v1;
  std::vector<double> v2;
  v1.reserve(pairs.size() * cells * config_.f);
  v2.reserve(pairs.size() * cells * config_.f);
  for (const auto& [first, second] : pairs) {
    if (!first || !second) {
      throw std::invalid_argument("encode: missing feature grid");
    }
    check_grid(*first);
    check_grid(*second);
    v1.insert(v1.end(), first->values.begin(), first->values.end());
    v2.insert(v2.end(), second->values.begin(), second->values.end());
  }
  const std::size_t rows = pairs.size() * cells;
  Var e1 = linear(g, "embed/proj", g.constant(Tensor(rows, config_.f, std::move(v1))));
  Var e2 = linear(g, "embed/proj", g.constant(Tensor(rows, config_.f, std::move(v2))));
  const std::vector<std::size_t> lengths(pairs.size(), memory_rows());
  return compare_segments(g, joint_encode(g, e1, e2), lengths);
}

Var Model::decode_logits(Graph& g, Var memory, std::span<const int> inputs) {
  const std::size_t lengths[] = {g.value(memory).rows()};
  const std::vector<int> seq(inputs.begin(), inputs.end());
  return decode_batch(g, memory, lengths, std::span(&seq, 1));
}

Var Model::decode_batch(Graph& g, Var memory, std::span<const std::size_t> memory_lengths,
                        std::span<const std::vector<int>> inputs) {
  if (inputs.size() != memory_lengths.size()) {
    throw std::invalid_argument("decode: " + std::to_string(inputs.size()) + " sequences for " +
                                std::to_string(memory_lengths.size()) + " memories");
  }
  std::vector<int> tokens;
  std::vector<int> positions;
  std::vector<std::size_t> lengths;
  for (const auto& seq : inputs) {
    const std::size_t n = seq.size();
    if (n == 0 || n > config_.max_decode_length) {
      throw std::invalid_argument("decoder input of " + std::to_string(n) +
                                  " tokens; expected 1.." + std::to_string(config_.max_decode_length));
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (seq[i] < 0 || static_cast<std::size_t>(seq[i]) >= config_.vocab_size) {
        throw std::invalid_argument("token id " + std::to_string(seq[i]) + " outside vocabulary of " +
                                    std::to_string(config_.vocab_size));
      }
      tokens.push_back(seq[i]);
      positions.push_back(static_cast<int>(i));
    }
    lengths.push_back(n);
  }
  Var pos = g.constant(g.value(g.gather_rows(g.constant(positions_), positions)));
  Var x = g.add(g.gather_rows(g.param(params_.get("dec/embed")), tokens), pos);
  for (std::size_t i = 0; i < config_.decoder_layers; ++i) {
    const std::string l = layer_name("dec", i);
    Var h1 = norm(g, l + "/ln1", g.add(x, attention(g, l + "/self", x, x, lengths, lengths, true)));
    Var h2 = norm(g, l + "/ln2",
                  g.add(h1, attention(g, l + "/cross", h1, memory, lengths, memory_lengths, false)));
    x = norm(g, l + "/ln3", g.add(h2, feed_forward(g, l + "/ff", h2)));
  }
  return linear(g, "dec/out", x);
}

Var Model::loss(Graph& g, std::span<const Example> batch) {
  if (batch.empty()) {
    throw std::invalid_argument("loss: empty batch");
  }
  std::vector<GridPair> pairs;
  std::vector<std::vector<int>> inputs;
  std::vector<int> targets;
  for (const auto& ex : batch) {
    if (!ex.first || !ex.second) {
      throw std::invalid_argument("loss: example '" + ex.pair_id + "' is missing a feature grid");
    }
    pairs.emplace_back(ex.first, ex.second);
    std::vector<int> in{Vocabulary::kBos};
    in.insert(in.end(), ex.target.begin(), ex.target.end());
    inputs.push_back(std::move(in));
    targets.insert(targets.end(), ex.target.begin(), ex.target.end());
    targets.push_back(Vocabulary::kEos);
  }
  Var memory = encode_batch(g, pairs);
  const std::vector<std::size_t> lengths(batch.size(), memory_rows());
  return g.cross_entropy(decode_batch(g, memory, lengths, inputs), targets);
}

Tensor Model::encode_value(const FeatureGrid& first, const FeatureGrid& second) {
  Graph g;
  return g.value(encode(g, first, second));
}

std::vector<double> Model::next_log_probs(const Tensor& memory, std::span<const int> prefix) {
  Graph g;
  Var logits = decode_logits(g, g.constant(memory), prefix);
  auto last = g.value(logits).row(g.value(logits).rows() - 1);
  const double mx = *std::max_element(last.begin(), last.end());
  double total = 0.0;
  for (double v : last) total += std::exp(v - mx);
  const double log_z = mx + std::log(total);
  std::vector<double> out(last.size());
  for (std::size_t i = 0; i < last.size(); ++i) out[i] = last[i] - log_z;
  return out;
}

}  // namespace compcap
