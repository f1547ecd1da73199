#include "compcap/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

namespace compcap {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (!(learning_rate > 0.0)) fail("learning rate must be positive");
  if (!(decay > 0.0 && decay <= 1.0)) fail("decay must lie in (0, 1]");
  if (!(clip > 0.0)) fail("clip magnitude must be positive");
  if (!(adagrad_epsilon > 0.0)) fail("Adagrad epsilon must be positive");
  if (batch_size == 0) fail("batch size must be at least 1");
  if (decay_interval == 0) fail("decay interval must be at least 1");
}

Json TrainConfig::to_json() const {
  return Json{{"learning_rate", learning_rate},
              {"decay", decay},
              {"decay_interval", decay_interval},
              {"clip", clip},
              {"clip_mode", clip_mode == ClipMode::global_norm ? "global_norm" : "value"},
              {"adagrad_epsilon", adagrad_epsilon},
              {"batch_size", batch_size},
              {"steps", steps},
              {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const Json& j) {
  TrainConfig c;
  try {
    c.learning_rate = j.at("learning_rate").get<double>();
    c.decay = j.at("decay").get<double>();
    c.decay_interval = j.at("decay_interval").get<std::uint64_t>();
    c.clip = j.at("clip").get<double>();
    const std::string mode = j.at("clip_mode").get<std::string>();
    if (mode != "global_norm" && mode != "value") {
      throw std::invalid_argument("train config: unknown clip mode '" + mode + "'");
    }
    c.clip_mode = mode == "value" ? ClipMode::value : ClipMode::global_norm;
    c.adagrad_epsilon = j.at("adagrad_epsilon").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.steps = j.at("steps").get<std::uint64_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::uint64_t scaled_decay_interval(std::uint64_t steps) {
  const double scaled = std::round(20000.0 * double(steps) / 700000.0);
  return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(scaled));
}

double lr_at(std::uint64_t step, const TrainConfig& config) {
  return config.learning_rate * std::pow(config.decay, double(step / config.decay_interval));
}

StepResult train_step(Model& model, std::span<const Example> batch, const TrainConfig& config,
                      OptimizerState& state) {
  config.validate();
  if (batch.empty()) {
    throw std::invalid_argument("train_step: empty batch");
  }
  ParameterStore& params = model.params();
  params.zero_grad();
  StepResult result;
  {
    Graph g;
    Var loss = model.loss(g, batch);
    result.loss = g.value(loss)[0];
    g.backward(loss);
  }

  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    if (!p.grad.all_finite()) {
      throw NonFiniteError("train_step: gradient of parameter '" + p.name + "' is not finite");
    }
    for (double v : p.grad.data()) sq += v * v;
  }
  result.grad_norm = std::sqrt(sq);
  if (config.clip_mode == ClipMode::global_norm) {
    if (result.grad_norm > config.clip) {
      const double scale = config.clip / result.grad_norm;
      for (std::size_t i = 0; i < params.size(); ++i) {
        for (double& v : params[i].grad.data()) v *= scale;
      }
    }
  } else {
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (double& v : params[i].grad.data()) v = std::clamp(v, -config.clip, config.clip);
    }
  }
  double clipped = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double v : params[i].grad.data()) clipped += v * v;
  }
  result.clipped_norm = std::sqrt(clipped);

  result.lr = lr_at(state.step, config);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    auto [it, inserted] = state.accumulators.try_emplace(p.name, p.value.rows(), p.value.cols());
    Tensor& acc = it->second;
    if (!acc.same_shape(p.value)) {
      throw std::invalid_argument("optimizer accumulator for '" + p.name + "' has shape " +
                                  acc.shape_string());
    }
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double grad = p.grad[k];
      acc[k] += grad * grad;
      p.value[k] -= result.lr * grad / (std::sqrt(acc[k]) + config.adagrad_epsilon);
    }
  }
  ++state.step;
  return result;
}

double evaluate_loss(Model& model, std::span<const Example> examples, std::size_t batch_size) {
  if (examples.empty()) {
    throw std::invalid_argument("evaluate_loss: no examples");
  }
  batch_size = std::max<std::size_t>(1, batch_size);
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    auto batch = examples.subspan(start, std::min(batch_size, examples.size() - start));
    std::size_t n = 0;
    for (const auto& ex : batch) n += ex.target.size() + 1;
    Graph g;
    total += g.value(model.loss(g, batch))[0] * double(n);
    tokens += n;
  }
  return total / double(tokens);
}

std::vector<std::size_t> batch_indices(std::uint64_t step, std::size_t examples,
                                       std::size_t batch_size, std::uint64_t seed) {
  if (examples == 0 || batch_size == 0) {
    throw std::invalid_argument("batch_indices: need examples and a positive batch size");
  }
  std::vector<std::size_t> out;
  std::uint64_t position = step * batch_size;
  std::uint64_t cached_epoch = ~std::uint64_t{0};
  std::vector<std::size_t> perm;
  while (out.size() < batch_size) {
    const std::uint64_t epoch = position / examples;
    if (epoch != cached_epoch) {
      perm.resize(examples);
      for (std::size_t i = 0; i < examples; ++i) perm[i] = i;
      Rng rng(derive_seed(seed, "epoch:" + std::to_string(epoch)));
      rng.shuffle(std::span(perm));
      cached_epoch = epoch;
    }
    out.push_back(perm[position % examples]);
    ++position;
  }
  return out;
}

Checkpoint capture_training(const Model& model, const Vocabulary& vocabulary,
                            const OptimizerState& state, const TrainConfig& config) {
  Checkpoint ck = capture_model(model, vocabulary);
  ck.step = state.step;
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    const std::string& name = model.params()[i].name;
    auto it = state.accumulators.find(name);
    if (it != state.accumulators.end()) {
      ck.tensors.emplace_back("adagrad/" + name, it->second);
    }
  }
  ck.metadata["train_config"] = config.to_json();
  return ck;
}

OptimizerState restore_training(Model& model, const Checkpoint& checkpoint) {
  restore_model(model, checkpoint);
  OptimizerState state;
  state.step = checkpoint.step;
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    const Parameter& p = model.params()[i];
    if (const Tensor* acc = checkpoint.find("adagrad/" + p.name)) {
      if (!acc->same_shape(p.value)) {
        throw std::invalid_argument("checkpoint accumulator for '" + p.name + "' has shape " +
                                    acc->shape_string());
      }
      state.accumulators.emplace(p.name, *acc);
    }
  }
  return state;
}

std::vector<TraceEntry> fit(Model& model, std::span<const Example> examples,
                            const TrainConfig& config, OptimizerState& state,
                            const FitOptions& options) {
  config.validate();
  if (examples.empty()) {
    throw std::invalid_argument("fit: empty training set");
  }
  if (options.checkpoint_path && !options.vocabulary) {
    throw std::invalid_argument("fit: checkpoints need the vocabulary");
  }
  std::ofstream log;
  if (options.log_path) {
    log.open(*options.log_path, state.step == 0 ? std::ios::trunc : std::ios::app);
    if (!log) {
      throw std::runtime_error("cannot write training log " + options.log_path->string());
    }
  }
  auto save = [&](Json& line) {
    if (!options.dev.empty()) {
      line["dev_loss"] = evaluate_loss(model, options.dev, config.batch_size);
    }
    if (options.checkpoint_path) {
      save_checkpoint(*options.checkpoint_path,
                      capture_training(model, *options.vocabulary, state, config), TensorDtype::f64);
    }
  };

  const auto start = std::chrono::steady_clock::now();
  std::vector<TraceEntry> trace;
  std::vector<Example> batch;
  while (state.step < config.steps) {
    batch.clear();
    for (std::size_t i : batch_indices(state.step, examples.size(), config.batch_size, config.seed)) {
      batch.push_back(examples[i]);
    }
    const StepResult r = train_step(model, batch, config, state);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    trace.push_back({state.step, r.loss, r.lr, ms});
    Json line{{"step", state.step}, {"loss", r.loss}, {"lr", r.lr}, {"wall_ms", ms}};
    const bool periodic = options.checkpoint_every > 0 && state.step % options.checkpoint_every == 0;
    bool keep_going = !options.on_step || options.on_step(trace.back());
    if (periodic || state.step == config.steps || !keep_going) save(line);
    if (log) log << line.dump() << '\n' << std::flush;
    if (!keep_going) break;
  }
  return trace;
}

std::vector<Example> make_examples(std::span<const DatasetRecord> records, const GridTable& grids,
                                   const Vocabulary& vocabulary) {
  std::vector<Example> out;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& rec : records) {
    auto g1 = grids.find(rec.pair.i1);
    auto g2 = grids.find(rec.pair.i2);
    if (g1 == grids.end() || g2 == grids.end()) {
      throw std::invalid_argument("pair '" + rec.pair.pair_id + "' references image '" +
                                  (g1 == grids.end() ? rec.pair.i1 : rec.pair.i2) +
                                  "' with no feature grid");
    }
    for (const auto& p : rec.references) {
      if (!seen.insert({rec.pair.pair_id, join_tokens(p.tokens)}).second) continue;
      out.push_back({rec.pair.pair_id, &g1->second, &g2->second, vocabulary.encode(p.tokens)});
    }
  }
  return out;
}

}  // namespace compcap
