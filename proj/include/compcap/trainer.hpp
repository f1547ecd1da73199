#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "compcap/checkpoint.hpp"
#include "compcap/model.hpp"

namespace compcap {

enum class ClipMode { global_norm, value };

/// Defaults follow the full-scale schedule except batch size and step count,
/// which are desk-scale (full scale: batch 2048, 700k steps).
struct TrainConfig {
  double learning_rate = 0.01;
  double decay = 0.9;
  std::uint64_t decay_interval = 20000;
  double clip = 5.0;
  ClipMode clip_mode = ClipMode::global_norm;
  double adagrad_epsilon = 1e-8;
  std::size_t batch_size = 16;
  std::uint64_t steps = 5000;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on a non-positive rate or clip, decay
  /// outside (0, 1], or zero batch size / interval.
  void validate() const;
  Json to_json() const;
  static TrainConfig from_json(const Json& j);
};

/// Decay interval scaled from the full-scale 20k-of-700k to `steps`, at least 1.
std::uint64_t scaled_decay_interval(std::uint64_t steps);

/// lr0 * decay^floor(step / interval).
double lr_at(std::uint64_t step, const TrainConfig& config);

struct OptimizerState {
  std::map<std::string, Tensor> accumulators;
  std::uint64_t step = 0;
};

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;     // before clipping
  double clipped_norm = 0.0;  // after clipping
  double lr = 0.0;
};

/// Forward, backward, clip, Adagrad update
///   acc += g^2;  theta -= lr * g / (sqrt(acc) + eps)
/// and increments the step. A non-finite loss or gradient throws
/// NonFiniteError naming the offending operation or parameter.
StepResult train_step(Model& model, std::span<const Example> batch, const TrainConfig& config,
                      OptimizerState& state);

/// Mean per-token loss without touching gradients.
double evaluate_loss(Model& model, std::span<const Example> examples, std::size_t batch_size = 16);

/// Example indices of the batch used at `step`: consecutive slices of an
/// endless stream of per-epoch permutations, each seeded by (seed, epoch), so
/// a run resumed at any step sees the same batches.
std::vector<std::size_t> batch_indices(std::uint64_t step, std::size_t examples,
                                       std::size_t batch_size, std::uint64_t seed);

struct TraceEntry {
  std::uint64_t step = 0;  // steps completed
  double loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

struct FitOptions {
  std::optional<std::filesystem::path> log_path;  // JSONL {step, loss, lr, wall_ms}
  std::optional<std::filesystem::path> checkpoint_path;
  std::uint64_t checkpoint_every = 0;  // 0: only at the end when a path is set
  const Vocabulary* vocabulary = nullptr;  // required for checkpoints
  std::span<const Example> dev;
  /// Called after every step; returning false stops training early.
  std::function<bool(const TraceEntry&)> on_step;
};

/// Trains until state.step reaches config.steps. Checkpoints carry the
/// optimizer accumulators in float64 so a resumed run continues bit-exactly.
std::vector<TraceEntry> fit(Model& model, std::span<const Example> examples,
                            const TrainConfig& config, OptimizerState& state,
                            const FitOptions& options = {});

Checkpoint capture_training(const Model& model, const Vocabulary& vocabulary,
                            const OptimizerState& state, const TrainConfig& config);
/// Restores parameters and optimizer state saved by capture_training.
OptimizerState restore_training(Model& model, const Checkpoint& checkpoint);

/// Unique (pair, paragraph) examples from records, with targets encoded by
/// `vocabulary`. Throws std::invalid_argument when a grid is missing.
std::vector<Example> make_examples(std::span<const DatasetRecord> records, const GridTable& grids,
                                   const Vocabulary& vocabulary);

}  // namespace compcap
