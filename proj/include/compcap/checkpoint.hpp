#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "compcap/corpus.hpp"
#include "compcap/jsonl.hpp"
#include "compcap/model.hpp"

namespace compcap {

enum class TensorDtype { f32, f64 };

/// A single file: one JSON manifest line (format, dtype, model config,
/// vocabulary with its hash, step, tensor names and shapes, metadata)
/// followed by the little-endian payload of every tensor in manifest order.
struct Checkpoint {
  ModelConfig config;
  std::vector<std::string> vocabulary;
  std::uint64_t step = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;
  Json metadata = Json::object();

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint,
                     TensorDtype dtype = TensorDtype::f32);
/// Throws ValidationError on a malformed manifest, a vocabulary whose hash
/// does not match, or a payload of the wrong length.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parameter tensors of the model in registration order.
Checkpoint capture_model(const Model& model, const Vocabulary& vocabulary);
/// Copies every model parameter from the checkpoint. Throws
/// std::invalid_argument when the config differs or a tensor is missing or
/// has the wrong shape.
void restore_model(Model& model, const Checkpoint& checkpoint);
/// Builds a model from the checkpoint's config and parameters.
Model model_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace compcap
