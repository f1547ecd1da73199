#include "compcap/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace compcap {

namespace {

constexpr const char* kFormat = "compcap-checkpoint";
constexpr int kVersion = 1;

template <typename U>
U to_little_endian(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out = static_cast<U>((out << 8) | ((v >> (8 * i)) & 0xff));
    }
    return out;
  }
  return v;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

const char* dtype_name(TensorDtype d) { return d == TensorDtype::f32 ? "f32" : "f64"; }

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint,
                     TensorDtype dtype) {
  Json shapes = Json::array();
  for (const auto& [name, t] : checkpoint.tensors) {
    shapes.push_back(Json{{"name", name}, {"shape", {t.rows(), t.cols()}}});
  }
  Json manifest{{"format", kFormat},
                {"version", kVersion},
                {"dtype", dtype_name(dtype)},
                {"config", checkpoint.config.to_json()},
                {"vocabulary", checkpoint.vocabulary},
                {"vocab_hash", hex64(Vocabulary(checkpoint.vocabulary).hash())},
                {"step", checkpoint.step},
                {"tensors", shapes},
                {"metadata", checkpoint.metadata}};
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write checkpoint " + path.string());
  }
  out << manifest.dump() << '\n';
  for (const auto& [name, t] : checkpoint.tensors) {
    for (double v : t.data()) {
      if (dtype == TensorDtype::f32) {
        auto bits = to_little_endian(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
      } else {
        auto bits = to_little_endian(std::bit_cast<std::uint64_t>(v));
        out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
      }
    }
  }
  if (!out) {
    throw std::runtime_error("failed while writing checkpoint " + path.string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open checkpoint " + path.string());
  }
  std::string header;
  std::getline(in, header);
  Json manifest;
  try {
    manifest = Json::parse(header);
  } catch (const Json::exception& e) {
    throw ValidationError(path.string() + ": manifest is not JSON: " + e.what(), 1);
  }
  Checkpoint ck;
  TensorDtype dtype{};
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> shapes;
  try {
    if (manifest.at("format") != kFormat || manifest.at("version") != kVersion) {
      throw ValidationError(path.string() + ": not a version " + std::to_string(kVersion) +
                                " compcap checkpoint",
                            1);
    }
    const std::string d = manifest.at("dtype").get<std::string>();
    if (d != "f32" && d != "f64") {
      throw ValidationError(path.string() + ": unknown dtype '" + d + "'", 1);
    }
    dtype = d == "f32" ? TensorDtype::f32 : TensorDtype::f64;
    ck.config = ModelConfig::from_json(manifest.at("config"));
    ck.vocabulary = manifest.at("vocabulary").get<std::vector<std::string>>();
    ck.step = manifest.at("step").get<std::uint64_t>();
    ck.metadata = manifest.value("metadata", Json::object());
    for (const auto& t : manifest.at("tensors")) {
      auto shape = t.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2) {
        throw ValidationError(path.string() + ": tensor '" + t.at("name").get<std::string>() +
                                  "' is not rank 2",
                              1);
      }
      shapes.push_back({t.at("name").get<std::string>(), {shape[0], shape[1]}});
    }
    if (manifest.at("vocab_hash").get<std::string>() != hex64(Vocabulary(ck.vocabulary).hash())) {
      throw ValidationError(path.string() + ": vocabulary hash mismatch", 1);
    }
  } catch (const Json::exception& e) {
    throw ValidationError(path.string() + ": malformed manifest: " + e.what(), 1);
  } catch (const std::invalid_argument& e) {
    throw ValidationError(path.string() + ": " + e.what(), 1);
  }
  for (const auto& [name, shape] : shapes) {
    Tensor t(shape.first, shape.second);
    for (double& v : t.data()) {
      if (dtype == TensorDtype::f32) {
        std::uint32_t bits = 0;
        in.read(reinterpret_cast<char*>(&bits), sizeof bits);
        v = static_cast<double>(std::bit_cast<float>(to_little_endian(bits)));
      } else {
        std::uint64_t bits = 0;
        in.read(reinterpret_cast<char*>(&bits), sizeof bits);
        v = std::bit_cast<double>(to_little_endian(bits));
      }
      if (!in) {
        throw ValidationError(path.string() + ": payload ends inside tensor '" + name + "'");
      }
    }
    ck.tensors.emplace_back(name, std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ValidationError(path.string() + ": trailing bytes after the last tensor");
  }
  return ck;
}

Checkpoint capture_model(const Model& model, const Vocabulary& vocabulary) {
  Checkpoint ck;
  ck.config = model.config();
  ck.vocabulary = vocabulary.tokens();
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    const Parameter& p = model.params()[i];
    ck.tensors.emplace_back(p.name, p.value);
  }
  return ck;
}

void restore_model(Model& model, const Checkpoint& checkpoint) {
  if (!(model.config() == checkpoint.config)) {
    throw std::invalid_argument("checkpoint config " + checkpoint.config.to_json().dump() +
                                " does not match model config " + model.config().to_json().dump());
  }
  ParameterStore& params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    const Tensor* t = checkpoint.find(p.name);
    if (!t) {
      throw std::invalid_argument("checkpoint lacks parameter '" + p.name + "'");
    }
    if (!t->same_shape(p.value)) {
      throw std::invalid_argument("checkpoint parameter '" + p.name + "' has shape " +
                                  t->shape_string() + "; the model expects " + p.value.shape_string());
    }
    p.value = *t;
  }
}

Model model_from_checkpoint(const Checkpoint& checkpoint) {
  Model model(checkpoint.config, 0);
  restore_model(model, checkpoint);
  return model;
}

}  // namespace compcap
