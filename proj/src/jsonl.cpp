#include "compcap/jsonl.hpp"

#include <fstream>

namespace compcap {

namespace {

std::string with_line(const std::string& what, std::optional<std::size_t> line) {
  if (!line) {
    return what;
  }
  return "line " + std::to_string(*line) + ": " + what;
}

}  // namespace

ValidationError::ValidationError(const std::string& what, std::optional<std::size_t> line)
    : std::runtime_error(with_line(what, line)), line_(line) {}

void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const Json&, std::size_t)>& visit) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    Json record;
    try {
      record = Json::parse(text);
    } catch (const Json::parse_error& e) {
      throw ValidationError(path.string() + ": malformed JSON (" + e.what() + ")", line);
    }
    if (!record.is_object()) {
      throw ValidationError(path.string() + ": record is not a JSON object", line);
    }
    visit(record, line);
  }
}

std::vector<Json> read_jsonl(const std::filesystem::path& path) {
  std::vector<Json> out;
  for_each_jsonl(path, [&](const Json& r, std::size_t) { out.push_back(r); });
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  for (const auto& r : records) {
    out << r.dump() << '\n';
  }
}

void write_json(const std::filesystem::path& path, const Json& document) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << document.dump(2) << '\n';
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ValidationError(path.string() + ": malformed JSON (" + e.what() + ")");
  }
}

const Json& require_field(const Json& record, const char* key, std::size_t line) {
  auto it = record.find(key);
  if (it == record.end()) {
    throw ValidationError(std::string("missing field '") + key + "'", line);
  }
  return *it;
}

std::string string_field(const Json& record, const char* key, std::size_t line) {
  const Json& v = require_field(record, key, line);
  if (!v.is_string()) {
    throw ValidationError(std::string("field '") + key + "' must be a string", line);
  }
  return v.get<std::string>();
}

std::string id_field(const Json& record, const char* key, std::size_t line) {
  const Json& v = require_field(record, key, line);
  if (v.is_string()) {
    return v.get<std::string>();
  }
  if (v.is_number_integer()) {
    return std::to_string(v.get<long long>());
  }
  throw ValidationError(std::string("field '") + key + "' must be a string or integer id", line);
}

}  // namespace compcap
