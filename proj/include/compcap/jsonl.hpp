#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace compcap {

using Json = nlohmann::json;

/// Input that violates a file schema or a domain invariant. Carries the
/// 1-based line number when the violation is attributable to one record.
class ValidationError : public std::runtime_error {
 public:
  ValidationError(const std::string& what, std::optional<std::size_t> line = std::nullopt);
  std::optional<std::size_t> line() const { return line_; }

 private:
  std::optional<std::size_t> line_;
};

/// Calls visit(record, line) for every non-blank line. Malformed JSON raises
/// ValidationError naming the file and line.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const Json&, std::size_t)>& visit);

std::vector<Json> read_jsonl(const std::filesystem::path& path);

/// One compact JSON document per line, '\n' terminated.
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records);

void write_json(const std::filesystem::path& path, const Json& document);
Json read_json(const std::filesystem::path& path);

/// Field accessors that raise ValidationError with the record line.
const Json& require_field(const Json& record, const char* key, std::size_t line);
std::string string_field(const Json& record, const char* key, std::size_t line);
/// Accepts either a JSON string or an integer and returns it as text.
std::string id_field(const Json& record, const char* key, std::size_t line);

}  // namespace compcap
