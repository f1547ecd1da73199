#include "compcap/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include "compcap/jsonl.hpp"
#include "compcap/rng.hpp"

namespace compcap {

namespace {

const std::string kAnimal1Token = "<animal1>";
const std::string kAnimal2Token = "<animal2>";

std::uint32_t to_little_endian(std::uint32_t bits) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) | ((bits >> 8) & 0xff00u) | (bits >> 24);
  }
  return bits;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

bool is_detachable(char c) {
  switch (c) {
    case '.': case ',': case '!': case '?': case ';': case ':':
    case '"': case '(': case ')': case '[': case ']':
      return true;
    default:
      return false;
  }
}

// Rewrites "animal 1", "animal1", "animal one" (and the 2-forms) in
// lowercased text. A match must start at a word boundary that is not the
// inside of an already rewritten <animalN> token and must end at a word
// boundary.
std::string rewrite_mentions(const std::string& text) {
  static constexpr std::string_view kWord = "animal";
  struct Form {
    std::string_view suffix;
    const std::string* token;
  };
  static const Form kForms[] = {{" one", &kAnimal1Token}, {" two", &kAnimal2Token},
                                {" 1", &kAnimal1Token},   {" 2", &kAnimal2Token},
                                {"1", &kAnimal1Token},    {"2", &kAnimal2Token}};
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    bool boundary = i == 0 || (!is_word_char(text[i - 1]) && text[i - 1] != '<');
    if (boundary && text.compare(i, kWord.size(), kWord) == 0) {
      std::size_t after = i + kWord.size();
      const Form* hit = nullptr;
      for (const Form& form : kForms) {
        if (text.compare(after, form.suffix.size(), form.suffix) == 0) {
          std::size_t end = after + form.suffix.size();
          if (end == text.size() || !is_word_char(text[end])) {
            hit = &form;
            break;
          }
        }
      }
      if (hit) {
        out += *hit->token;
        i = after + hit->suffix.size();
        continue;
      }
    }
    out += text[i++];
  }
  return out;
}

void split_chunk(std::string_view chunk, std::vector<std::string>& out) {
  std::size_t begin = 0;
  std::size_t end = chunk.size();
  while (begin < end && is_detachable(chunk[begin])) {
    out.emplace_back(1, chunk[begin++]);
  }
  std::vector<std::string> trailing;
  while (end > begin && is_detachable(chunk[end - 1])) {
    trailing.emplace_back(1, chunk[--end]);
  }
  std::string_view core = chunk.substr(begin, end - begin);
  for (const std::string* special : {&kAnimal1Token, &kAnimal2Token}) {
    if (core.size() > special->size() && core.starts_with(*special)) {
      out.push_back(*special);
      core.remove_prefix(special->size());
      break;
    }
  }
  if (core.size() > 2 && core.ends_with("'s")) {
    out.emplace_back(core.substr(0, core.size() - 2));
    out.emplace_back("'s");
  } else if (!core.empty()) {
    out.emplace_back(core);
  }
  out.insert(out.end(), trailing.rbegin(), trailing.rend());
}

}  // namespace

std::vector<std::string> preprocess(std::string_view text, std::size_t max_tokens) {
  std::string lowered(text);
  for (char& c : lowered) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  std::string rewritten = rewrite_mentions(lowered);
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < rewritten.size()) {
    while (i < rewritten.size() && std::isspace(static_cast<unsigned char>(rewritten[i]))) ++i;
    std::size_t start = i;
    while (i < rewritten.size() && !std::isspace(static_cast<unsigned char>(rewritten[i]))) ++i;
    if (i > start) {
      split_chunk(std::string_view(rewritten).substr(start, i - start), tokens);
    }
  }
  if (tokens.empty()) {
    throw std::invalid_argument("preprocess: empty paragraph");
  }
  if (max_tokens > 0 && tokens.size() > max_tokens) {
    tokens.resize(max_tokens);
  }
  return tokens;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::size_t count_sentences(std::string_view text) {
  std::size_t sentences = 0;
  bool pending = false;  // non-space text since the last terminator
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    bool terminal = (c == '.' || c == '!' || c == '?') &&
                    (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1])));
    if (terminal) {
      ++sentences;
      pending = false;
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      pending = true;
    }
  }
  return sentences + (pending ? 1 : 0);
}

const std::vector<std::string>& Vocabulary::specials() {
  static const std::vector<std::string> kSpecials = {"<pad>", "<bos>", "<eos>", "<unk>",
                                                     kAnimal1Token, kAnimal2Token};
  return kSpecials;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  const auto& sp = specials();
  if (tokens_.size() < sp.size() || !std::equal(sp.begin(), sp.end(), tokens_.begin())) {
    throw std::invalid_argument("Vocabulary: token list must start with the special tokens");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("Vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::build(std::span<const std::vector<std::string>> corpus,
                             std::size_t min_frequency) {
  std::map<std::string, std::size_t> freq;
  for (const auto& para : corpus) {
    for (const auto& t : para) ++freq[t];
  }
  const auto& sp = specials();
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (const auto& [tok, n] : freq) {
    if (n >= min_frequency && std::find(sp.begin(), sp.end(), tok) == sp.end()) {
      ranked.emplace_back(tok, n);
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = sp;
  for (auto& [tok, n] : ranked) tokens.push_back(std::move(tok));
  return Vocabulary(std::move(tokens));
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("Vocabulary: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocabulary::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

std::string Vocabulary::detokenize(std::span<const int> ids) const {
  std::vector<std::string> words;
  for (int i : ids) {
    if (i == kEos) break;
    if (i == kBos || i == kPad) continue;
    words.push_back(token(i));
  }
  return join_tokens(words);
}

std::uint64_t Vocabulary::hash() const {
  std::string joined;
  for (const auto& t : tokens_) {
    joined += t;
    joined += '\n';
  }
  return fnv1a64(joined);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

Paragraph make_paragraph(std::string pair_id, std::string rater_id, std::string text) {
  Paragraph p{std::move(pair_id), std::move(rater_id), std::move(text), {}};
  p.tokens = preprocess(p.text);
  return p;
}

CorpusStats corpus_stats(std::span<const DatasetRecord> records) {
  if (records.empty()) {
    throw std::invalid_argument("corpus_stats: no records");
  }
  CorpusStats s;
  s.pairs = records.size();
  double tokens = 0.0;
  double sentences = 0.0;
  for (const auto& r : records) {
    for (const auto& p : r.references) {
      ++s.paragraphs;
      tokens += double(preprocess(p.text, 0).size());
      sentences += double(count_sentences(p.text));
    }
  }
  s.paragraphs_per_pair = double(s.paragraphs) / double(s.pairs);
  if (s.paragraphs > 0) {
    s.tokens_per_paragraph = tokens / double(s.paragraphs);
    s.sentences_per_paragraph = sentences / double(s.paragraphs);
  }
  return s;
}

std::vector<double> FeatureGrid::mean_pooled() const {
  std::vector<double> out(f, 0.0);
  const std::size_t cells = d * d;
  for (std::size_t c = 0; c < cells; ++c) {
    for (std::size_t k = 0; k < f; ++k) out[k] += values[c * f + k];
  }
  for (double& v : out) v /= double(cells);
  return out;
}

std::filesystem::path grid_payload_path(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".bin");
  return p;
}

void save_feature_grids(const std::filesystem::path& manifest, std::span<const FeatureGrid> grids) {
  std::vector<Json> lines;
  std::ofstream payload(grid_payload_path(manifest), std::ios::binary | std::ios::trunc);
  if (!payload) throw std::runtime_error("cannot write " + grid_payload_path(manifest).string());
  for (const auto& g : grids) {
    if (g.values.size() != g.d * g.d * g.f) {
      throw std::invalid_argument("feature grid '" + g.image_id + "' has the wrong value count");
    }
    lines.push_back(Json{{"image_id", g.image_id}, {"d", g.d}, {"f", g.f}});
    for (double v : g.values) {
      auto bits = to_little_endian(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      payload.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  write_jsonl(manifest, lines);
}

std::vector<FeatureGrid> load_feature_grids(const std::filesystem::path& manifest) {
  std::vector<FeatureGrid> grids;
  std::vector<std::size_t> lines;
  for_each_jsonl(manifest, [&](const Json& j, std::size_t line) {
    FeatureGrid g;
    g.image_id = id_field(j, "image_id", line);
    const Json& d = require_field(j, "d", line);
    const Json& f = require_field(j, "f", line);
    if (!d.is_number_unsigned() || !f.is_number_unsigned() || d.get<std::size_t>() == 0 ||
        f.get<std::size_t>() == 0) {
      throw ValidationError("grid extents d and f must be positive integers", line);
    }
    g.d = d.get<std::size_t>();
    g.f = f.get<std::size_t>();
    grids.push_back(std::move(g));
    lines.push_back(line);
  });
  std::ifstream payload(grid_payload_path(manifest), std::ios::binary);
  if (!payload) throw std::runtime_error("cannot open " + grid_payload_path(manifest).string());
  for (std::size_t i = 0; i < grids.size(); ++i) {
    auto& g = grids[i];
    std::size_t n = g.d * g.d * g.f;
    std::vector<std::uint32_t> raw(n);
    payload.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 4));
    if (!payload) {
      throw ValidationError("grid payload ends before '" + g.image_id + "'", lines[i]);
    }
    g.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      float v = std::bit_cast<float>(to_little_endian(raw[k]));
      if (!std::isfinite(v)) {
        throw ValidationError("grid '" + g.image_id + "' has a non-finite value", lines[i]);
      }
      g.values[k] = v;
    }
  }
  if (payload.peek() != std::char_traits<char>::eof()) {
    throw ValidationError("grid payload has trailing bytes after the last manifest entry");
  }
  return grids;
}

GridTable index_grids(std::vector<FeatureGrid> grids) {
  GridTable table;
  for (auto& g : grids) {
    std::string id = g.image_id;
    if (!table.emplace(id, std::move(g)).second) {
      throw ValidationError("duplicate feature grid for image '" + id + "'");
    }
  }
  return table;
}

std::vector<Paragraph> load_paragraphs(const std::filesystem::path& path) {
  std::vector<Paragraph> out;
  for_each_jsonl(path, [&](const Json& j, std::size_t line) {
    std::string text = string_field(j, "text", line);
    try {
      out.push_back(make_paragraph(id_field(j, "pair_id", line), id_field(j, "rater_id", line),
                                   std::move(text)));
    } catch (const std::invalid_argument& e) {
      throw ValidationError(e.what(), line);
    }
  });
  return out;
}

void save_paragraphs(const std::filesystem::path& path, std::span<const Paragraph> paragraphs) {
  std::vector<Json> out;
  for (const auto& p : paragraphs) {
    out.push_back(Json{{"pair_id", p.pair_id}, {"rater_id", p.rater_id}, {"text", p.text}});
  }
  write_jsonl(path, out);
}

std::vector<DatasetRecord> load_records(const std::filesystem::path& path) {
  std::vector<DatasetRecord> out;
  for_each_jsonl(path, [&](const Json& j, std::size_t line) {
    DatasetRecord r;
    r.pair.pair_id = id_field(j, "pair_id", line);
    r.pair.i1 = id_field(j, "i1", line);
    r.pair.i2 = id_field(j, "i2", line);
    r.pair.pivot_class = TaxonId{id_field(j, "pivot_class", line)};
    std::string prov = string_field(j, "provenance", line);
    const Json& level = require_field(j, "level", line);
    if (prov == "visual" && level.is_null()) {
      r.pair.provenance = Provenance::visual;
    } else if (prov == "taxonomic" && level.is_number_integer() && level.get<int>() >= 1) {
      r.pair.provenance = Provenance::taxonomic;
      r.pair.level = level.get<int>();
    } else {
      throw ValidationError("inconsistent provenance/level", line);
    }
    const Json& refs = require_field(j, "references", line);
    if (!refs.is_array() || refs.empty()) {
      throw ValidationError("record needs at least one reference paragraph", line);
    }
    for (const Json& ref : refs) {
      try {
        r.references.push_back(make_paragraph(r.pair.pair_id, id_field(ref, "rater_id", line),
                                              string_field(ref, "text", line)));
      } catch (const std::invalid_argument& e) {
        throw ValidationError(e.what(), line);
      }
    }
    out.push_back(std::move(r));
  });
  return out;
}

void save_records(const std::filesystem::path& path, std::span<const DatasetRecord> records) {
  std::vector<Json> out;
  for (const auto& r : records) {
    Json j = pair_to_json(r.pair);
    Json refs = Json::array();
    for (const auto& p : r.references) {
      refs.push_back(Json{{"rater_id", p.rater_id}, {"text", p.text}});
    }
    j["references"] = std::move(refs);
    out.push_back(std::move(j));
  }
  write_jsonl(path, out);
}

std::vector<DatasetRecord> join_records(std::span<const ImagePair> pairs,
                                        std::span<const Paragraph> paragraphs) {
  std::map<std::string, std::vector<Paragraph>> by_pair;
  for (const auto& p : paragraphs) by_pair[p.pair_id].push_back(p);
  std::vector<DatasetRecord> out;
  for (const auto& pair : pairs) {
    auto it = by_pair.find(pair.pair_id);
    if (it != by_pair.end()) {
      out.push_back(DatasetRecord{pair, it->second});
    }
  }
  return out;
}

}  // namespace compcap
