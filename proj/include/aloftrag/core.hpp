#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace aloftrag {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// Fatal error categories. Item-level problems are never exceptions; they are
// dropped-and-counted outcomes (see StageCounts).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic primitives
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// splitmix64; stable across platforms, unlike std::shuffle + stdlib engines.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, n). Modulo bias is < n / 2^64, irrelevant at our sizes.
  std::uint64_t bounded(std::uint64_t n) { return n == 0 ? 0 : next() % n; }

  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

// Seed for a per-item generator keyed by (run seed, item key).
inline std::uint64_t derive_seed(std::uint64_t run_seed, std::string_view key) {
  SplitMix64 mixer(run_seed ^ fnv1a64(key));
  return mixer.next();
}

template <typename T>
void deterministic_shuffle(std::vector<T>& items, SplitMix64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.bounded(i));
    std::swap(items[i - 1], items[j]);
  }
}

namespace detail {

// SHA-256 (FIPS 180-4). Used for embedding-cache keys, mock request digests
// and hash-mode mock embeddings; not a security boundary.
class Sha256 {
 public:
  Sha256() { reset(); }

  void reset() {
    state_ = {0x6a09e667u, 0xbb67ae85u, 0x3c6ef372u, 0xa54ff53au,
              0x510e527fu, 0x9b05688cu, 0x1f83d9abu, 0x5be0cd19u};
    buffer_.clear();
    total_bits_ = 0;
  }

  void update(std::string_view data) {
    total_bits_ += static_cast<std::uint64_t>(data.size()) * 8;
    buffer_.append(data);
    while (buffer_.size() >= 64) {
      process_block(reinterpret_cast<const unsigned char*>(buffer_.data()));
      buffer_.erase(0, 64);
    }
  }

  std::array<unsigned char, 32> digest() {
    std::string pad(1, '\x80');
    std::size_t rem = (buffer_.size() + 1) % 64;
    pad.append((rem <= 56 ? 56 - rem : 120 - rem), '\0');
    std::uint64_t bits = total_bits_;
    for (int i = 7; i >= 0; --i) pad.push_back(static_cast<char>((bits >> (i * 8)) & 0xff));
    update_without_count(pad);
    std::array<unsigned char, 32> out{};
    for (int i = 0; i < 8; ++i) {
      out[i * 4 + 0] = static_cast<unsigned char>(state_[i] >> 24);
      out[i * 4 + 1] = static_cast<unsigned char>(state_[i] >> 16);
      out[i * 4 + 2] = static_cast<unsigned char>(state_[i] >> 8);
      out[i * 4 + 3] = static_cast<unsigned char>(state_[i]);
    }
    return out;
  }

 private:
  void update_without_count(std::string_view data) {
    buffer_.append(data);
    while (buffer_.size() >= 64) {
      process_block(reinterpret_cast<const unsigned char*>(buffer_.data()));
      buffer_.erase(0, 64);
    }
  }

  static std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

  void process_block(const unsigned char* p) {
    static constexpr std::uint32_t k[64] = {
        0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1,
        0x923f82a4, 0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3,
        0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786,
        0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
        0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147,
        0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13,
        0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
        0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
        0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a,
        0x5b9cca4f, 0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208,
        0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};
    std::uint32_t w[64];
    for (int i = 0; i < 16; ++i) {
      w[i] = (static_cast<std::uint32_t>(p[i * 4]) << 24) |
             (static_cast<std::uint32_t>(p[i * 4 + 1]) << 16) |
             (static_cast<std::uint32_t>(p[i * 4 + 2]) << 8) |
             static_cast<std::uint32_t>(p[i * 4 + 3]);
    }
    for (int i = 16; i < 64; ++i) {
      std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
      std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
      w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    std::uint32_t a = state_[0], b = state_[1], c = state_[2], d = state_[3];
    std::uint32_t e = state_[4], f = state_[5], g = state_[6], h = state_[7];
    for (int i = 0; i < 64; ++i) {
      std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
      std::uint32_t ch = (e & f) ^ (~e & g);
      std::uint32_t t1 = h + s1 + ch + k[i] + w[i];
      std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
      std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
      std::uint32_t t2 = s0 + maj;
      h = g; g = f; f = e; e = d + t1;
      d = c; c = b; b = a; a = t1 + t2;
    }
    state_[0] += a; state_[1] += b; state_[2] += c; state_[3] += d;
    state_[4] += e; state_[5] += f; state_[6] += g; state_[7] += h;
  }

  std::array<std::uint32_t, 8> state_{};
  std::string buffer_;
  std::uint64_t total_bits_ = 0;
};

}  // namespace detail

inline std::string sha256_hex(std::string_view data) {
  detail::Sha256 h;
  h.update(data);
  auto d = h.digest();
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(64);
  for (unsigned char b : d) {
    out.push_back(hex[b >> 4]);
    out.push_back(hex[b & 0xf]);
  }
  return out;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

// ---------------------------------------------------------------------------
// Token counting
// ---------------------------------------------------------------------------

// Pluggable so a model-exact tokenizer can be swapped in; the default
// heuristic is ceil(bytes / 4).
using TokenCounter = std::function<std::size_t(std::string_view)>;

inline std::size_t heuristic_token_count(std::string_view text) {
  return (text.size() + 3) / 4;
}

inline std::size_t estimate_tokens(std::string_view text, const TokenCounter& counter = {}) {
  return counter ? counter(text) : heuristic_token_count(text);
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

// One corpus chunk. `body` holds the rendered text: when the source row had a
// title, the title is already folded in as "<title>\n\n<body>".
struct ReferenceText {
  std::string id;
  std::optional<std::string> title;
  std::string body;
  std::string language;
  std::string subset;
  std::size_t token_estimate = 0;

  // Corpus-row form. The title is not emitted separately: the rendered body
  // already contains it, which is what makes re-ingestion a no-op.
  ordered_json to_corpus_row() const {
    ordered_json row;
    row["id"] = id;
    row["text"] = body;
    row["language"] = language;
    return row;
  }
};

struct GeneratedQA {
  std::string ref_id;
  std::string question;
  std::string answer;
  std::optional<int> text_rating;
  std::optional<int> question_rating;
  std::optional<int> answer_rating;
};

// One assembled training/eval instance: shuffled context ids plus the 1-based
// position of the positive reference.
struct RagExample {
  std::vector<std::string> contexts;
  int correct_ordinal = 0;
  std::string question;
  std::string answer;
  std::uint64_t shuffle_seed = 0;
};

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

struct StageCounts {
  long input = 0;
  long kept = 0;
  std::map<std::string, long> dropped;

  void drop(const std::string& reason, long n = 1) { dropped[reason] += n; }

  long total_dropped() const {
    long n = 0;
    for (const auto& [_, v] : dropped) n += v;
    return n;
  }

  bool reconciles() const { return input == kept + total_dropped(); }

  ordered_json to_json() const {
    ordered_json j;
    j["input"] = input;
    j["kept"] = kept;
    j["dropped"] = ordered_json::object();
    for (const auto& [reason, n] : dropped) j["dropped"][reason] = n;
    return j;
  }
};

// Everything needed to audit and reproduce a run. Deliberately contains no
// wall-clock fields: two identical runs must serialize identically.
struct RunManifest {
  std::uint64_t seed = 0;
  std::map<std::string, int> thresholds;
  int n_contexts = 10;
  std::map<std::string, std::string> endpoints;
  std::map<std::string, StageCounts> stages;
  std::map<std::string, std::string> notes;
  long chat_retries = 0;
  long embed_cache_hits = 0;
  long judge_nonconforming = 0;

  StageCounts& stage(const std::string& name) { return stages[name]; }

  bool reconciles() const {
    for (const auto& [_, s] : stages)
      if (!s.reconciles()) return false;
    return true;
  }

  ordered_json to_json() const {
    ordered_json j;
    j["seed"] = seed;
    j["n_contexts"] = n_contexts;
    j["thresholds"] = ordered_json::object();
    for (const auto& [k, v] : thresholds) j["thresholds"][k] = v;
    j["endpoints"] = ordered_json::object();
    for (const auto& [k, v] : endpoints) j["endpoints"][k] = v;
    j["stages"] = ordered_json::object();
    for (const auto& [k, v] : stages) j["stages"][k] = v.to_json();
    j["notes"] = ordered_json::object();
    for (const auto& [k, v] : notes) j["notes"][k] = v;
    j["chat_retries"] = chat_retries;
    j["embed_cache_hits"] = embed_cache_hits;
    j["judge_nonconforming"] = judge_nonconforming;
    return j;
  }
};

// ---------------------------------------------------------------------------
// JSONL helpers
// ---------------------------------------------------------------------------

// Calls fn(line_number, line) for every non-blank line. Line numbers are
// 1-based.
template <typename Fn>
void for_each_jsonl_line(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    fn(line_no, line);
  }
}

inline void write_jsonl_file(const std::string& path, const std::vector<ordered_json>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const auto& row : rows) out << row.dump() << '\n';
  if (!out) throw IoError("write failed: " + path);
}

inline std::vector<json> read_jsonl_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<json> rows;
  for_each_jsonl_line(in, [&](std::size_t line_no, const std::string& line) {
    json row = json::parse(line, nullptr, false);
    if (row.is_discarded())
      throw IoError(path + ": malformed JSON at line " + std::to_string(line_no));
    rows.push_back(std::move(row));
  });
  return rows;
}

// ---------------------------------------------------------------------------
// Corpus ingestion
// ---------------------------------------------------------------------------

struct IngestOptions {
  std::size_t max_tokens = 1500;  // 0 disables the length filter
  bool dedup = true;
  std::string subset;
  std::string language = "English";  // default when a row has no language tag
  TokenCounter counter;              // empty -> heuristic
};

struct DropRecord {
  std::size_t row = 0;  // 1-based input line/row number
  std::string id;
  std::string reason;
};

struct IngestResult {
  std::vector<ReferenceText> texts;
  std::vector<DropRecord> drops;
  StageCounts counts;
};

namespace detail {

struct RawRow {
  std::optional<std::string> id;
  std::optional<std::string> title;
  std::optional<std::string> language;
  std::string text;
  bool readable = true;
};

inline RawRow raw_row_from_json(const json& j) {
  RawRow row;
  if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
    row.readable = false;
    return row;
  }
  row.text = j["text"].get<std::string>();
  if (j.contains("id") && j["id"].is_string()) row.id = j["id"].get<std::string>();
  if (j.contains("title") && j["title"].is_string()) row.title = j["title"].get<std::string>();
  if (j.contains("language") && j["language"].is_string())
    row.language = j["language"].get<std::string>();
  return row;
}

}  // namespace detail

// Single pass over raw rows: render title-prefixed text, apply the token
// cap, deduplicate exact rendered text, and assign deterministic ids to rows
// that lack one.
inline IngestResult ingest_rows(const std::vector<detail::RawRow>& rows, const IngestOptions& opt) {
  IngestResult result;
  std::map<std::string, std::size_t> seen_text;  // rendered text -> first row
  std::map<std::string, std::size_t> seen_id;
  std::size_t row_index = 0;
  for (const auto& raw : rows) {
    const std::size_t row_no = ++row_index;
    ++result.counts.input;
    auto dropped = [&](const std::string& id, const std::string& reason) {
      result.counts.drop(reason);
      result.drops.push_back({row_no, id, reason});
    };
    if (!raw.readable) {
      dropped("", "unreadable");
      continue;
    }
    std::string body = trim(raw.text);
    std::string id = raw.id ? *raw.id : opt.subset + "-" + std::to_string(row_no - 1);
    if (body.empty()) {
      dropped(id, "empty_body");
      continue;
    }
    std::string title = raw.title ? trim(*raw.title) : std::string();
    std::string rendered = title.empty() ? body : title + "\n\n" + body;
    std::size_t tokens = estimate_tokens(rendered, opt.counter);
    if (opt.max_tokens > 0 && tokens > opt.max_tokens) {
      dropped(id, "over_token_limit");
      continue;
    }
    if (opt.dedup && seen_text.count(rendered)) {
      dropped(id, "duplicate");
      continue;
    }
    if (seen_id.count(id)) {
      dropped(id, "duplicate_id");
      continue;
    }
    seen_text.emplace(rendered, row_no);
    seen_id.emplace(id, row_no);
    ReferenceText text;
    text.id = std::move(id);
    if (!title.empty()) text.title = title;
    text.body = std::move(rendered);
    text.language = raw.language ? *raw.language : opt.language;
    text.subset = opt.subset;
    text.token_estimate = tokens;
    result.texts.push_back(std::move(text));
    ++result.counts.kept;
  }
  return result;
}

inline IngestResult ingest_corpus(std::istream& in, const IngestOptions& opt) {
  std::vector<detail::RawRow> rows;
  for_each_jsonl_line(in, [&](std::size_t, const std::string& line) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      detail::RawRow bad;
      bad.readable = false;
      rows.push_back(bad);
    } else {
      rows.push_back(detail::raw_row_from_json(j));
    }
  });
  return ingest_rows(rows, opt);
}

inline IngestResult ingest_corpus_file(const std::string& path, const IngestOptions& opt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus: " + path);
  return ingest_corpus(in, opt);
}

// Id -> index lookup used wherever context ids must resolve.
inline std::map<std::string, std::size_t> index_by_id(const std::vector<ReferenceText>& texts) {
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < texts.size(); ++i) by_id.emplace(texts[i].id, i);
  return by_id;
}

}  // namespace aloftrag
