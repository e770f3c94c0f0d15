#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "aloftrag/core.hpp"

namespace aloftrag {

struct ChatRequest {
  std::string system;
  std::string user;
  double temperature = 0.0;  // pipeline generation always runs at 0
  int max_output_tokens = 1024;
  std::string model_name;
};

struct EmbeddingVector {
  std::vector<double> values;
  double norm = 0.0;

  double dot(const EmbeddingVector& other) const {
    double sum = 0.0;
    for (std::size_t i = 0; i < values.size() && i < other.values.size(); ++i)
      sum += values[i] * other.values[i];
    return sum;
  }
};

// Backend replies carry a coarse classification that drives retry behavior:
// transient failures are retried, permanent ones drop the item immediately.
enum class ReplyKind { ok, transient, permanent };

struct ChatReply {
  ReplyKind kind = ReplyKind::ok;
  std::string text;
  std::string error;
};

struct EmbedReply {
  ReplyKind kind = ReplyKind::ok;
  std::vector<std::vector<double>> vectors;
  std::string error;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ChatReply complete(const ChatRequest& request) = 0;
};

class EmbedBackend {
 public:
  virtual ~EmbedBackend() = default;
  virtual EmbedReply embed(const std::vector<std::string>& texts) = 0;
};

struct RetryPolicy {
  int max_attempts = 3;
  int base_delay_ms = 1000;  // doubled per attempt: 1s, 2s, 4s
  double jitter = 0.2;
};

struct GatewayOptions {
  int parallelism = 4;
  std::size_t max_embed_batch = 64;
  RetryPolicy retry;
  std::uint64_t jitter_seed = 0;
};

enum class CallStatus { ok, transport_exhausted, rejected };

struct ChatOutcome {
  CallStatus status = CallStatus::ok;
  std::string text;
  std::string error;
  int retries = 0;

  bool ok() const { return status == CallStatus::ok; }
};

// Wraps a chat and an embedding backend with retries, a bounded fan-out
// window and an embedding cache. Batch results always come back in input
// order, so everything downstream stays single-threaded and deterministic.
class Gateway {
 public:
  Gateway(std::shared_ptr<ChatBackend> chat, std::shared_ptr<EmbedBackend> embed,
          GatewayOptions options = {})
      : chat_(std::move(chat)),
        embed_(std::move(embed)),
        options_(options),
        jitter_rng_(options.jitter_seed) {}

  ChatOutcome chat_complete(const ChatRequest& request) {
    ChatOutcome outcome;
    std::string last_error;
    for (int attempt = 0; attempt < options_.retry.max_attempts; ++attempt) {
      ChatReply reply = chat_->complete(request);
      if (reply.kind == ReplyKind::ok) {
        outcome.status = CallStatus::ok;
        outcome.text = std::move(reply.text);
        outcome.retries = attempt;
        add_retries(attempt);
        return outcome;
      }
      if (reply.kind == ReplyKind::permanent) {
        outcome.status = CallStatus::rejected;
        outcome.error = std::move(reply.error);
        outcome.retries = attempt;
        add_retries(attempt);
        return outcome;
      }
      last_error = std::move(reply.error);
      if (attempt + 1 < options_.retry.max_attempts) sleep_backoff(attempt);
    }
    outcome.status = CallStatus::transport_exhausted;
    outcome.error = last_error;
    outcome.retries = options_.retry.max_attempts - 1;
    add_retries(outcome.retries);
    return outcome;
  }

  // Fans requests out over at most `parallelism` workers; out[i] always
  // corresponds to requests[i] regardless of completion order.
  std::vector<ChatOutcome> chat_batch(const std::vector<ChatRequest>& requests) {
    std::vector<ChatOutcome> out(requests.size());
    if (requests.empty()) return out;
    const int workers =
        std::max(1, std::min<int>(options_.parallelism, static_cast<int>(requests.size())));
    if (workers == 1) {
      for (std::size_t i = 0; i < requests.size(); ++i) out[i] = chat_complete(requests[i]);
      return out;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        while (true) {
          std::size_t i = next.fetch_add(1);
          if (i >= requests.size()) break;
          out[i] = chat_complete(requests[i]);
        }
      });
    }
    for (auto& t : pool) t.join();
    return out;
  }

  // One unit-normalized vector per input, order preserved, cached by content
  // hash. Embedding failures are fatal: nothing downstream can run without a
  // complete similarity matrix.
  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) {
    if (texts.empty()) throw DataError("embed_batch: no texts");
    std::vector<EmbeddingVector> out(texts.size());
    std::vector<std::size_t> missing;            // indices needing an endpoint call
    std::map<std::string, std::size_t> pending;  // hash -> first missing index
    {
      std::lock_guard<std::mutex> lock(cache_mutex_);
      for (std::size_t i = 0; i < texts.size(); ++i) {
        const std::string key = sha256_hex(texts[i]);
        auto it = cache_.find(key);
        if (it != cache_.end()) {
          out[i] = it->second;
          ++cache_hits_;
        } else if (pending.count(key)) {
          ++cache_hits_;         // duplicate within this batch; fetched once
          missing.push_back(i);  // filled from the cache below
        } else {
          pending.emplace(key, i);
          missing.push_back(i);
        }
      }
    }
    // Unique texts to fetch, in first-appearance order.
    std::vector<std::string> fetch_texts;
    std::vector<std::string> fetch_keys;
    {
      std::map<std::string, bool> seen;
      for (std::size_t i : missing) {
        const std::string key = sha256_hex(texts[i]);
        if (seen.count(key)) continue;
        seen.emplace(key, true);
        fetch_keys.push_back(key);
        fetch_texts.push_back(texts[i]);
      }
    }
    for (std::size_t start = 0; start < fetch_texts.size(); start += options_.max_embed_batch) {
      const std::size_t end = std::min(fetch_texts.size(), start + options_.max_embed_batch);
      std::vector<std::string> chunk(fetch_texts.begin() + static_cast<long>(start),
                                     fetch_texts.begin() + static_cast<long>(end));
      EmbedReply reply = embed_with_retry(chunk);
      if (reply.kind != ReplyKind::ok)
        throw IoError("embedding endpoint failed: " + reply.error);
      if (reply.vectors.size() != chunk.size())
        throw ConfigError("embedding endpoint returned " + std::to_string(reply.vectors.size()) +
                          " vectors for " + std::to_string(chunk.size()) + " inputs");
      std::lock_guard<std::mutex> lock(cache_mutex_);
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        EmbeddingVector v = normalize(reply.vectors[i]);
        check_dimension(v.values.size());
        cache_[fetch_keys[start + i]] = std::move(v);
      }
    }
    {
      std::lock_guard<std::mutex> lock(cache_mutex_);
      for (std::size_t i : missing) out[i] = cache_.at(sha256_hex(texts[i]));
    }
    return out;
  }

  long total_retries() const { return total_retries_.load(); }
  long cache_hits() const {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    return cache_hits_;
  }

 private:
  static EmbeddingVector normalize(const std::vector<double>& raw) {
    double norm = 0.0;
    for (double v : raw) norm += v * v;
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) throw ConfigError("embedding endpoint returned a zero vector");
    EmbeddingVector out;
    out.values.reserve(raw.size());
    for (double v : raw) out.values.push_back(v / norm);
    double check = 0.0;
    for (double v : out.values) check += v * v;
    out.norm = std::sqrt(check);
    return out;
  }

  void check_dimension(std::size_t dim) {
    if (expected_dim_ == 0) {
      expected_dim_ = dim;
      return;
    }
    if (dim != expected_dim_)
      throw ConfigError("embedding dimension mismatch: got " + std::to_string(dim) +
                        ", expected " + std::to_string(expected_dim_));
  }

  EmbedReply embed_with_retry(const std::vector<std::string>& chunk) {
    EmbedReply reply;
    for (int attempt = 0; attempt < options_.retry.max_attempts; ++attempt) {
      reply = embed_->embed(chunk);
      if (reply.kind != ReplyKind::transient) {
        add_retries(attempt);
        return reply;
      }
      if (attempt + 1 < options_.retry.max_attempts) sleep_backoff(attempt);
    }
    add_retries(options_.retry.max_attempts - 1);
    return reply;
  }

  void sleep_backoff(int attempt) {
    if (options_.retry.base_delay_ms <= 0) return;
    double delay = static_cast<double>(options_.retry.base_delay_ms) * std::pow(2.0, attempt);
    {
      std::lock_guard<std::mutex> lock(jitter_mutex_);
      delay *= 1.0 + options_.retry.jitter * (2.0 * jitter_rng_.uniform01() - 1.0);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long>(delay)));
  }

  void add_retries(int n) {
    if (n > 0) total_retries_.fetch_add(n);
  }

  std::shared_ptr<ChatBackend> chat_;
  std::shared_ptr<EmbedBackend> embed_;
  GatewayOptions options_;
  mutable std::mutex cache_mutex_;
  std::map<std::string, EmbeddingVector> cache_;
  long cache_hits_ = 0;
  std::size_t expected_dim_ = 0;
  std::atomic<long> total_retries_{0};
  std::mutex jitter_mutex_;
  SplitMix64 jitter_rng_;
};

// ---------------------------------------------------------------------------
// Mock backends
// ---------------------------------------------------------------------------

// Deterministic offline chat backend. Resolution order: exact (system, user)
// entry, then first matching rule, then the default response, else a
// permanent mock_miss error. Entries and rules may be scripted to fail their
// first N matches, which is how fixtures exercise the retry path.
class MockChatBackend : public ChatBackend {
 public:
  struct Rule {
    std::string system_contains;
    std::string user_contains;
    std::string response;
    std::string response_template;  // supports {user_sha8}
    int fail_times = 0;
    bool fail_permanent = false;
  };

  void add_exact(std::string system, std::string user, std::string response, int fail_times = 0,
                 bool fail_permanent = false) {
    Rule rule;
    rule.response = std::move(response);
    rule.fail_times = fail_times;
    rule.fail_permanent = fail_permanent;
    std::lock_guard<std::mutex> lock(mutex_);
    exact_[digest(system, user)] = std::move(rule);
  }

  void add_rule(Rule rule) {
    std::lock_guard<std::mutex> lock(mutex_);
    rules_.push_back(std::move(rule));
  }

  void set_default_response(std::string response) {
    std::lock_guard<std::mutex> lock(mutex_);
    default_response_ = std::move(response);
    has_default_ = true;
  }

  ChatReply complete(const ChatRequest& request) override {
    std::lock_guard<std::mutex> lock(mutex_);
    ++calls_;
    auto it = exact_.find(digest(request.system, request.user));
    if (it != exact_.end()) return serve(it->second, request);
    for (auto& rule : rules_) {
      if (!rule.system_contains.empty() &&
          request.system.find(rule.system_contains) == std::string::npos)
        continue;
      if (!rule.user_contains.empty() && request.user.find(rule.user_contains) == std::string::npos)
        continue;
      return serve(rule, request);
    }
    if (has_default_) {
      Rule fallback;
      fallback.response = default_response_;
      return serve(fallback, request);
    }
    return {ReplyKind::permanent, "", "mock_miss"};
  }

  long calls() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return calls_;
  }

  static std::string digest(const std::string& system, const std::string& user) {
    return sha256_hex("chat\x1f" + system + "\x1f" + user);
  }

 private:
  ChatReply serve(Rule& rule, const ChatRequest& request) {
    if (rule.fail_times > 0) {
      --rule.fail_times;
      if (rule.fail_permanent) return {ReplyKind::permanent, "", "mock scripted 4xx"};
      return {ReplyKind::transient, "", "mock scripted 5xx"};
    }
    if (!rule.response_template.empty())
      return {ReplyKind::ok, expand(rule.response_template, request), ""};
    return {ReplyKind::ok, rule.response, ""};
  }

  static std::string expand(const std::string& tpl, const ChatRequest& request) {
    std::string out = tpl;
    const std::string token = "{user_sha8}";
    const std::string sha8 = sha256_hex(request.user).substr(0, 8);
    std::size_t pos;
    while ((pos = out.find(token)) != std::string::npos) out.replace(pos, token.size(), sha8);
    return out;
  }

  mutable std::mutex mutex_;
  std::map<std::string, Rule> exact_;
  std::vector<Rule> rules_;
  std::string default_response_;
  bool has_default_ = false;
  long calls_ = 0;
};

// Deterministic offline embedding backend. Exact-table entries win; otherwise
// hash mode derives a stable pseudo-random vector from the text content, so
// arbitrary corpora can run offline with realistic-looking similarities.
class MockEmbedBackend : public EmbedBackend {
 public:
  enum class Mode { hash, table_only };

  explicit MockEmbedBackend(std::size_t dim = 16, Mode mode = Mode::hash)
      : dim_(dim), mode_(mode) {}

  void set_vector(const std::string& text, std::vector<double> values) {
    table_[text] = std::move(values);
  }

  EmbedReply embed(const std::vector<std::string>& texts) override {
    EmbedReply reply;
    for (const auto& text : texts) {
      auto it = table_.find(text);
      if (it != table_.end()) {
        reply.vectors.push_back(it->second);
        continue;
      }
      if (mode_ == Mode::table_only)
        return {ReplyKind::permanent, {}, "mock embedding miss: " + text.substr(0, 40)};
      reply.vectors.push_back(hash_vector(text, dim_));
    }
    return reply;
  }

  static std::vector<double> hash_vector(const std::string& text, std::size_t dim) {
    SplitMix64 rng(fnv1a64(text) ^ 0x5bd1e995u);
    std::vector<double> v(dim);
    double norm = 0.0;
    for (auto& x : v) {
      x = 2.0 * rng.uniform01() - 1.0;
      norm += x * x;
    }
    if (norm < 1e-12) v[0] = 1.0;
    return v;
  }

 private:
  std::size_t dim_;
  Mode mode_;
  std::map<std::string, std::vector<double>> table_;
};

// Loads the --mock fixture file. Schema:
//   {
//     "chat": {
//       "entries": [{"system": s, "user": u, "response": r, "fail_times"?: n}],
//       "rules":   [{"system_contains"?: s, "user_contains"?: u,
//                    "response"?: r, "response_template"?: t,
//                    "fail_times"?: n, "fail_permanent"?: b}],
//       "default_response"?: r
//     },
//     "embedding": {"mode"?: "hash"|"table", "dim"?: n, "table"?: {text: [..]}}
//   }
struct MockBackends {
  std::shared_ptr<MockChatBackend> chat;
  std::shared_ptr<MockEmbedBackend> embed;
};

inline MockBackends load_mock_fixture(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open mock fixture: " + path);
  json fixture = json::parse(in, nullptr, false);
  if (fixture.is_discarded()) throw IoError("mock fixture is not valid JSON: " + path);

  MockBackends mocks;
  mocks.chat = std::make_shared<MockChatBackend>();
  std::size_t dim = 16;
  MockEmbedBackend::Mode mode = MockEmbedBackend::Mode::hash;
  if (fixture.contains("embedding")) {
    const json& e = fixture["embedding"];
    if (e.contains("dim")) dim = e["dim"].get<std::size_t>();
    if (e.contains("mode") && e["mode"].get<std::string>() == "table")
      mode = MockEmbedBackend::Mode::table_only;
  }
  mocks.embed = std::make_shared<MockEmbedBackend>(dim, mode);
  if (fixture.contains("embedding") && fixture["embedding"].contains("table")) {
    for (const auto& [text, values] : fixture["embedding"]["table"].items())
      mocks.embed->set_vector(text, values.get<std::vector<double>>());
  }
  if (fixture.contains("chat")) {
    const json& c = fixture["chat"];
    for (const auto& entry : c.value("entries", json::array())) {
      mocks.chat->add_exact(entry.at("system").get<std::string>(),
                            entry.at("user").get<std::string>(),
                            entry.at("response").get<std::string>(), entry.value("fail_times", 0),
                            entry.value("fail_permanent", false));
    }
    for (const auto& r : c.value("rules", json::array())) {
      MockChatBackend::Rule rule;
      rule.system_contains = r.value("system_contains", "");
      rule.user_contains = r.value("user_contains", "");
      rule.response = r.value("response", "");
      rule.response_template = r.value("response_template", "");
      rule.fail_times = r.value("fail_times", 0);
      rule.fail_permanent = r.value("fail_permanent", false);
      mocks.chat->add_rule(std::move(rule));
    }
    if (c.contains("default_response"))
      mocks.chat->set_default_response(c["default_response"].get<std::string>());
  }
  return mocks;
}

}  // namespace aloftrag
