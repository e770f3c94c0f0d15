#pragma once

#include <memory>
#include <string>
#include <vector>

#include <httplib.h>

#include "aloftrag/gateway.hpp"

namespace aloftrag {

struct EndpointConfig {
  std::string url;  // full endpoint URL, e.g. http://host:8000/v1/chat/completions
  std::string api_key;
  std::string model;
  int connect_timeout_s = 10;
  int read_timeout_s = 300;
};

namespace detail {

struct SplitUrl {
  std::string base;  // scheme://host[:port]
  std::string path;  // /path, "/" when absent
};

inline SplitUrl split_url(const std::string& url) {
  const std::size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint URL must include a scheme: " + url);
  const std::size_t host_begin = scheme_end + 3;
  const std::size_t path_begin = url.find('/', host_begin);
  SplitUrl out;
  if (path_begin == std::string::npos) {
    out.base = url;
    out.path = "/";
  } else {
    out.base = url.substr(0, path_begin);
    out.path = url.substr(path_begin);
  }
  return out;
}

inline ReplyKind classify_status(int status) {
  if (status >= 200 && status < 300) return ReplyKind::ok;
  if (status == 429 || status >= 500) return ReplyKind::transient;
  return ReplyKind::permanent;
}

struct HttpResult {
  ReplyKind kind = ReplyKind::ok;
  int status = 0;
  std::string body;
  std::string error;
};

// One connection per call; the gateway may invoke this from several threads
// and httplib clients are not safe to share across them.
inline HttpResult post_json(const EndpointConfig& endpoint, const std::string& body) {
  SplitUrl url = split_url(endpoint.url);
  httplib::Client client(url.base);
  client.set_connection_timeout(endpoint.connect_timeout_s, 0);
  client.set_read_timeout(endpoint.read_timeout_s, 0);
  httplib::Headers headers;
  if (!endpoint.api_key.empty()) headers.emplace("Authorization", "Bearer " + endpoint.api_key);
  auto res = client.Post(url.path, headers, body, "application/json");
  HttpResult out;
  if (!res) {
    out.kind = ReplyKind::transient;
    out.error = "transport: " + httplib::to_string(res.error());
    return out;
  }
  out.status = res->status;
  out.body = res->body;
  out.kind = classify_status(res->status);
  if (out.kind != ReplyKind::ok)
    out.error = "http " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
  return out;
}

}  // namespace detail

// Chat-completions wire shape:
//   request  {model, messages: [{role, content}...], temperature, max_tokens}
//   response choices[0].message.content
class HttpChatBackend : public ChatBackend {
 public:
  explicit HttpChatBackend(EndpointConfig endpoint) : endpoint_(std::move(endpoint)) {}

  ChatReply complete(const ChatRequest& request) override {
    ordered_json body;
    body["model"] = request.model_name.empty() ? endpoint_.model : request.model_name;
    body["messages"] = ordered_json::array({
        ordered_json{{"role", "system"}, {"content", request.system}},
        ordered_json{{"role", "user"}, {"content", request.user}},
    });
    body["temperature"] = request.temperature;
    body["max_tokens"] = request.max_output_tokens;
    detail::HttpResult res = detail::post_json(endpoint_, body.dump());
    if (res.kind != ReplyKind::ok) return {res.kind, "", res.error};
    json payload = json::parse(res.body, nullptr, false);
    if (payload.is_discarded() || !payload.contains("choices") || payload["choices"].empty() ||
        !payload["choices"][0].contains("message") ||
        !payload["choices"][0]["message"].contains("content") ||
        !payload["choices"][0]["message"]["content"].is_string()) {
      return {ReplyKind::permanent, "", "bad_payload: " + res.body.substr(0, 200)};
    }
    return {ReplyKind::ok, payload["choices"][0]["message"]["content"].get<std::string>(), ""};
  }

 private:
  EndpointConfig endpoint_;
};

// Embeddings wire shape:
//   request  {model, input: [text...]}
//   response data[i].embedding
class HttpEmbedBackend : public EmbedBackend {
 public:
  explicit HttpEmbedBackend(EndpointConfig endpoint) : endpoint_(std::move(endpoint)) {}

  EmbedReply embed(const std::vector<std::string>& texts) override {
    ordered_json body;
    body["model"] = endpoint_.model;
    body["input"] = texts;
    detail::HttpResult res = detail::post_json(endpoint_, body.dump());
    if (res.kind != ReplyKind::ok) return {res.kind, {}, res.error};
    json payload = json::parse(res.body, nullptr, false);
    if (payload.is_discarded() || !payload.contains("data") || !payload["data"].is_array())
      return {ReplyKind::permanent, {}, "bad_payload: " + res.body.substr(0, 200)};
    EmbedReply reply;
    for (const auto& item : payload["data"]) {
      if (!item.contains("embedding") || !item["embedding"].is_array())
        return {ReplyKind::permanent, {}, "bad_payload: missing embedding"};
      reply.vectors.push_back(item["embedding"].get<std::vector<double>>());
    }
    return reply;
  }

 private:
  EndpointConfig endpoint_;
};

}  // namespace aloftrag
