#pragma once

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "driftwatch/chat.hpp"
#include "driftwatch/embedder.hpp"
#include "driftwatch/error.hpp"
#include "driftwatch/harness.hpp"

namespace driftwatch::http {

using nlohmann::json;

enum class Provider { openai_compat, anthropic };

inline const char* to_string(Provider p) {
  return p == Provider::openai_compat ? "openai_compat" : "anthropic";
}

// ---- debug logging (api keys never reach the sink) -------------------------

using LogSink = std::function<void(std::string_view)>;

namespace detail {
inline std::mutex& log_mutex() {
  static std::mutex mu;
  return mu;
}
inline LogSink& log_sink() {
  static LogSink sink;
  return sink;
}
}  // namespace detail

inline void set_debug_logger(LogSink sink) {
  std::lock_guard<std::mutex> hold(detail::log_mutex());
  detail::log_sink() = std::move(sink);
}

inline void debug_log(std::string_view line) {
  std::lock_guard<std::mutex> hold(detail::log_mutex());
  if (detail::log_sink()) detail::log_sink()(line);
}

// ---- provider payload mapping, pure in both directions ---------------------

inline json openai_chat_payload(const chat::ChatRequest& req) {
  return json{{"model", req.model_id},
              {"messages",
               json::array({json{{"role", "system"},
                                 {"content", req.system_prompt}},
                            json{{"role", "user"},
                                 {"content", req.user_prompt}}})},
              {"temperature", req.temperature},
              {"max_tokens", req.max_tokens}};
}

inline std::string parse_openai_chat(const json& body) {
  try {
    const json& choice = body.at("choices").at(0);
    if (choice.contains("finish_reason") &&
        choice.at("finish_reason") == "content_filter")
      throw RefusalError("provider filtered the completion");
    std::string text = choice.at("message").at("content").get<std::string>();
    if (text.empty()) throw RefusalError("provider returned empty completion");
    return text;
  } catch (const json::exception&) {
    throw TransportError("malformed chat completion response");
  }
}

inline json anthropic_chat_payload(const chat::ChatRequest& req) {
  return json{{"model", req.model_id},
              {"system", req.system_prompt},
              {"messages", json::array({json{{"role", "user"},
                                             {"content", req.user_prompt}}})},
              {"temperature", req.temperature},
              {"max_tokens", req.max_tokens}};
}

inline std::string parse_anthropic_chat(const json& body) {
  try {
    if (body.value("stop_reason", "") == "refusal")
      throw RefusalError("provider refused the completion");
    const json& content = body.at("content");
    std::string text;
    for (const json& block : content)
      if (block.value("type", "") == "text")
        text += block.at("text").get<std::string>();
    if (text.empty()) throw RefusalError("provider returned empty completion");
    return text;
  } catch (const json::exception&) {
    throw TransportError("malformed chat completion response");
  }
}

inline json openai_embed_payload(const std::vector<std::string>& texts,
                                 const std::string& model_id) {
  return json{{"model", model_id}, {"input", texts}};
}

inline std::vector<std::vector<double>> parse_openai_embed(
    const json& body, std::size_t expected) {
  try {
    const json& data = body.at("data");
    if (data.size() != expected)
      throw TransportError("embedding count mismatch");
    std::vector<std::vector<double>> out(expected);
    for (const json& row : data) {
      std::size_t index = row.at("index").get<std::size_t>();
      if (index >= expected) throw TransportError("embedding index out of range");
      out[index] = row.at("embedding").get<std::vector<double>>();
    }
    return out;
  } catch (const json::exception&) {
    throw TransportError("malformed embedding response");
  }
}

// retryable statuses stay TransportError; credential problems are AuthError;
// anything else the provider rejected outright is a refusal
inline void raise_for_status(int status, const std::string& body) {
  std::string suffix = "HTTP " + std::to_string(status) + ": " +
                       body.substr(0, 200);
  if (status == 401 || status == 403) throw AuthError(suffix);
  if (status == 408 || status == 429 || status >= 500)
    throw TransportError(suffix);
  throw RefusalError(suffix);
}

// ---- transport --------------------------------------------------------------

struct HttpOptions {
  std::string base_url;
  std::string api_key_env;
  std::uint32_t timeout_ms = 30000;
};

namespace detail {

inline std::string require_key(const std::string& env_name) {
  const char* value = env_name.empty() ? nullptr : std::getenv(env_name.c_str());
  if (!value || !*value)
    throw AuthError("credential environment variable not set: " +
                    (env_name.empty() ? std::string("(unnamed)") : env_name));
  return value;
}

inline httplib::Client make_client(const HttpOptions& opts) {
  httplib::Client client(opts.base_url);
  client.set_connection_timeout(0, opts.timeout_ms * 1000);
  client.set_read_timeout(opts.timeout_ms / 1000,
                          (opts.timeout_ms % 1000) * 1000);
  return client;
}

inline json post_json(const HttpOptions& opts, const std::string& path,
                      const httplib::Headers& headers, const json& payload,
                      const char* provider) {
  debug_log(std::string("POST ") + opts.base_url + path + " provider=" +
            provider + " payload=" + payload.dump() +
            " (auth header redacted)");
  httplib::Client client = make_client(opts);
  auto result = client.Post(path, headers, payload.dump(), "application/json");
  if (!result)
    throw TransportError("connection to " + opts.base_url + " failed: " +
                         httplib::to_string(result.error()));
  debug_log("status=" + std::to_string(result->status) + " bytes=" +
            std::to_string(result->body.size()));
  if (result->status != 200) raise_for_status(result->status, result->body);
  json body = json::parse(result->body, nullptr, false);
  if (body.is_discarded())
    throw TransportError("response body is not valid json");
  return body;
}

}  // namespace detail

// Chat over an OpenAI-compatible or Anthropic-style endpoint. The replicate
// index is ignored: real providers sample server-side.
class HttpChatBackend final : public chat::Backend {
 public:
  HttpChatBackend(Provider provider, HttpOptions opts)
      : provider_(provider), opts_(std::move(opts)) {
    if (opts_.base_url.empty()) throw DataError("base_url must be set");
  }

  chat::ChatResponse complete(const chat::ChatRequest& req,
                              std::uint64_t) override {
    chat::validate(req);
    std::string key = detail::require_key(opts_.api_key_env);
    auto begin = std::chrono::steady_clock::now();
    json body;
    if (provider_ == Provider::openai_compat) {
      httplib::Headers headers{{"Authorization", "Bearer " + key}};
      body = detail::post_json(opts_, "/v1/chat/completions", headers,
                               openai_chat_payload(req), name().c_str());
    } else {
      httplib::Headers headers{{"x-api-key", key},
                               {"anthropic-version", "2023-06-01"}};
      body = detail::post_json(opts_, "/v1/messages", headers,
                               anthropic_chat_payload(req), name().c_str());
    }
    auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - begin);

    chat::ChatResponse resp;
    resp.text = provider_ == Provider::openai_compat
                    ? parse_openai_chat(body)
                    : parse_anthropic_chat(body);
    resp.provider = name();
    resp.latency_ms = static_cast<std::uint64_t>(elapsed.count());
    resp.request_fingerprint = body.value("id", "");
    return resp;
  }

  std::string name() const override { return to_string(provider_); }

 private:
  Provider provider_;
  HttpOptions opts_;
};

// Embeddings over an OpenAI-compatible /v1/embeddings endpoint.
class HttpEmbedder final : public embed::Embedder {
 public:
  HttpEmbedder(embed::EmbedderSpec spec, HttpOptions opts)
      : spec_(spec), opts_(std::move(opts)) {
    if (spec_.kind != embed::EmbedderKind::remote)
      throw DataError("HttpEmbedder requires kind remote");
    embed::validate(spec_);
    if (opts_.base_url.empty()) throw DataError("base_url must be set");
  }

  std::vector<stats::EmbeddingVector> embed(
      const std::vector<std::string>& texts) override {
    std::string key = detail::require_key(opts_.api_key_env);
    httplib::Headers headers{{"Authorization", "Bearer " + key}};
    json body =
        detail::post_json(opts_, "/v1/embeddings", headers,
                          openai_embed_payload(texts, spec_.model_id),
                          "openai_compat");
    auto raw = parse_openai_embed(body, texts.size());
    std::vector<stats::EmbeddingVector> out;
    out.reserve(raw.size());
    for (auto& row : raw) {
      if (row.size() != spec_.dimension)
        throw TransportError("embedding dimension mismatch: got " +
                             std::to_string(row.size()) + ", want " +
                             std::to_string(spec_.dimension));
      if (spec_.normalize) {
        double ss = 0.0;
        for (double x : row) ss += x * x;
        if (ss <= 0.0)
          throw DegenerateEmbeddingError("remote embedding has zero norm");
        double norm = std::sqrt(ss);
        for (double& x : row) x /= norm;
      }
      out.push_back(std::move(row));
    }
    return out;
  }

  embed::EmbedderSpec spec() const override { return spec_; }

 private:
  embed::EmbedderSpec spec_;
  HttpOptions opts_;
};

// descriptor-driven construction for the CLI and replay paths
inline std::unique_ptr<chat::Backend> make_backend(
    const harness::BackendDescriptor& d) {
  if (d.kind == "simulator")
    return std::make_unique<chat::SimulatorBackend>(d.simulator);
  HttpOptions opts;
  opts.base_url = d.base_url;
  opts.api_key_env = d.api_key_env;
  opts.timeout_ms = d.timeout_ms;
  if (d.kind == "openai_compat")
    return std::make_unique<HttpChatBackend>(Provider::openai_compat, opts);
  if (d.kind == "anthropic")
    return std::make_unique<HttpChatBackend>(Provider::anthropic, opts);
  throw DataError("unknown backend kind: " + d.kind);
}

inline std::unique_ptr<embed::Embedder> make_embedder(
    const embed::EmbedderSpec& spec, const HttpOptions& opts) {
  if (spec.kind == embed::EmbedderKind::local_hash)
    return std::make_unique<embed::LocalHashEmbedder>(spec);
  return std::make_unique<HttpEmbedder>(spec, opts);
}

}  // namespace driftwatch::http
