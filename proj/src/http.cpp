#include "entbias/http.hpp"

#include <httplib.h>

#include <cmath>
#include <cstdlib>

#include "entbias/error.hpp"
#include "entbias/log.hpp"

namespace entbias {
namespace {

struct PostOutcome {
  bool ok = false;
  std::string body;
  std::string failure;  // "connect", "http 404", ...
  int retries = 0;
};

bool transient_status(int status) { return status == 429 || status >= 500; }

PostOutcome post_with_retry(const EndpointConfig& endpoint, const std::string& body,
                            const RetryPolicy& retry, const Sleeper& sleeper) {
  PostOutcome out;
  std::chrono::milliseconds slept{0};
  httplib::Headers headers;
  if (!endpoint.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + endpoint.api_key);
  }
  for (int attempt = 0;; ++attempt) {
    httplib::Client client(endpoint.url);
    client.set_connection_timeout(endpoint.timeout);
    client.set_read_timeout(endpoint.timeout);
    client.set_keep_alive(false);
    auto res = client.Post(endpoint.path, headers, body, "application/json");
    if (res && res->status >= 200 && res->status < 300) {
      out.ok = true;
      out.body = res->body;
      return out;
    }
    if (res && !transient_status(res->status)) {
      out.failure = "http " + std::to_string(res->status);
      return out;
    }
    out.failure = res ? "http " + std::to_string(res->status) : std::string("connect");
    if (attempt >= retry.max_retries) return out;
    const auto wait = retry.delay(attempt);
    if (slept + wait > retry.budget) return out;
    log::info(endpoint.url + endpoint.path + ": " + out.failure + ", retry " +
              std::to_string(attempt + 1) + " in " + std::to_string(wait.count()) + "ms");
    sleeper(wait);
    slept += wait;
    ++out.retries;
  }
}

std::string getenv_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v == nullptr ? fallback : std::string(v);
}

Json metadata_json(const QueryMetadata& m) {
  return Json{{"entity_id", m.entity_id},
              {"template_id", m.template_id},
              {"task_id", m.task_id},
              {"language", m.language},
              {"variant", m.variant.name()}};
}

Json completion_response(const std::string& model, const TokenLogprobs& t) {
  Json top = Json::object();
  for (const auto& c : t.candidates) top[c.token] = c.logprob;
  const std::string first = t.candidates.empty() ? std::string() : t.candidates.front().token;
  const double first_lp = t.candidates.empty() ? 0.0 : t.candidates.front().logprob;
  return Json{{"object", "text_completion"},
              {"model", model},
              {"choices",
               Json::array({Json{{"index", 0},
                                 {"text", first},
                                 {"finish_reason", "length"},
                                 {"logprobs",
                                  Json{{"tokens", Json::array({first})},
                                       {"token_logprobs", Json::array({first_lp})},
                                       {"top_logprobs", Json::array({top})}}}}})}};
}

}  // namespace

std::chrono::milliseconds RetryPolicy::delay(int retry) const {
  const double ms = static_cast<double>(base.count()) * std::pow(factor, retry);
  return std::chrono::milliseconds(static_cast<std::int64_t>(std::llround(ms)));
}

Sleeper real_sleeper() {
  return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

EndpointConfig EndpointConfig::from_json(const Json& j) {
  EndpointConfig e;
  e.url = getenv_or("ENTBIAS_ENDPOINT_URL", j.value("url", std::string()));
  e.path = j.value("path", e.path);
  const std::string key_env = j.value("api_key_env", std::string("ENTBIAS_API_KEY"));
  e.api_key = getenv_or(key_env.c_str(), "");
  e.send_metadata = j.value("send_metadata", false);
  e.timeout = std::chrono::milliseconds(
      static_cast<std::int64_t>(std::llround(j.value("timeout_s", 60.0) * 1000.0)));
  if (e.url.empty()) throw Error(ErrorCode::kInvalidInput, "endpoint url is not configured");
  return e;
}

Json completion_request_body(const CompletionRequest& request, bool send_metadata) {
  Json body{{"model", request.model},
            {"prompt", request.prompt},
            {"temperature", request.decode.temperature},
            {"seed", request.decode.seed},
            {"max_tokens", request.decode.max_tokens},
            {"logprobs", request.decode.top_logprobs}};
  if (send_metadata) body["metadata"] = metadata_json(request.metadata);
  return body;
}

TokenLogprobs parse_completion_response(std::string_view body) {
  try {
    const Json j = Json::parse(body);
    const Json& lp = j.at("choices").at(0).at("logprobs");
    TokenLogprobs out;
    if (lp.contains("top_logprobs") && lp.at("top_logprobs").is_array()) {
      const Json& top = lp.at("top_logprobs").at(0);
      for (auto it = top.begin(); it != top.end(); ++it) {
        out.candidates.push_back({it.key(), it.value().get<double>()});
      }
    } else if (lp.contains("content")) {
      for (const auto& c : lp.at("content").at(0).at("top_logprobs")) {
        out.candidates.push_back({c.at("token").get<std::string>(), c.at("logprob").get<double>()});
      }
    } else {
      return TokenLogprobs::failed("protocol");
    }
    if (out.candidates.empty()) return TokenLogprobs::failed("protocol");
    std::stable_sort(out.candidates.begin(), out.candidates.end(),
                     [](const TokenCandidate& a, const TokenCandidate& b) {
                       return a.logprob > b.logprob;
                     });
    out.ok = true;
    return out;
  } catch (const Json::exception&) {
    return TokenLogprobs::failed("protocol");
  }
}

struct HttpBackend::Impl {
  EndpointConfig endpoint;
  RetryPolicy retry;
  Sleeper sleeper;
};

HttpBackend::HttpBackend(EndpointConfig endpoint, RetryPolicy retry, Sleeper sleeper)
    : impl_(std::make_unique<Impl>(Impl{std::move(endpoint), retry, std::move(sleeper)})) {}

HttpBackend::~HttpBackend() = default;

TokenLogprobs HttpBackend::query(const CompletionRequest& request) {
  const std::string body = completion_request_body(request, impl_->endpoint.send_metadata).dump();
  PostOutcome res = post_with_retry(impl_->endpoint, body, impl_->retry, impl_->sleeper);
  if (!res.ok) {
    log::warn("query failed after " + std::to_string(res.retries) + " retries: " + res.failure);
    return TokenLogprobs::failed(res.failure, res.retries);
  }
  TokenLogprobs out = parse_completion_response(res.body);
  out.retries = res.retries;
  if (res.retries > 0) {
    log::info("query succeeded after " + std::to_string(res.retries) + " retries");
  }
  return out;
}

struct HttpChatClient::Impl {
  EndpointConfig endpoint;
  std::string model;
  RetryPolicy retry;
  Sleeper sleeper;
};

HttpChatClient::HttpChatClient(EndpointConfig endpoint, std::string model, RetryPolicy retry,
                               Sleeper sleeper)
    : impl_(std::make_unique<Impl>(
          Impl{std::move(endpoint), std::move(model), retry, std::move(sleeper)})) {}

HttpChatClient::~HttpChatClient() = default;

ChatResult HttpChatClient::complete(const ChatPrompt& prompt, std::uint64_t seed) {
  const Json body{{"model", impl_->model},
                  {"messages", Json::array({Json{{"role", "system"}, {"content", prompt.system}},
                                            Json{{"role", "user"}, {"content", prompt.user}}})},
                  {"temperature", 1.0},
                  {"seed", seed % 2147483647ULL}};
  // Generator calls are re-seeded by the caller after a few failures, so the
  // transport itself does not retry.
  RetryPolicy no_retry = impl_->retry;
  no_retry.max_retries = 0;
  PostOutcome res = post_with_retry(impl_->endpoint, body.dump(), no_retry, impl_->sleeper);
  if (!res.ok) return {false, {}, res.failure};
  try {
    const Json j = Json::parse(res.body);
    return {true, j.at("choices").at(0).at("message").at("content").get<std::string>(), {}};
  } catch (const Json::exception&) {
    return {false, {}, "protocol"};
  }
}

struct MockServer::Impl {
  httplib::Server server;
};

MockServer::MockServer(Backend& backend) : impl_(std::make_unique<Impl>()) {
  impl_->server.Post("/v1/completions", [&backend](const httplib::Request& req,
                                                   httplib::Response& res) {
    CompletionRequest request;
    try {
      const Json j = Json::parse(req.body);
      request.model = j.value("model", std::string());
      request.prompt = j.value("prompt", std::string());
      const Json& m = j.at("metadata");
      request.metadata.entity_id = m.at("entity_id").get<std::string>();
      request.metadata.template_id = m.at("template_id").get<std::string>();
      request.metadata.task_id = m.at("task_id").get<std::string>();
      request.metadata.language = m.at("language").get<std::string>();
      request.metadata.variant = PromptVariant::parse(m.at("variant").get<std::string>());
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(Json{{"error", {{"message", e.what()}}}}.dump(), "application/json");
      return;
    }
    const TokenLogprobs t = backend.query(request);
    if (!t.ok) {
      res.status = t.failure_reason == "protocol" ? 400 : 503;
      res.set_content(Json{{"error", {{"message", t.failure_reason}}}}.dump(), "application/json");
      return;
    }
    res.set_content(completion_response(request.model, t).dump(), "application/json");
  });
  impl_->server.Post("/v1/chat/completions", [](const httplib::Request& req,
                                                httplib::Response& res) {
    ChatPrompt prompt;
    try {
      const Json body = Json::parse(req.body);
      for (const auto& m : body.at("messages")) {
        const std::string role = m.at("role").get<std::string>();
        (role == "system" ? prompt.system : prompt.user) += m.at("content").get<std::string>();
      }
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(Json{{"error", {{"message", e.what()}}}}.dump(), "application/json");
      return;
    }
    const Json out{{"object", "chat.completion"},
                   {"choices", Json::array({Json{{"index", 0},
                                                 {"message", Json{{"role", "assistant"},
                                                                  {"content", mock_generate_sentence(prompt)}}},
                                                 {"finish_reason", "stop"}}})}};
    res.set_content(out.dump(), "application/json");
  });
}

MockServer::~MockServer() { stop(); }

int MockServer::start(const std::string& host, int port) {
  if (port == 0) {
    port_ = impl_->server.bind_to_any_port(host);
  } else {
    port_ = impl_->server.bind_to_port(host, port) ? port : -1;
  }
  if (port_ <= 0) throw Error(ErrorCode::kIo, "mock server could not bind " + host);
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port_;
}

void MockServer::serve_forever(const std::string& host, int port) {
  port_ = port;
  if (!impl_->server.listen(host, port)) {
    throw Error(ErrorCode::kIo, "mock server could not listen on " + host + ":" + std::to_string(port));
  }
}

void MockServer::stop() {
  impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace entbias
