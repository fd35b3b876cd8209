#pragma once

// Network side of the gateway: a completions-style HTTP client with
// exponential backoff, a chat client for template generation, and a local
// server exposing the mock backend over the same wire protocol.

#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <thread>

#include "entbias/gateway.hpp"
#include "entbias/mock.hpp"
#include "entbias/synthgen.hpp"

namespace entbias {

struct RetryPolicy {
  std::chrono::milliseconds base{1000};
  double factor = 2.0;
  int max_retries = 5;
  // Upper bound on total sleep. The default equals 1+2+4+8+16 seconds.
  std::chrono::milliseconds budget{31000};

  std::chrono::milliseconds delay(int retry) const;  // retry is 0-based
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;
Sleeper real_sleeper();

struct EndpointConfig {
  std::string url;                       // scheme://host:port
  std::string path = "/v1/completions";
  std::string api_key;
  bool send_metadata = false;            // required by the mock server
  std::chrono::milliseconds timeout{60000};

  static EndpointConfig from_json(const Json& j);  // honours ENTBIAS_ENDPOINT_URL / _API_KEY
};

Json completion_request_body(const CompletionRequest& request, bool send_metadata);

/// Maps a completions response (legacy `top_logprobs` maps or chat-style
/// `content[].top_logprobs` lists) onto TokenLogprobs. Malformed bodies yield
/// failed("protocol").
TokenLogprobs parse_completion_response(std::string_view body);

class HttpBackend final : public Backend {
 public:
  HttpBackend(EndpointConfig endpoint, RetryPolicy retry = {}, Sleeper sleeper = real_sleeper());
  ~HttpBackend() override;

  TokenLogprobs query(const CompletionRequest& request) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

class HttpChatClient final : public ChatClient {
 public:
  HttpChatClient(EndpointConfig endpoint, std::string model, RetryPolicy retry = {},
                 Sleeper sleeper = real_sleeper());
  ~HttpChatClient() override;

  ChatResult complete(const ChatPrompt& prompt, std::uint64_t seed) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Serves POST /v1/completions from a MockBackend and POST
/// /v1/chat/completions from the deterministic sentence generator.
class MockServer {
 public:
  explicit MockServer(Backend& backend);
  ~MockServer();

  /// Binds to host on `port` (0 picks a free port) and serves on a
  /// background thread. Returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Blocks serving on the calling thread.
  void serve_forever(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace entbias
