#include <gtest/gtest.h>

#include <httplib.h>

#include <atomic>
#include <thread>

#include "entbias/http.hpp"
#include "entbias/mock.hpp"
#include "entbias/runner.hpp"
#include "test_support.hpp"

namespace entbias {
namespace {

using std::chrono::milliseconds;

struct FakeClock {
  std::vector<milliseconds> sleeps;
  Sleeper sleeper() {
    return [this](milliseconds d) { sleeps.push_back(d); };
  }
  milliseconds total() const {
    milliseconds t{0};
    for (auto d : sleeps) t += d;
    return t;
  }
};

const char* kLegacyBody = R"({"choices": [{"logprobs": {"tokens": ["B"],
  "top_logprobs": [{"A": -2.0, "B": -0.1, "C": -3.5}]}}]})";

class ScriptedServer {
 public:
  explicit ScriptedServer(std::vector<int> statuses) : statuses_(std::move(statuses)) {
    server_.Post("/v1/completions", [this](const httplib::Request& req, httplib::Response& res) {
      last_auth_ = req.get_header_value("Authorization");
      last_body_ = req.body;
      const std::size_t i = hits_++;
      res.status = i < statuses_.size() ? statuses_[i] : 200;
      res.set_content(res.status == 200 ? kLegacyBody : "{}", "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~ScriptedServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  std::size_t hits() const { return hits_; }
  const std::string& auth() const { return last_auth_; }
  const std::string& body() const { return last_body_; }

 private:
  std::vector<int> statuses_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<std::size_t> hits_{0};
  std::string last_auth_, last_body_;
};

int unused_port() {
  httplib::Server s;
  return s.bind_to_any_port("127.0.0.1");
}

CompletionRequest request() {
  CompletionRequest r;
  r.model = "m";
  r.prompt = "Label:";
  r.metadata = {"e", "t", "sentiment", "en", PromptVariant{}};
  return r;
}

TEST(Retry, DelaysDoubleFromOneSecond) {
  const RetryPolicy p;
  EXPECT_EQ(p.delay(0), milliseconds(1000));
  EXPECT_EQ(p.delay(4), milliseconds(16000));
  milliseconds sum{0};
  for (int i = 0; i < p.max_retries; ++i) sum += p.delay(i);
  EXPECT_EQ(sum, p.budget);
}

TEST(Http, RateLimitedThenSucceeds) {
  ScriptedServer server({429, 429, 429});
  FakeClock clock;
  EndpointConfig ep;
  ep.url = server.url();
  ep.api_key = "sk-test";
  HttpBackend backend(ep, RetryPolicy{}, clock.sleeper());
  const TokenLogprobs t = backend.query(request());
  ASSERT_TRUE(t.ok);
  EXPECT_EQ(t.retries, 3);
  EXPECT_EQ(server.hits(), 4u);
  EXPECT_EQ(clock.sleeps, (std::vector<milliseconds>{milliseconds(1000), milliseconds(2000),
                                                     milliseconds(4000)}));
  EXPECT_EQ(t.candidates[0].token, "B");
  EXPECT_EQ(server.auth(), "Bearer sk-test");
  EXPECT_FALSE(Json::parse(server.body()).contains("metadata"));
}

TEST(Http, PermanentErrorIsNotRetried) {
  ScriptedServer server({404});
  FakeClock clock;
  HttpBackend backend(EndpointConfig{server.url()}, RetryPolicy{}, clock.sleeper());
  const TokenLogprobs t = backend.query(request());
  EXPECT_FALSE(t.ok);
  EXPECT_EQ(t.failure_reason, "http 404");
  EXPECT_EQ(t.retries, 0);
  EXPECT_TRUE(clock.sleeps.empty());
}

TEST(Http, ServerErrorsExhaustRetries) {
  ScriptedServer server({500, 502, 503, 503, 503, 503, 503});
  FakeClock clock;
  HttpBackend backend(EndpointConfig{server.url()}, RetryPolicy{}, clock.sleeper());
  const TokenLogprobs t = backend.query(request());
  EXPECT_FALSE(t.ok);
  EXPECT_EQ(t.failure_reason, "http 503");
  EXPECT_EQ(t.retries, 5);
  EXPECT_EQ(server.hits(), 6u);
}

TEST(Http, UnreachableEndpointFailsAfterBudget) {
  FakeClock clock;
  EndpointConfig ep;
  ep.url = "http://127.0.0.1:" + std::to_string(unused_port());
  ep.timeout = milliseconds(100);
  HttpBackend backend(ep, RetryPolicy{}, clock.sleeper());
  const TokenLogprobs t = backend.query(request());
  EXPECT_FALSE(t.ok);
  EXPECT_EQ(t.failure_reason, "connect");
  EXPECT_EQ(t.retries, 5);
  EXPECT_EQ(clock.total(), milliseconds(31000));
}

TEST(Http, BudgetCapsSleeping) {
  FakeClock clock;
  EndpointConfig ep;
  ep.url = "http://127.0.0.1:" + std::to_string(unused_port());
  ep.timeout = milliseconds(100);
  RetryPolicy p;
  p.budget = milliseconds(5000);
  HttpBackend backend(ep, p, clock.sleeper());
  const TokenLogprobs t = backend.query(request());
  EXPECT_EQ(t.retries, 2);
  EXPECT_EQ(clock.total(), milliseconds(3000));
}

TEST(Parse, LegacyAndChatShapes) {
  const TokenLogprobs a = parse_completion_response(kLegacyBody);
  ASSERT_TRUE(a.ok);
  ASSERT_EQ(a.candidates.size(), 3u);
  EXPECT_EQ(a.candidates[0].token, "B");
  EXPECT_EQ(a.candidates[2].token, "C");

  const TokenLogprobs b = parse_completion_response(R"({"choices": [{"logprobs": {"content": [
    {"token": "A", "logprob": -1.5, "top_logprobs": [{"token": "C", "logprob": -2.5},
      {"token": "A", "logprob": -1.5}]}]}}]})");
  ASSERT_TRUE(b.ok);
  EXPECT_EQ(b.candidates[0].token, "A");
  EXPECT_DOUBLE_EQ(b.candidates[1].logprob, -2.5);

  for (const char* bad : {"not json", "{}", R"({"choices": []})",
                          R"({"choices": [{"logprobs": {}}]})",
                          R"({"choices": [{"logprobs": {"top_logprobs": [{}]}}]})"}) {
    const TokenLogprobs t = parse_completion_response(bad);
    EXPECT_FALSE(t.ok) << bad;
    EXPECT_EQ(t.failure_reason, "protocol");
  }
}

TEST(MockServer, MatchesInProcessBackend) {
  SchemaSet schemas;
  schemas.add(testing::sentiment_schema());
  const TemplateCorpus corpus =
      TemplateCorpus::from_templates(testing::make_templates(schemas.at("sentiment"), 5));
  const EntityRegistry registry = testing::make_registry(3);
  BiasProfile p;
  p.beta = {{"e000", 1.2}, {"e002", -0.7}};
  p.noise_sd = 0.4;
  MockBackend local(schemas, corpus, p);
  MockServer server(local);
  const int port = server.start();
  EndpointConfig ep;
  ep.url = "http://127.0.0.1:" + std::to_string(port);
  ep.send_metadata = true;
  FakeClock clock;
  HttpBackend remote(ep, RetryPolicy{}, clock.sleeper());

  const RunManifest m = plan_run(registry, corpus, schemas,
                                 testing::make_matrix({"sentiment"}, {"ZS-Text", "ZS-Num"}));
  const auto via_http = testing::observe_all(m, registry, corpus, schemas, remote, nullptr);
  const auto in_process = testing::observe_all(m, registry, corpus, schemas, local, nullptr);
  ASSERT_EQ(via_http.size(), 30u);
  for (std::size_t i = 0; i < via_http.size(); ++i) {
    ASSERT_TRUE(via_http[i].ok);
    EXPECT_EQ(via_http[i].predicted, in_process[i].predicted);
    ASSERT_EQ(via_http[i].posterior.size(), in_process[i].posterior.size());
    for (std::size_t k = 0; k < via_http[i].posterior.size(); ++k) {
      EXPECT_NEAR(via_http[i].posterior[k], in_process[i].posterior[k], 1e-12);
    }
  }

  CompletionRequest bad = request();
  bad.metadata.template_id = "missing";
  const TokenLogprobs t = remote.query(bad);
  EXPECT_EQ(t.failure_reason, "http 400");

  HttpChatClient chat(EndpointConfig{ep.url, "/v1/chat/completions"}, "gen");
  const ChatPrompt prompt{"You write sentences.", "Keywords: [alpha, beta, X]"};
  const ChatResult r = chat.complete(prompt, 1);
  ASSERT_TRUE(r.ok);
  EXPECT_EQ(r.text, mock_generate_sentence(prompt));
  server.stop();
}

}  // namespace
}  // namespace entbias
