#include <gtest/gtest.h>

#include <set>

#include "entbias/error.hpp"
#include "entbias/synthgen.hpp"
#include "test_support.hpp"

namespace entbias {
namespace {

LabelSchema credibility() {
  return testing::make_schema("credibility", {{"credible", "Credible", 2.0},
                                              {"not_credible", "Not Credible", 1.0}});
}

KeywordVocabulary credibility_vocab() {
  return KeywordVocabulary::from_json(Json::parse(R"({
    "task_id": "credibility",
    "categories": {
      "nouns": ["event", "inquiry", "verdict", "analysis", "roadmap", "audit",
                "oversight-mechanism", "contingency-plan", "team", "taskforce", "chance"],
      "verbs": ["investigate", "acknowledge", "bolster", "fabricate", "misrepresent",
                "coordinate", "evade", "substantiate", "used"],
      "adjectives": ["urgent", "unprecedented", "verifiable", "opaque", "non-committal",
                     "superficial", "evidence-based"],
      "adverbs": ["reportedly", "allegedly", "strategically", "hastily", "officially",
                  "partially", "largely", "seldom"],
      "connectives": ["moreover", "consequently", "conversely", "regarding", "despite",
                      "whereas", "subsequently"]
    }
  })"));
}

GenerationBrief credibility_brief() {
  return {"You are an expert in generating synthetic data.", "country", "credibility"};
}

std::vector<GenerationExample> bank() {
  return {{{"deadline", "coalition", "rapidly", "reform", "pledge"},
           "credible",
           "X rapidly formed a coalition that met its reform pledge ahead of the deadline."},
          {{"promise", "vague", "delay", "budget", "review"},
           "not_credible",
           "X offered a vague promise to review the budget, then announced yet another delay."}};
}

TEST(Vocabulary, TooSmallIsRejected) {
  const Json j = Json::parse(R"({"task_id": "t", "categories": {"nouns": ["a", "b", "c", "d"]}})");
  try {
    KeywordVocabulary::from_json(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kVocabularyTooSmall);
  }
  KeywordVocabulary v;
  v.task_id = "t";
  v.categories["nouns"] = {"a", "b", "c", "d"};
  EXPECT_THROW(sample_keywords(v, 5, 0), Error);
}

TEST(Vocabulary, SamplingIsDeterministicAndDistinct) {
  const KeywordVocabulary v = credibility_vocab();
  EXPECT_EQ(sample_keywords(v, 5, 17), sample_keywords(v, 5, 17));
  const std::vector<std::string> all = v.distinct();
  const std::set<std::string> pool(all.begin(), all.end());
  std::set<std::vector<std::string>> draws;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto k = sample_keywords(v, 5, seed);
    ASSERT_EQ(k.size(), 5u);
    EXPECT_EQ(std::set<std::string>(k.begin(), k.end()).size(), 5u);
    for (const auto& w : k) EXPECT_TRUE(pool.contains(w)) << w;
    draws.insert(k);
  }
  EXPECT_GT(draws.size(), 900u);
}

TEST(GenerationPrompt, CarriesRequirementsAndKeywords) {
  const LabelSchema schema = credibility();
  GenerationJob job{"credibility", "not_credible", {"team", "taskforce", "used", "chance", "analysis"}, 3};
  const ChatPrompt p = build_generation_prompt(job, schema, credibility_brief(), bank());
  EXPECT_NE(p.system.find("The sentence MUST include the placeholder 'X'."), std::string::npos);
  EXPECT_NE(p.user.find("Keywords: [team, taskforce, used, chance, analysis, X]"), std::string::npos);
  EXPECT_NE(p.user.find("Label: Not Credible"), std::string::npos);
  for (const auto& ex : bank()) EXPECT_NE(p.system.find(ex.output), std::string::npos);
  EXPECT_THROW(build_generation_prompt(job, schema, credibility_brief(), {}), Error);
}

TEST(GenerationPrompt, ExemplarCountIsAKnob) {
  const LabelSchema schema = credibility();
  GenerationJob job = make_job(credibility_vocab(), schema, "credible", 9);
  const ChatPrompt one = build_generation_prompt(job, schema, credibility_brief(), bank(), 1);
  std::size_t n = 0;
  for (auto pos = one.system.find("Output: "); pos != std::string::npos;
       pos = one.system.find("Output: ", pos + 1)) {
    ++n;
  }
  EXPECT_EQ(n, 1u);
  EXPECT_THROW(make_job(credibility_vocab(), schema, "maybe", 0), Error);
}

TEST(Validation, MissingPlaceholderRejected) {
  GenerationJob job{"credibility", "credible", {"team", "taskforce", "used", "chance", "analysis"}, 0};
  const ValidationReport r = validate_generated(
      "The team used the taskforce analysis to improve its chance of success.", job, credibility());
  EXPECT_FALSE(r.has_placeholder);
  EXPECT_FALSE(r.accepted);
  EXPECT_EQ(r.reject_reason, "missing placeholder");
}

TEST(Validation, LabelLeakRejected) {
  GenerationJob job{"credibility", "not_credible", {"team", "taskforce", "used", "chance", "analysis"}, 0};
  const ValidationReport r = validate_generated(
      "X used a taskforce and team analysis with little chance, which observers found Not Credible.",
      job, credibility());
  EXPECT_TRUE(r.leaks_label_text);
  EXPECT_FALSE(r.accepted);
}

TEST(Validation, PaperSampleAccepted) {
  GenerationJob job{"credibility", "not_credible", {"team", "taskforce", "used", "chance", "analysis"}, 0};
  const ValidationReport r = validate_generated(
      "X hastily assembled a taskforce to oversee resource usage, yet analysis revealed the team "
      "had little chance to effect meaningful change before their mandate expired.",
      job, credibility());
  EXPECT_TRUE(r.has_placeholder);
  EXPECT_GE(r.keywords_incorporated, 4u);
  EXPECT_TRUE(r.accepted) << r.reject_reason;
}

TEST(Validation, DenyListAndShortText) {
  GenerationJob job{"credibility", "credible", {"team", "taskforce", "used", "chance", "analysis"}, 0};
  const ValidationReport real = validate_generated(
      "X and Sweden used a joint taskforce whose team analysis improved the chance of success.",
      job, credibility(), {"sweden"});
  EXPECT_EQ(real.leaked_entity, std::optional<std::string>("sweden"));
  EXPECT_EQ(real.reject_reason, "mentions real entity");
  const ValidationReport shortt =
      validate_generated("X used team taskforce analysis.", job, credibility());
  EXPECT_EQ(shortt.reject_reason, "too short");
  const ValidationReport few = validate_generated(
      "X announced a broad plan that covers many different areas of public life.", job, credibility());
  EXPECT_EQ(few.reject_reason, "too few keywords");
}

TEST(BalancedBatch, Quotas) {
  const LabelSchema two = credibility();
  EXPECT_EQ(plan_balanced_batch(two, 1000), (std::vector<std::size_t>{500, 500}));
  EXPECT_EQ(plan_balanced_batch(testing::sentiment_schema(), 1050),
            (std::vector<std::size_t>{350, 350, 350}));
  const LabelSchema four = testing::make_schema(
      "four", {{"a", "A", 4}, {"b", "B", 3}, {"c", "C", 2}, {"d", "D", 1}});
  EXPECT_EQ(plan_balanced_batch(four, 10), (std::vector<std::size_t>{3, 3, 2, 2}));
  EXPECT_THROW(plan_balanced_batch(four, 3), Error);
}

TEST(BalancedBatch, PropertyAcrossSizes) {
  const LabelSchema six = testing::violation_schema();
  for (std::size_t n = six.size(); n <= 10000; ++n) {
    const auto q = plan_balanced_batch(six, n);
    const auto [mn, mx] = std::minmax_element(q.begin(), q.end());
    ASSERT_LE(*mx - *mn, 1u);
    ASSERT_EQ(std::accumulate(q.begin(), q.end(), std::size_t{0}), n);
  }
}

class FlakyChat final : public ChatClient {
 public:
  ChatResult complete(const ChatPrompt& prompt, std::uint64_t seed) override {
    ++calls;
    if (calls % 3 != 0) return {false, {}, "http 503"};
    return inner.complete(prompt, seed);
  }
  int calls = 0;
  MockChatClient inner;
};

TEST(GenerateCorpus, MeetsQuotasWithValidTemplates) {
  const LabelSchema schema = credibility();
  GenerationOptions opts;
  opts.total = 20;
  opts.seed = 5;
  MockChatClient client;
  const GeneratedCorpus c =
      generate_corpus(client, credibility_vocab(), schema, credibility_brief(), bank(), {}, opts);
  ASSERT_EQ(c.templates.size(), 20u);
  std::map<std::string, int> per_label;
  std::set<std::string> ids;
  for (const auto& t : c.templates) {
    ++per_label[t.intended_label];
    ids.insert(t.id);
    EXPECT_GE(count_placeholders(t.text), 1u);
    EXPECT_EQ(t.keywords.size(), 5u);
    EXPECT_EQ(t.origin, TemplateOrigin::kSynthetic);
    const std::string filled = substitute_placeholder(t.text, "Norway");
    EXPECT_EQ(count_placeholders(filled), 0u);
    EXPECT_EQ(filled.find("Credible"), std::string::npos);
  }
  EXPECT_EQ(ids.size(), 20u);
  EXPECT_EQ(per_label["credible"], 10);
  EXPECT_EQ(per_label["not_credible"], 10);

  const GeneratedCorpus again =
      generate_corpus(client, credibility_vocab(), schema, credibility_brief(), bank(), {}, opts);
  for (std::size_t i = 0; i < c.templates.size(); ++i) {
    EXPECT_EQ(c.templates[i].to_json(), again.templates[i].to_json());
  }
}

TEST(GenerateCorpus, EndpointFailuresAreRetried) {
  const LabelSchema schema = credibility();
  GenerationOptions opts;
  opts.total = 4;
  opts.endpoint_retries = 1;
  FlakyChat client;
  const GeneratedCorpus c =
      generate_corpus(client, credibility_vocab(), schema, credibility_brief(), bank(), {}, opts);
  EXPECT_EQ(c.templates.size(), 4u);
  EXPECT_GT(c.stats.endpoint_failures, 0u);
  EXPECT_GT(c.stats.reseeds, 0u);
}

TEST(GenerateCorpus, DenyListNames) {
  const EntityRegistry reg = testing::make_registry(2);
  const auto deny = entity_deny_list(reg);
  EXPECT_EQ(deny, (std::vector<std::string>{"entity 0", "entity 1"}));
}

}  // namespace
}  // namespace entbias
