#include <gtest/gtest.h>

#include <cmath>

#include "entbias/error.hpp"
#include "entbias/mock.hpp"
#include "entbias/scoring.hpp"
#include "test_support.hpp"

namespace entbias {
namespace {

const std::vector<std::string> kSentiment{"Positive", "Neutral", "Negative"};

TEST(Posterior, RenormalizesOverMatchedLabels) {
  TokenLogprobs lp;
  lp.ok = true;
  lp.candidates = {{"Positive", -0.2}, {"Negative", -1.8}};
  const PosteriorResult r = extract_posterior(lp, kSentiment);
  ASSERT_TRUE(r.ok);
  const double a = std::exp(-0.2), c = std::exp(-1.8);
  EXPECT_NEAR(r.posterior[0], a / (a + c), 1e-12);
  EXPECT_EQ(r.posterior[1], 0.0);
  EXPECT_NEAR(r.posterior[2], c / (a + c), 1e-12);
  EXPECT_NEAR(r.posterior[0], 0.8320, 5e-5);
  EXPECT_NEAR(r.posterior[2], 0.1680, 5e-5);
}

TEST(Posterior, NoLabelTokenFails) {
  TokenLogprobs lp;
  lp.ok = true;
  lp.candidates = {{"Maybe", -0.1}, {"The", -2.0}};
  const PosteriorResult r = extract_posterior(lp, kSentiment);
  EXPECT_FALSE(r.ok);
  EXPECT_EQ(r.failure_reason, "no_label_token");
  const PosteriorResult f = extract_posterior(TokenLogprobs::failed("connect"), kSentiment);
  EXPECT_FALSE(f.ok);
  EXPECT_EQ(f.failure_reason, "connect");
}

TEST(Posterior, SingleMatchIsOneHot) {
  TokenLogprobs lp;
  lp.ok = true;
  lp.candidates = {{" neutral", -3.0}, {"foo", -0.1}};
  const PosteriorResult r = extract_posterior(lp, kSentiment);
  ASSERT_TRUE(r.ok);
  EXPECT_EQ(r.posterior, (std::vector<double>{0.0, 1.0, 0.0}));
  EXPECT_EQ(predicted_label(r.posterior), 1u);
}

TEST(Posterior, MultiWordLabelsMatchOnFirstToken) {
  TokenLogprobs lp;
  lp.ok = true;
  lp.candidates = {{"Not", -0.5}, {"Cred", -1.0}};
  const std::vector<std::string> answers{"Credible", "Not Credible"};
  const PosteriorResult r = extract_posterior(lp, answers);
  ASSERT_TRUE(r.ok);
  EXPECT_EQ(r.posterior, (std::vector<double>{0.0, 1.0}));
}

TEST(RawScore, Arithmetic) {
  const std::vector<double> w{3.0, 2.0, 1.0};
  EXPECT_NEAR(raw_score(std::vector<double>{0.5, 0.3, 0.2}, w), 2.3, 1e-12);
  EXPECT_NEAR(raw_score(std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3}, w), 2.0, 1e-12);
  EXPECT_EQ(raw_score(std::vector<double>{0.0, 1.0, 0.0}, w), 2.0);
  EXPECT_THROW(raw_score(std::vector<double>{1.0}, w), Error);
  EXPECT_EQ(predicted_label(std::vector<double>{0.4, 0.4, 0.2}), 0u);
}

TEST(Normalize, TwoPoint) {
  const auto d = normalize_context({{"a", 2.0}, {"b", 4.0}});
  EXPECT_DOUBLE_EQ(d.at("a"), -1.0);
  EXPECT_DOUBLE_EQ(d.at("b"), 1.0);
}

TEST(Normalize, ConstantGivesZero) {
  const auto d = normalize_context({{"a", 2.5}, {"b", 2.5}, {"c", 2.5}});
  for (const auto& [_, v] : d) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(normalize_context({{"a", 1.0}}), Error);
}

TEST(Normalize, FivePoint) {
  const auto d = normalize_context({{"a", 1}, {"b", 2}, {"c", 3}, {"d", 4}, {"e", 5}});
  const double r2 = std::sqrt(2.0);
  EXPECT_NEAR(d.at("a"), -2.0 / r2, 1e-12);
  EXPECT_NEAR(d.at("b"), -1.0 / r2, 1e-12);
  EXPECT_NEAR(d.at("c"), 0.0, 1e-12);
  EXPECT_NEAR(d.at("d"), 1.0 / r2, 1e-12);
  EXPECT_NEAR(d.at("e"), 2.0 / r2, 1e-12);
  EXPECT_NEAR(d.at("a"), -1.4142, 5e-5);
  EXPECT_NEAR(d.at("b"), -0.7071, 5e-5);
}

TEST(Aggregation, TaskAndGlobalMeans) {
  EXPECT_DOUBLE_EQ(task_bias(std::vector<double>{0.5, -0.5}).value, 0.0);
  const MeanWithSupport one = task_bias(std::vector<double>{0.3});
  EXPECT_DOUBLE_EQ(one.value, 0.3);
  EXPECT_EQ(one.support, 1u);
  EXPECT_NEAR(global_bias(std::vector<double>{0.2, -0.2, 0.0, 0.4}), 0.1, 1e-15);
  EXPECT_DOUBLE_EQ(global_bias(std::vector<double>{0.7}), 0.7);
  EXPECT_THROW(task_bias(std::vector<double>{}), Error);
  EXPECT_THROW(global_bias(std::vector<double>{}), Error);
}

Observation obs(const std::string& e, const std::string& t, const RunConfig& c,
                std::vector<double> post) {
  Observation o;
  o.entity_id = e;
  o.template_id = t;
  o.config = c;
  o.ok = true;
  o.posterior = std::move(post);
  o.predicted = "x";
  return o;
}

struct TwoTaskFixture {
  SchemaSet schemas;
  TemplateCorpus corpus;
  TwoTaskFixture() {
    schemas.add(testing::make_schema("a", {{"hi", "Hi", 2}, {"lo", "Lo", 1}}));
    schemas.add(testing::make_schema("b", {{"hi", "Hi", 2}, {"lo", "Lo", 1}}));
    auto ta = testing::make_templates(schemas.at("a"), 10);
    const auto tb = testing::make_templates(schemas.at("b"), 1000);
    ta.insert(ta.end(), tb.begin(), tb.end());
    corpus = TemplateCorpus::from_templates(ta);
  }
};

TEST(ComputeBias, UnequalTemplateCountsDoNotReweightTasks) {
  TwoTaskFixture f;
  const RunConfig ca{"a", "m", "en", {}};
  const RunConfig cb{"b", "m", "en", {}};
  std::vector<Observation> all;
  // Same two-entity split in every context of both tasks: Delta = +1 / -1 everywhere.
  for (const auto& t : f.corpus.select("a", "en")) {
    all.push_back(obs("p", t->id, ca, {0.9, 0.1}));
    all.push_back(obs("q", t->id, ca, {0.1, 0.9}));
  }
  for (const auto& t : f.corpus.select("b", "en")) {
    all.push_back(obs("p", t->id, cb, {0.6, 0.4}));
    all.push_back(obs("q", t->id, cb, {0.5, 0.5}));
  }
  const BiasComputation b = compute_bias(all, f.corpus, f.schemas);
  ASSERT_EQ(b.task.size(), 4u);
  for (const auto& r : b.task) {
    EXPECT_NEAR(r.value, r.entity_id == "p" ? 1.0 : -1.0, 1e-12);
    EXPECT_EQ(r.support, r.task_id == "a" ? 10u : 1000u);
  }
  ASSERT_EQ(b.global.size(), 2u);
  EXPECT_NEAR(b.global[0].value, 1.0, 1e-12);
  EXPECT_EQ(b.global[0].support, 2u);
  EXPECT_EQ(b.global[0].task_id, "*");
  EXPECT_EQ(b.global_pooled.size(), 2u);
  EXPECT_EQ(b.dropped_contexts, 0u);
}

TEST(ComputeBias, OrderIndependentAndFailuresIgnored) {
  TwoTaskFixture f;
  const RunConfig ca{"a", "m", "en", {}};
  std::vector<Observation> all;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const auto& t : f.corpus.select("a", "en")) {
    for (const char* e : {"p", "q", "r", "s"}) {
      const double x = u(rng);
      all.push_back(obs(e, t->id, ca, {x, 1 - x}));
    }
  }
  Observation failed = obs("s", "a-0000", ca, {});
  failed.ok = false;
  all.erase(all.begin() + 3);  // s on a-0000
  all.push_back(failed);
  const BiasComputation b1 = compute_bias(all, f.corpus, f.schemas);
  std::reverse(all.begin(), all.end());
  const BiasComputation b2 = compute_bias(all, f.corpus, f.schemas);
  ASSERT_EQ(b1.task.size(), b2.task.size());
  for (std::size_t i = 0; i < b1.task.size(); ++i) {
    EXPECT_EQ(b1.task[i].entity_id, b2.task[i].entity_id);
    EXPECT_DOUBLE_EQ(b1.task[i].value, b2.task[i].value);
  }
  for (const auto& r : b1.task) EXPECT_EQ(r.support, r.entity_id == "s" ? 9u : 10u);
}

TEST(ComputeBias, LowCoverageContextsDropped) {
  TwoTaskFixture f;
  const RunConfig ca{"a", "m", "en", {}};
  std::vector<Observation> all;
  for (const auto& t : f.corpus.select("a", "en")) {
    for (const char* e : {"p", "q", "r", "s"}) {
      Observation o = obs(e, t->id, ca, {0.5, 0.5});
      // Only one of four entities succeeds on the first template.
      if (t->id == "a-0000" && std::string(e) != "p") {
        o.ok = false;
        o.posterior.clear();
      }
      all.push_back(o);
    }
  }
  const BiasComputation b = compute_bias(all, f.corpus, f.schemas);
  EXPECT_EQ(b.contexts, 10u);
  EXPECT_EQ(b.dropped_contexts, 1u);
  EXPECT_EQ(b.warnings.size(), 1u);
}

TEST(ComputeBias, MockPlantedShiftIsRecovered) {
  SchemaSet schemas;
  schemas.add(testing::sentiment_schema());
  const TemplateCorpus corpus =
      TemplateCorpus::from_templates(testing::make_templates(schemas.at("sentiment"), 30));
  const EntityRegistry reg = testing::make_registry(5);
  BiasProfile p;
  p.beta["e000"] = 1.0;
  p.noise_sd = 0.3;
  p.noise_seed = 1;
  MockBackend backend(schemas, corpus, p);
  const RunManifest m = plan_run(reg, corpus, schemas, testing::make_matrix({"sentiment"}));
  const auto all = testing::observe_all(m, reg, corpus, schemas, backend, nullptr);
  const BiasComputation b = compute_bias(all, corpus, schemas);
  for (const auto& r : b.task) {
    if (r.entity_id == "e000") {
      EXPECT_GT(r.value, 0.0);
    }
  }
  double sum = 0.0;
  for (const auto& r : b.task) sum += r.value;
  EXPECT_NEAR(sum, 0.0, 1e-9);
}

TEST(ComputeBias, ZeroBetaGivesZeroDeltas) {
  SchemaSet schemas;
  schemas.add(testing::sentiment_schema());
  const TemplateCorpus corpus =
      TemplateCorpus::from_templates(testing::make_templates(schemas.at("sentiment"), 6));
  const EntityRegistry reg = testing::make_registry(4);
  MockBackend backend(schemas, corpus, BiasProfile{});
  const RunManifest m = plan_run(reg, corpus, schemas, testing::make_matrix({"sentiment"}));
  ScoringOptions opts;
  opts.keep_context_records = true;
  const BiasComputation b =
      compute_bias(testing::observe_all(m, reg, corpus, schemas, backend, nullptr), corpus, schemas, opts);
  EXPECT_EQ(b.context.size(), 24u);
  for (const auto& r : b.context) EXPECT_EQ(r.value, 0.0);
  for (const auto& r : b.global) EXPECT_EQ(r.value, 0.0);
}

TEST(GroupAggregate, MeanAndMagnitude) {
  const EntityRegistry reg = testing::make_registry(2, {"g"});
  Taxonomy tax;
  tax.keys["group"] = {};
  std::vector<BiasRecord> recs(2);
  recs[0].entity_id = "e000";
  recs[0].value = -0.3;
  recs[1].entity_id = "e001";
  recs[1].value = 0.3;
  const auto mean = group_aggregate(recs, reg, tax, "group", GroupStatistic::kMean);
  const auto mag = group_aggregate(recs, reg, tax, "group", GroupStatistic::kMagnitude);
  ASSERT_EQ(mean.size(), 1u);
  EXPECT_NEAR(mean[0].value, 0.0, 1e-15);
  EXPECT_NEAR(mag[0].value, 0.3, 1e-15);
  EXPECT_EQ(mag[0].count, 2u);
  EXPECT_THROW(group_aggregate(recs, reg, tax, "other", GroupStatistic::kMean), Error);
}

TEST(GroupAggregate, MockGroupsOrdered) {
  SchemaSet schemas;
  schemas.add(testing::sentiment_schema());
  const TemplateCorpus corpus =
      TemplateCorpus::from_templates(testing::make_templates(schemas.at("sentiment"), 30));
  const EntityRegistry reg = testing::make_registry(8, {"A", "B"});
  Taxonomy tax;
  tax.keys["group"] = {};
  BiasProfile p;
  for (const auto& e : reg.entities()) p.beta[e.id] = e.tag("group") == "A" ? 1.0 : -1.0;
  p.noise_sd = 0.3;
  MockBackend backend(schemas, corpus, p);
  const RunManifest m = plan_run(reg, corpus, schemas, testing::make_matrix({"sentiment"}));
  const BiasComputation b =
      compute_bias(testing::observe_all(m, reg, corpus, schemas, backend, nullptr), corpus, schemas);
  const auto g = group_aggregate(b.global_pooled, reg, tax, "group", GroupStatistic::kMean);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_GT(g[0].value, 0.0);
  EXPECT_LT(g[1].value, 0.0);
}

TEST(MacroF1, HandFixtures) {
  std::vector<LabeledPrediction> perfect{{"a", "a"}, {"b", "b"}, {"c", "c"}};
  EXPECT_DOUBLE_EQ(macro_f1(perfect), 1.0);
  std::vector<LabeledPrediction> degenerate{{"a", "a"}, {"a", "a"}, {"b", "a"}, {"b", "a"}};
  EXPECT_NEAR(macro_f1(degenerate), (2 * 0.5 * 1.0 / 1.5 + 0.0) / 2, 1e-12);
  EXPECT_NEAR(macro_f1(degenerate), 0.3333, 5e-5);
  EXPECT_THROW(macro_f1(std::vector<LabeledPrediction>{}), Error);
}

TEST(MacroF1, GroupedQualifiesLabelsByTask) {
  TwoTaskFixture f;
  std::vector<Observation> all;
  for (const auto& t : f.corpus.select("a", "en")) {
    Observation o = obs("p", t->id, {"a", "m", "en", {}}, {0.5, 0.5});
    o.predicted = t->intended_label;
    all.push_back(o);
  }
  const std::vector<GroupField> fields{GroupField::kTask, GroupField::kEntity};
  const auto recs = macro_f1_grouped(all, f.corpus, fields);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_DOUBLE_EQ(recs[0].macro_f1, 1.0);
  EXPECT_EQ(recs[0].support, 10u);
  EXPECT_EQ(recs[0].grouping.at("entity"), "p");
}

TEST(Association, EqualF1GivesZeroDeviation) {
  const std::map<std::string, double> bias{{"a", 0.1}, {"b", -0.2}, {"c", 0.0}};
  const std::vector<std::map<std::string, double>> f1{{{"a", 0.7}, {"b", 0.7}, {"c", 0.7}}};
  const AssociationReport r = bias_performance_association(bias, f1);
  for (const auto& row : r.rows) EXPECT_NEAR(row.deviation, 0.0, 1e-15);
}

TEST(Association, PenalizedEntitiesLandInBottomQuartile) {
  std::map<std::string, double> bias;
  std::vector<std::map<std::string, double>> f1(6);
  std::set<std::string> penalized;
  for (int i = 0; i < 20; ++i) {
    const std::string e = testing::entity_id(i);
    const bool pen = i % 4 == 0;
    if (pen) penalized.insert(e);
    bias[e] = pen ? 1.5 + 0.1 * i : 0.01 * i;
    for (std::size_t g = 0; g < f1.size(); ++g) f1[g][e] = pen ? 0.5 : 0.8 + 0.001 * (i + g);
  }
  const AssociationReport r = bias_performance_association(bias, f1);
  std::set<std::string> bottom;
  for (const auto& row : r.rows) {
    if (row.bottom_quartile_rate == 1.0) bottom.insert(row.entity_id);
  }
  EXPECT_EQ(bottom, penalized);
  EXPECT_TRUE(penalized.contains(r.rows.front().entity_id));
}

TEST(Association, SingleEntityIsDegenerate) {
  const std::map<std::string, double> bias{{"a", 0.1}};
  const std::vector<std::map<std::string, double>> f1{{{"a", 0.5}}};
  try {
    bias_performance_association(bias, f1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerate);
  }
}

TEST(Observation, JsonRoundTrip) {
  Observation o = obs("e", "t", {"task", "m", "en", PromptVariant::parse("FS-Num")}, {0.25, 0.75});
  o.predicted = "lo";
  o.retries = 2;
  const Observation back = Observation::from_json(o.to_json());
  EXPECT_EQ(back.key(), "e|t|task|m|en|FS-Num");
  EXPECT_EQ(back.posterior, o.posterior);
  EXPECT_EQ(back.retries, 2);
  EXPECT_EQ(back.to_json(), o.to_json());
}

}  // namespace
}  // namespace entbias
