#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "entbias/error.hpp"
#include "entbias/mock.hpp"
#include "entbias/runner.hpp"
#include "entbias/store.hpp"
#include "test_support.hpp"

namespace entbias {
namespace {

using testing::TempDir;

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string snapshot(const ObservationStore& s) {
  std::ostringstream out;
  s.write_snapshot(out);
  return out.str();
}

Observation make_obs(const std::string& e, bool ok, const std::string& reason = {}) {
  Observation o;
  o.entity_id = e;
  o.template_id = "t1";
  o.config = {"task", "m", "en", {}};
  o.ok = ok;
  if (ok) {
    o.posterior = {0.25, 0.75};
    o.predicted = "b";
  } else {
    o.failure_reason = reason;
  }
  return o;
}

TEST(Store, AppendReplayAndDedup) {
  TempDir dir;
  const auto path = dir / "run" / "obs.log";
  {
    ObservationStore s(path);
    EXPECT_TRUE(s.append(make_obs("a", false, "connect")));
    EXPECT_TRUE(s.append(make_obs("a", true)));
    EXPECT_FALSE(s.append(make_obs("a", true)));
    EXPECT_FALSE(s.append(make_obs("a", false, "late")));
    EXPECT_TRUE(s.append(make_obs("b", false, "http 400")));
    EXPECT_EQ(s.size(), 2u);
    EXPECT_EQ(s.ok_count(), 1u);
  }
  ObservationStore again(path);
  EXPECT_EQ(again.replay_stats().records, 3u);
  EXPECT_EQ(again.replay_stats().torn_bytes, 0u);
  EXPECT_TRUE(again.completed(make_obs("a", true).key()));
  EXPECT_FALSE(again.completed(make_obs("b", true).key()));
  EXPECT_TRUE(again.has_record(make_obs("b", true).key()));
  const auto all = again.observations();
  ASSERT_EQ(all.size(), 2u);
  EXPECT_TRUE(all[0].ok);
  EXPECT_EQ(all[1].failure_reason, "http 400");
  EXPECT_EQ(ObservationStore::read(path).size(), 2u);
  EXPECT_THROW(ObservationStore::read(dir / "missing.log"), Error);
}

TEST(Store, TornTailIsTruncated) {
  TempDir dir;
  const auto path = dir / "obs.log";
  {
    ObservationStore s(path);
    s.append(make_obs("a", true));
    s.append(make_obs("b", true));
  }
  const std::string intact = slurp(path);
  {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    const std::string partial("\x40\x00\x00\x00{\"entity", 12);
    out.write(partial.data(), static_cast<std::streamsize>(partial.size()));
  }
  ObservationStore s(path);
  EXPECT_EQ(s.replay_stats().records, 2u);
  EXPECT_EQ(s.replay_stats().torn_bytes, 12u);
  EXPECT_EQ(slurp(path), intact);
  s.append(make_obs("c", true));
  EXPECT_EQ(ObservationStore::read(path).size(), 3u);
}

TEST(Store, CompactKeepsLatestPerKeySorted) {
  TempDir dir;
  const auto path = dir / "obs.log";
  ObservationStore s(path);
  s.append(make_obs("b", false, "x"));
  s.append(make_obs("a", true));
  s.append(make_obs("b", true));
  const std::string before = snapshot(s);
  s.compact();
  EXPECT_EQ(snapshot(s), before);
  ObservationStore reopened(path);
  EXPECT_EQ(reopened.replay_stats().records, 2u);
  EXPECT_EQ(snapshot(reopened), before);
  s.append(make_obs("c", true));
  EXPECT_EQ(ObservationStore::read(path).size(), 3u);
  EXPECT_EQ(before.substr(0, before.find('\n')),
            "entity_id\ttemplate_id\ttask_id\tmodel_id\tlanguage\tvariant\tstatus\tpredicted\tposterior\treason");
}

struct RunFixture {
  SchemaSet schemas;
  TemplateCorpus corpus;
  EntityRegistry registry;

  RunFixture(std::size_t entities, std::size_t templates) : registry(testing::make_registry(entities)) {
    schemas.add(testing::sentiment_schema());
    schemas.add(testing::make_schema("stance", {{"favor", "Favor", 2}, {"against", "Against", 1}}));
    auto a = testing::make_templates(schemas.at("sentiment"), templates);
    const auto b = testing::make_templates(schemas.at("stance"), templates);
    a.insert(a.end(), b.begin(), b.end());
    corpus = TemplateCorpus::from_templates(a);
  }
};

TEST(Plan, SmallCounts) {
  RunFixture f(10, 100);
  const RunManifest m = plan_run(f.registry, f.corpus, f.schemas,
                                 testing::make_matrix({"sentiment", "stance"}, {"ZS-Text", "ZS-Num"}));
  EXPECT_EQ(m.counts.total, 4000u);
  EXPECT_EQ(m.counts.by_task.at("stance"), 2000u);
  EXPECT_EQ(m.configs.size(), 4u);
  EXPECT_EQ(enumerate_keys(m, f.registry, f.corpus).size(), 4000u);

  RunFixture g(1, 1);
  const RunManifest one =
      plan_run(g.registry, g.corpus, g.schemas, testing::make_matrix({"sentiment"}));
  EXPECT_EQ(one.counts.total, 1u);
}

TEST(Plan, Errors) {
  RunFixture f(2, 2);
  EXPECT_THROW(plan_run(f.registry, f.corpus, f.schemas, ConfigMatrix{}), Error);
  EXPECT_THROW(plan_run(f.registry, f.corpus, f.schemas, testing::make_matrix({"nope"})), Error);
  EXPECT_THROW(plan_run(f.registry, f.corpus, f.schemas,
                        testing::make_matrix({"stance", "stance"})),
               Error);
}

TEST(Plan, PaperFactors) {
  std::vector<TaskPlanFactor> factors;
  auto add = [&](const std::string& domain, std::uint64_t entities,
                 const std::vector<std::uint64_t>& templates) {
    for (std::size_t i = 0; i < templates.size(); ++i) {
      TaskPlanFactor f;
      f.task_id = domain + std::to_string(i);
      f.domain = domain;
      f.entities = entities;
      f.templates_by_language = {{"en", templates[i]}, {"zh", templates[i]}, {"ru", templates[i]}};
      factors.push_back(f);
    }
  };
  add("politician", 984, {1000, 1000, 1000, 1150});
  add("country", 228, {1000, 1000, 1000, 1050});
  add("company", 1200, {1000, 1000, 1000, 1100});
  const std::vector<std::string> langs{"en", "zh", "ru"};
  const PlanCounts c = plan_counts(factors, 16, langs, 4);
  EXPECT_EQ(c.by_domain.at("politician"), 784051200u);
  EXPECT_EQ(c.by_domain.at("country"), 177292800u);
  EXPECT_EQ(c.by_domain.at("company"), 944640000u);
  EXPECT_EQ(c.total, 1905984000u);
}

TEST(Plan, EntityClassScoping) {
  std::ostringstream lines;
  lines << R"({"id": "c1", "names": {"en": "C1"}, "entity_class": "country"})" << '\n'
        << R"({"id": "c2", "names": {"en": "C2"}, "entity_class": "country"})" << '\n'
        << R"({"id": "p1", "names": {"en": "P1"}, "entity_class": "politician"})" << '\n';
  std::istringstream in(lines.str());
  const std::vector<std::string> en{"en"};
  const EntityRegistry reg = load_entities(in, Taxonomy{}, en);
  RunFixture f(1, 3);
  ConfigMatrix m = testing::make_matrix({});
  m.tasks = {{"sentiment", EntityClass::kCountry}, {"stance", EntityClass::kPolitician}};
  const RunManifest man = plan_run(reg, f.corpus, f.schemas, m);
  EXPECT_EQ(man.counts.by_domain.at("country"), 6u);
  EXPECT_EQ(man.counts.by_domain.at("politician"), 3u);
  EXPECT_EQ(enumerate_keys(man, reg, f.corpus).size(), man.counts.total);
}

TEST(Manifest, RoundTripAndTamper) {
  RunFixture f(3, 4);
  const RunManifest m = plan_run(f.registry, f.corpus, f.schemas, testing::make_matrix({"stance"}));
  const RunManifest back = RunManifest::from_json(m.to_json());
  EXPECT_EQ(back.id, m.id);
  Json j = m.to_json();
  j["created_at"] = "1999-01-01T00:00:00Z";
  EXPECT_EQ(RunManifest::from_json(j).id, m.id);
  j["planned"]["total"] = 7;
  EXPECT_THROW(RunManifest::from_json(j), Error);
  const RunManifest again = plan_run(f.registry, f.corpus, f.schemas, testing::make_matrix({"stance"}));
  EXPECT_EQ(again.id, m.id);
}

TEST(Execute, EndToEndMock) {
  RunFixture f(10, 20);
  const RunManifest m = plan_run(f.registry, f.corpus, f.schemas,
                                 testing::make_matrix({"sentiment"}, {"ZS-Text", "ZS-Num"}));
  MockBackend backend(f.schemas, f.corpus, BiasProfile{});
  TempDir dir;
  ObservationStore store(dir / "obs.log");
  ExecuteOptions opts;
  opts.concurrency = 4;
  const CompletionReport r = execute(m, f.registry, f.corpus, f.schemas, backend, store, opts);
  EXPECT_EQ(r.planned, 400u);
  EXPECT_EQ(r.committed_ok, 400u);
  EXPECT_EQ(store.ok_count(), 400u);
  EXPECT_FALSE(r.interrupted);
  for (const auto& c : r.coverage) EXPECT_EQ(c.coverage(), 1.0);

  const CompletionReport second = execute(m, f.registry, f.corpus, f.schemas, backend, store, opts);
  EXPECT_EQ(second.pending, 0u);
  EXPECT_EQ(second.committed, 0u);
}

TEST(Execute, FailuresReportedAndRetried) {
  RunFixture f(10, 50);
  const RunManifest m = plan_run(f.registry, f.corpus, f.schemas, testing::make_matrix({"sentiment"}));
  BiasProfile p;
  p.failure_rate = 0.01;
  MockBackend flaky(f.schemas, f.corpus, p);
  TempDir dir;
  ObservationStore store(dir / "obs.log");
  const CompletionReport r = execute(m, f.registry, f.corpus, f.schemas, flaky, store);
  ASSERT_EQ(r.coverage.size(), 1u);
  EXPECT_EQ(r.failed_keys.size(), r.coverage[0].failed);
  EXPECT_GT(r.failed_keys.size(), 0u);
  EXPECT_NEAR(r.coverage[0].coverage(), 0.99, 0.01);

  ExecuteOptions keep;
  keep.retry_failed = false;
  EXPECT_EQ(execute(m, f.registry, f.corpus, f.schemas, flaky, store, keep).pending, 0u);

  MockBackend healthy(f.schemas, f.corpus, BiasProfile{});
  const CompletionReport fixed = execute(m, f.registry, f.corpus, f.schemas, healthy, store);
  EXPECT_EQ(fixed.pending, r.failed_keys.size());
  EXPECT_EQ(fixed.coverage[0].coverage(), 1.0);
  EXPECT_TRUE(fixed.failed_keys.empty());
}

TEST(Execute, InterruptThenResumeMatchesUninterrupted) {
  RunFixture f(6, 10);
  const RunManifest m = plan_run(f.registry, f.corpus, f.schemas,
                                 testing::make_matrix({"sentiment", "stance"}, {"ZS-Text", "FS-Num"}));
  const FewShotBank bank = testing::make_bank(f.schemas);
  MockBackend backend(f.schemas, f.corpus, BiasProfile{});
  TempDir dir;
  ExecuteOptions opts;
  opts.few_shot = &bank;

  ObservationStore full(dir / "full.log");
  execute(m, f.registry, f.corpus, f.schemas, backend, full, opts);
  full.compact();

  {
    ObservationStore part(dir / "part.log");
    ExecuteOptions stop = opts;
    stop.stop_after = 100;
    stop.concurrency = 3;
    const CompletionReport r = execute(m, f.registry, f.corpus, f.schemas, backend, part, stop);
    EXPECT_TRUE(r.interrupted);
    EXPECT_EQ(r.committed, 100u);
  }
  ObservationStore resumed(dir / "part.log");
  const CompletionReport r = execute(m, f.registry, f.corpus, f.schemas, backend, resumed, opts);
  EXPECT_EQ(r.pending, m.counts.total - 100);
  resumed.compact();
  EXPECT_EQ(snapshot(resumed), snapshot(full));
  EXPECT_EQ(slurp(dir / "part.log"), slurp(dir / "full.log"));
}

TEST(Execute, DigestMismatchAndMissingBank) {
  RunFixture f(3, 4);
  const RunManifest m = plan_run(f.registry, f.corpus, f.schemas,
                                 testing::make_matrix({"stance"}, {"FS-Text"}));
  MockBackend backend(f.schemas, f.corpus, BiasProfile{});
  TempDir dir;
  ObservationStore store(dir / "obs.log");
  try {
    execute(m, f.registry, f.corpus, f.schemas, backend, store);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kPrecondition);
  }
  RunFixture other(4, 4);
  try {
    execute(m, other.registry, f.corpus, f.schemas, backend, store);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDigestMismatch);
  }
}

TEST(Execute, FewShotPromptSharedAcrossEntities) {
  RunFixture f(3, 2);
  const RunManifest m = plan_run(f.registry, f.corpus, f.schemas,
                                 testing::make_matrix({"sentiment"}, {"FS-Text"}));
  const FewShotBank bank = testing::make_bank(f.schemas);
  struct Capture final : Backend {
    std::vector<std::string> prompts;
    TokenLogprobs query(const CompletionRequest& r) override {
      prompts.push_back(r.prompt);
      return TokenLogprobs::failed("noop");
    }
  } capture;
  const auto keys = enumerate_keys(m, f.registry, f.corpus);
  for (const auto& k : keys) {
    const Observation o = observe(m, k, f.schemas, capture, &bank);
    EXPECT_FALSE(o.ok);
    EXPECT_EQ(o.failure_reason, "noop");
  }
  ASSERT_EQ(capture.prompts.size(), 6u);
  auto strip = [](std::string p, const std::string& name) {
    for (auto pos = p.find(name); pos != std::string::npos; pos = p.find(name)) p.replace(pos, name.size(), "X");
    return p;
  };
  EXPECT_EQ(strip(capture.prompts[0], "Entity 0"), strip(capture.prompts[1], "Entity 1"));
  EXPECT_EQ(strip(capture.prompts[1], "Entity 1"), strip(capture.prompts[2], "Entity 2"));
}

}  // namespace
}  // namespace entbias
