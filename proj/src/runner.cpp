#include "entbias/runner.hpp"

#include <algorithm>
#include <condition_variable>
#include <ctime>
#include <deque>
#include <limits>
#include <mutex>
#include <set>
#include <thread>

#include "entbias/error.hpp"
#include "entbias/log.hpp"
#include "entbias/scoring.hpp"

namespace entbias {
namespace {

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) {
    throw Error(ErrorCode::kInvalidInput, "planned total overflows 64 bits");
  }
  return a * b;
}

std::uint64_t checked_add(std::uint64_t a, std::uint64_t b) {
  if (b > std::numeric_limits<std::uint64_t>::max() - a) {
    throw Error(ErrorCode::kInvalidInput, "planned total overflows 64 bits");
  }
  return a + b;
}

const TaskScope& scope_of(const ConfigMatrix& m, const std::string& task_id) {
  for (const auto& t : m.tasks) {
    if (t.task_id == task_id) return t;
  }
  throw Error(ErrorCode::kUnknownTask, "task '" + task_id + "' is not in the config matrix");
}

Json counts_json(const PlanCounts& c) {
  return Json{{"total", c.total}, {"by_domain", c.by_domain}, {"by_task", c.by_task}};
}

}  // namespace

ConfigMatrix ConfigMatrix::from_json(const Json& j) {
  ConfigMatrix m;
  m.models = j.value("models", std::vector<std::string>{});
  m.languages = j.value("languages", std::vector<std::string>{});
  if (j.contains("variants")) {
    for (const auto& v : j.at("variants")) m.variants.push_back(PromptVariant::parse(v.get<std::string>()));
  } else {
    m.variants = PromptVariant::all();
  }
  for (const auto& t : j.value("tasks", Json::array())) {
    TaskScope s;
    if (t.is_string()) {
      s.task_id = t.get<std::string>();
    } else {
      s.task_id = t.at("task_id").get<std::string>();
      if (t.contains("entity_class")) {
        s.entity_class = parse_entity_class(t.at("entity_class").get<std::string>());
      }
    }
    m.tasks.push_back(std::move(s));
  }
  return m;
}

Json ConfigMatrix::to_json() const {
  Json tasks_json = Json::array();
  for (const auto& t : tasks) {
    Json e{{"task_id", t.task_id}};
    if (t.entity_class) e["entity_class"] = std::string(to_string(*t.entity_class));
    tasks_json.push_back(std::move(e));
  }
  std::vector<std::string> variant_names;
  for (const auto& v : variants) variant_names.push_back(v.name());
  return Json{{"models", models},
              {"languages", languages},
              {"variants", variant_names},
              {"tasks", tasks_json}};
}

PlanCounts plan_counts(std::span<const TaskPlanFactor> factors, std::size_t models,
                       std::span<const std::string> languages, std::size_t variants) {
  PlanCounts c;
  const std::uint64_t per_pair = checked_mul(models, variants);
  for (const auto& f : factors) {
    std::uint64_t pairs = 0;
    for (const auto& lang : languages) {
      const auto it = f.templates_by_language.find(lang);
      if (it != f.templates_by_language.end()) {
        pairs = checked_add(pairs, checked_mul(f.entities, it->second));
      }
    }
    const std::uint64_t n = checked_mul(pairs, per_pair);
    c.by_task[f.task_id] = checked_add(c.by_task[f.task_id], n);
    c.by_domain[f.domain] = checked_add(c.by_domain[f.domain], n);
    c.total = checked_add(c.total, n);
  }
  return c;
}

PlanFactors PlanFactors::from_json(const Json& j) {
  try {
    PlanFactors f;
    const Json& models = j.at("models");
    f.models = models.is_number() ? models.get<std::size_t>() : models.size();
    f.languages = j.at("languages").get<std::vector<std::string>>();
    const Json& variants = j.at("variants");
    f.variants = variants.is_number() ? variants.get<std::size_t>() : variants.size();
    for (const auto& t : j.at("tasks")) {
      TaskPlanFactor tf;
      tf.task_id = t.at("task_id").get<std::string>();
      tf.domain = t.value("domain", std::string("all"));
      tf.entities = t.at("entities").get<std::uint64_t>();
      const auto templates = t.at("templates").get<std::uint64_t>();
      for (const auto& lang : f.languages) tf.templates_by_language[lang] = templates;
      f.tasks.push_back(std::move(tf));
    }
    return f;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kInvalidSchema, std::string("plan factors: ") + e.what());
  }
}

std::string RunManifest::compute_id() const {
  std::vector<std::string> keys;
  for (const auto& c : configs) keys.push_back(c.key());
  const Json canon{{"entity_digest", entity_digest}, {"template_digest", template_digest},
                   {"schema_digest", schema_digest}, {"matrix", matrix.to_json()},
                   {"configs", keys},                {"counts", counts_json(counts)}};
  return sha256_hex(canon.dump());
}

Json RunManifest::to_json() const {
  Json configs_json = Json::array();
  for (const auto& c : configs) {
    configs_json.push_back(Json{{"task_id", c.task_id},
                                {"model_id", c.model_id},
                                {"language", c.language},
                                {"variant", c.variant.name()}});
  }
  return Json{{"id", id},
              {"entity_digest", entity_digest},
              {"template_digest", template_digest},
              {"schema_digest", schema_digest},
              {"matrix", matrix.to_json()},
              {"configs", configs_json},
              {"planned", counts_json(counts)},
              {"created_at", created_at}};
}

RunManifest RunManifest::from_json(const Json& j) {
  RunManifest m;
  m.id = j.at("id").get<std::string>();
  m.entity_digest = j.at("entity_digest").get<std::string>();
  m.template_digest = j.at("template_digest").get<std::string>();
  m.schema_digest = j.at("schema_digest").get<std::string>();
  m.matrix = ConfigMatrix::from_json(j.at("matrix"));
  for (const auto& c : j.at("configs")) {
    m.configs.push_back({c.at("task_id").get<std::string>(), c.at("model_id").get<std::string>(),
                         c.at("language").get<std::string>(),
                         PromptVariant::parse(c.at("variant").get<std::string>())});
  }
  const Json& p = j.at("planned");
  m.counts.total = p.at("total").get<std::uint64_t>();
  m.counts.by_domain = p.at("by_domain").get<std::map<std::string, std::uint64_t>>();
  m.counts.by_task = p.at("by_task").get<std::map<std::string, std::uint64_t>>();
  m.created_at = j.value("created_at", std::string());
  if (m.compute_id() != m.id) {
    throw Error(ErrorCode::kDigestMismatch, "manifest id does not match its contents");
  }
  return m;
}

std::vector<const Entity*> task_entities(const EntityRegistry& registry, const TaskScope& scope) {
  std::vector<const Entity*> out;
  if (scope.entity_class) {
    out = registry.of_class(*scope.entity_class);
  } else {
    for (const auto& e : registry.entities()) out.push_back(&e);
  }
  std::sort(out.begin(), out.end(), [](const Entity* a, const Entity* b) { return a->id < b->id; });
  return out;
}

RunManifest plan_run(const EntityRegistry& registry, const TemplateCorpus& corpus,
                     const SchemaSet& schemas, const ConfigMatrix& matrix) {
  if (matrix.models.empty() || matrix.languages.empty() || matrix.variants.empty() ||
      matrix.tasks.empty()) {
    throw Error(ErrorCode::kInvalidInput, "config matrix is empty");
  }
  std::set<std::string> seen_tasks;
  std::vector<TaskPlanFactor> factors;
  RunManifest m;
  for (const auto& scope : matrix.tasks) {
    if (schemas.find(scope.task_id) == nullptr) {
      throw Error(ErrorCode::kUnknownTask, "config matrix references unknown task '" +
                                               scope.task_id + "'");
    }
    if (!seen_tasks.insert(scope.task_id).second) {
      throw Error(ErrorCode::kDuplicateId, "task '" + scope.task_id + "' listed twice");
    }
    TaskPlanFactor f;
    f.task_id = scope.task_id;
    f.domain = scope.entity_class ? std::string(to_string(*scope.entity_class)) : "all";
    f.entities = task_entities(registry, scope).size();
    if (f.entities == 0) log::warn("task '" + scope.task_id + "' has no entities");
    for (const auto& lang : matrix.languages) {
      f.templates_by_language[lang] = corpus.select(scope.task_id, lang).size();
      for (const auto& model : matrix.models) {
        for (const auto& variant : matrix.variants) {
          m.configs.push_back({scope.task_id, model, lang, variant});
        }
      }
    }
    factors.push_back(std::move(f));
  }
  std::sort(m.configs.begin(), m.configs.end());
  m.configs.erase(std::unique(m.configs.begin(), m.configs.end()), m.configs.end());
  m.counts = plan_counts(factors, matrix.models.size(), matrix.languages,
                         std::set<PromptVariant>(matrix.variants.begin(), matrix.variants.end()).size());
  m.entity_digest = registry.digest();
  m.template_digest = corpus.digest();
  m.schema_digest = schemas.digest();
  m.matrix = matrix;
  m.created_at = utc_now();
  m.id = m.compute_id();
  return m;
}

std::string WorkKey::key() const {
  return entity->id + "|" + tmpl->id + "|" + config->key();
}

std::vector<WorkKey> enumerate_keys(const RunManifest& manifest, const EntityRegistry& registry,
                                    const TemplateCorpus& corpus) {
  std::vector<WorkKey> keys;
  for (const RunConfig& c : manifest.configs) {
    const std::vector<const Entity*> entities =
        task_entities(registry, scope_of(manifest.matrix, c.task_id));
    for (const Template* t : corpus.select(c.task_id, c.language)) {
      for (const Entity* e : entities) keys.push_back({e, t, &c});
    }
  }
  return keys;
}

void verify_manifest(const RunManifest& manifest, const EntityRegistry& registry,
                     const TemplateCorpus& corpus, const SchemaSet& schemas) {
  auto check = [](const std::string& what, const std::string& planned, const std::string& now) {
    if (planned != now) {
      throw Error(ErrorCode::kDigestMismatch,
                  what + " changed since planning (" + planned.substr(0, 12) + " -> " +
                      now.substr(0, 12) + ")");
    }
  };
  check("entity registry", manifest.entity_digest, registry.digest());
  check("template corpus", manifest.template_digest, corpus.digest());
  check("label schemas", manifest.schema_digest, schemas.digest());
}

std::uint64_t few_shot_seed(const RunManifest& manifest, const Template& tmpl,
                            const RunConfig& config) {
  return stable_hash(tmpl.id + "|" + config.key(), stable_hash(manifest.id));
}

Observation observe(const RunManifest& manifest, const WorkKey& k, const SchemaSet& schemas,
                    Backend& backend, const FewShotBank* few_shot) {
  Observation o;
  o.entity_id = k.entity->id;
  o.template_id = k.tmpl->id;
  o.config = *k.config;
  try {
    const LabelSchema& schema = schemas.at(k.config->task_id);
    const AssembledPrompt prompt =
        assemble_prompt(*k.tmpl, *k.entity, schema, *k.config, few_shot,
                        few_shot_seed(manifest, *k.tmpl, *k.config));
    CompletionRequest request;
    request.model = k.config->model_id;
    request.prompt = prompt.text;
    request.metadata = {k.entity->id, k.tmpl->id, k.config->task_id, k.config->language,
                        k.config->variant};
    const TokenLogprobs lp = backend.query(request);
    o.retries = lp.retries;
    PosteriorResult post = extract_posterior(lp, prompt.expected_answers);
    if (post.ok) {
      o.ok = true;
      o.posterior = std::move(post.posterior);
      o.predicted = schema.labels[predicted_label(o.posterior)].id;
    } else {
      o.failure_reason = post.failure_reason;
    }
  } catch (const std::exception& e) {
    o.ok = false;
    o.failure_reason = std::string("error: ") + e.what();
  }
  return o;
}

CompletionReport coverage_report(const RunManifest& manifest, const EntityRegistry& registry,
                                 const TemplateCorpus& corpus, const ObservationStore& store) {
  CompletionReport r;
  const std::vector<Observation> all = store.observations();
  std::map<std::string, const Observation*> by_key;
  for (const auto& o : all) by_key.emplace(o.key(), &o);
  std::map<RunConfig, ConfigCoverage> cov;
  for (const auto& c : manifest.configs) cov[c].config = c;
  for (const WorkKey& k : enumerate_keys(manifest, registry, corpus)) {
    ++r.planned;
    ConfigCoverage& c = cov[*k.config];
    ++c.planned;
    const std::string key = k.key();
    const auto it = by_key.find(key);
    if (it == by_key.end()) continue;
    if (it->second->ok) {
      ++c.ok;
    } else {
      ++c.failed;
      r.failed_keys.push_back(key);
    }
  }
  std::sort(r.failed_keys.begin(), r.failed_keys.end());
  for (auto& [_, c] : cov) r.coverage.push_back(c);
  return r;
}

CompletionReport execute(const RunManifest& manifest, const EntityRegistry& registry,
                         const TemplateCorpus& corpus, const SchemaSet& schemas, Backend& backend,
                         ObservationStore& store, const ExecuteOptions& options) {
  verify_manifest(manifest, registry, corpus, schemas);
  const bool needs_few_shot =
      std::any_of(manifest.configs.begin(), manifest.configs.end(), [](const RunConfig& c) {
        return c.variant.supervision == Supervision::kFewShot;
      });
  if (needs_few_shot && (options.few_shot == nullptr || options.few_shot->empty())) {
    throw Error(ErrorCode::kPrecondition, "few-shot variants planned but no few-shot bank given");
  }

  const std::vector<WorkKey> keys = enumerate_keys(manifest, registry, corpus);
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const std::string key = keys[i].key();
    if (store.completed(key)) continue;
    if (!options.retry_failed && store.has_record(key)) continue;
    pending.push_back(i);
  }
  log::info("run " + manifest.id.substr(0, 12) + ": " + std::to_string(pending.size()) + " of " +
            std::to_string(keys.size()) + " keys pending");

  CompletionReport report;
  report.pending = pending.size();
  const unsigned threads = static_cast<unsigned>(
      std::clamp<std::size_t>(options.concurrency, 1, std::max<std::size_t>(pending.size(), 1)));
  const std::size_t queue_cap = 4 * static_cast<std::size_t>(threads);

  std::mutex mu;
  std::condition_variable ready, space;
  std::deque<Observation> queue;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  unsigned live = threads;

  auto worker = [&] {
    for (;;) {
      if (stop.load() || (options.cancel != nullptr && options.cancel->load())) break;
      const std::size_t i = next.fetch_add(1);
      if (i >= pending.size()) break;
      Observation o = observe(manifest, keys[pending[i]], schemas, backend, options.few_shot);
      std::unique_lock lock(mu);
      space.wait(lock, [&] { return queue.size() < queue_cap || stop.load(); });
      if (stop.load()) break;
      queue.push_back(std::move(o));
      ready.notify_one();
    }
    std::lock_guard lock(mu);
    --live;
    ready.notify_one();
  };

  std::vector<std::jthread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);

  const std::size_t progress_step = std::max<std::size_t>(pending.size() / 10, 1);
  for (;;) {
    std::unique_lock lock(mu);
    ready.wait(lock, [&] { return !queue.empty() || live == 0; });
    if (queue.empty()) break;
    Observation o = std::move(queue.front());
    queue.pop_front();
    space.notify_one();
    lock.unlock();

    if (store.append(o)) {
      ++report.committed;
      ++(o.ok ? report.committed_ok : report.committed_failed);
      if (report.committed % progress_step == 0) {
        log::info("committed " + std::to_string(report.committed) + "/" +
                  std::to_string(pending.size()));
      }
    }
    if (options.stop_after && report.committed >= *options.stop_after) {
      stop.store(true);
      std::lock_guard relock(mu);
      space.notify_all();
      break;
    }
  }
  pool.clear();  // joins

  const CompletionReport cov = coverage_report(manifest, registry, corpus, store);
  report.planned = cov.planned;
  report.coverage = cov.coverage;
  report.failed_keys = cov.failed_keys;
  std::size_t done = 0;
  for (const auto& c : cov.coverage) done += c.ok + c.failed;
  report.interrupted = done < cov.planned;
  return report;
}

}  // namespace entbias
