#pragma once

// Run planning, accounting and resumable execution over the
// entity x template x configuration product.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "entbias/gateway.hpp"
#include "entbias/registry.hpp"
#include "entbias/store.hpp"

namespace entbias {

struct TaskScope {
  std::string task_id;
  std::optional<EntityClass> entity_class;  // all entities when absent
};

struct ConfigMatrix {
  std::vector<std::string> models;
  std::vector<std::string> languages;
  std::vector<PromptVariant> variants;
  std::vector<TaskScope> tasks;

  /// {"models": [...], "languages": [...], "variants": [...] (default all four),
  ///  "tasks": ["t" | {"task_id": "t", "entity_class": "company"}, ...]}
  static ConfigMatrix from_json(const Json& j);
  Json to_json() const;
};

/// Counting inputs for one task: |E_T| and |S^T| per language.
struct TaskPlanFactor {
  std::string task_id;
  std::string domain;  // subtotal bucket, e.g. the entity class
  std::uint64_t entities = 0;
  std::map<std::string, std::uint64_t> templates_by_language;
};

struct PlanCounts {
  std::uint64_t total = 0;
  std::map<std::string, std::uint64_t> by_domain;
  std::map<std::string, std::uint64_t> by_task;
};

/// N = |models| * |variants| * sum_T sum_lang |E_T| * |S^T_lang|, in exact
/// integer arithmetic. Throws on overflow.
PlanCounts plan_counts(std::span<const TaskPlanFactor> factors, std::size_t models,
                       std::span<const std::string> languages, std::size_t variants);

/// Declared factors of a planned study, for counting without loading data.
/// {"models": n | [...], "languages": [...], "variants": n | [...],
///  "tasks": [{"task_id", "domain", "entities", "templates"}, ...]}
struct PlanFactors {
  std::vector<TaskPlanFactor> tasks;
  std::size_t models = 0;
  std::vector<std::string> languages;
  std::size_t variants = 0;

  static PlanFactors from_json(const Json& j);
  PlanCounts counts() const { return plan_counts(tasks, models, languages, variants); }
};

struct RunManifest {
  std::string id;  // digest over everything below except created_at
  std::string entity_digest;
  std::string template_digest;
  std::string schema_digest;
  ConfigMatrix matrix;
  std::vector<RunConfig> configs;  // sorted
  PlanCounts counts;
  std::string created_at;

  Json to_json() const;
  static RunManifest from_json(const Json& j);
  std::string compute_id() const;
};

/// Entities a task runs over, sorted by id.
std::vector<const Entity*> task_entities(const EntityRegistry& registry, const TaskScope& scope);

RunManifest plan_run(const EntityRegistry& registry, const TemplateCorpus& corpus,
                     const SchemaSet& schemas, const ConfigMatrix& matrix);

struct WorkKey {
  const Entity* entity = nullptr;
  const Template* tmpl = nullptr;
  const RunConfig* config = nullptr;

  std::string key() const;
};

/// Every key of the manifest in canonical order: configs, then templates by
/// id, then entities by id.
std::vector<WorkKey> enumerate_keys(const RunManifest& manifest, const EntityRegistry& registry,
                                    const TemplateCorpus& corpus);

void verify_manifest(const RunManifest& manifest, const EntityRegistry& registry,
                     const TemplateCorpus& corpus, const SchemaSet& schemas);

struct ExecuteOptions {
  unsigned concurrency = 1;
  // Stop after this many new records were committed (simulates an interrupted run).
  std::optional<std::size_t> stop_after;
  bool retry_failed = true;
  const FewShotBank* few_shot = nullptr;
  const std::atomic<bool>* cancel = nullptr;
};

struct ConfigCoverage {
  RunConfig config;
  std::size_t planned = 0;
  std::size_t ok = 0;
  std::size_t failed = 0;

  double coverage() const { return planned == 0 ? 0.0 : static_cast<double>(ok) / planned; }
};

struct CompletionReport {
  std::size_t planned = 0;
  std::size_t pending = 0;    // keys needing work at start
  std::size_t committed = 0;  // records written by this call
  std::size_t committed_ok = 0;
  std::size_t committed_failed = 0;
  bool interrupted = false;
  std::vector<ConfigCoverage> coverage;
  std::vector<std::string> failed_keys;  // sorted
};

/// Queries every key the store does not hold an ok record for. Workers feed a
/// single committing thread; records depend only on their key.
CompletionReport execute(const RunManifest& manifest, const EntityRegistry& registry,
                         const TemplateCorpus& corpus, const SchemaSet& schemas, Backend& backend,
                         ObservationStore& store, const ExecuteOptions& options = {});

/// Assembles the prompt for one key, queries `backend` and turns the answer
/// into an observation. Never throws; failures become failed observations.
Observation observe(const RunManifest& manifest, const WorkKey& key, const SchemaSet& schemas,
                    Backend& backend, const FewShotBank* few_shot);

/// Coverage of the manifest by the store's current contents.
CompletionReport coverage_report(const RunManifest& manifest, const EntityRegistry& registry,
                                 const TemplateCorpus& corpus, const ObservationStore& store);

/// Few-shot selection seed for a (template, config) cell. Shared by all
/// entities so their prompts differ only in the entity.
std::uint64_t few_shot_seed(const RunManifest& manifest, const Template& tmpl,
                            const RunConfig& config);

}  // namespace entbias
