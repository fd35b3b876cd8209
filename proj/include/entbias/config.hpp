#pragma once

// Audit project file. Paths are resolved relative to the file itself.
//
// {
//   "taxonomy": "taxonomy.json",
//   "entities": "entities.jsonl",
//   "schemas": "schemas.jsonl",
//   "templates": ["templates.jsonl", ...],
//   "benchmarks": ["benchmark_items.jsonl", ...],   optional
//   "few_shot": "few_shot.jsonl",                   optional
//   "languages": ["en", "zh", "ru"],                defaults to matrix languages
//   "matrix": { see ConfigMatrix },
//   "store": "run/observations.log",
//   "manifest": "run/manifest.json",
//   "concurrency": 8,
//   "endpoint": { see EndpointConfig },             optional
//   "mock": { see BiasProfile }                     optional
// }

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "entbias/gateway.hpp"
#include "entbias/mock.hpp"
#include "entbias/registry.hpp"
#include "entbias/runner.hpp"

namespace entbias {

struct AuditConfig {
  std::filesystem::path taxonomy;
  std::filesystem::path entities;
  std::filesystem::path schemas;
  std::vector<std::filesystem::path> templates;
  std::vector<std::filesystem::path> benchmarks;
  std::optional<std::filesystem::path> few_shot;
  std::vector<std::string> languages;
  ConfigMatrix matrix;
  std::filesystem::path store = "run/observations.log";
  std::filesystem::path manifest = "run/manifest.json";
  unsigned concurrency = 8;
  std::optional<Json> endpoint;
  std::optional<BiasProfile> mock;

  static AuditConfig from_json(const Json& j, const std::filesystem::path& base_dir);
  static AuditConfig load(const std::filesystem::path& path);
};

struct AuditData {
  Taxonomy taxonomy;
  EntityRegistry registry;
  SchemaSet schemas;
  TemplateCorpus corpus;  // templates plus masked benchmark items
  BalanceReport balance;
  FewShotBank few_shot;
};

AuditData load_audit_data(const AuditConfig& config);

Json read_json_file(const std::filesystem::path& path);

}  // namespace entbias
