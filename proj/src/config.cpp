#include "entbias/config.hpp"

#include <fstream>
#include <sstream>

#include "entbias/alignment.hpp"
#include "entbias/error.hpp"

namespace entbias {
namespace {

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  return in;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kInvalidInput, path.string() + ": " + e.what());
  }
}

AuditConfig AuditConfig::from_json(const Json& j, const std::filesystem::path& base_dir) {
  AuditConfig c;
  try {
    c.taxonomy = resolve(base_dir, j.at("taxonomy").get<std::string>());
    c.entities = resolve(base_dir, j.at("entities").get<std::string>());
    c.schemas = resolve(base_dir, j.at("schemas").get<std::string>());
    const Json& templates = j.at("templates");
    if (templates.is_string()) {
      c.templates.push_back(resolve(base_dir, templates.get<std::string>()));
    } else {
      for (const auto& t : templates) c.templates.push_back(resolve(base_dir, t.get<std::string>()));
    }
    for (const auto& b : j.value("benchmarks", Json::array())) {
      c.benchmarks.push_back(resolve(base_dir, b.get<std::string>()));
    }
    if (j.contains("few_shot")) c.few_shot = resolve(base_dir, j.at("few_shot").get<std::string>());
    c.matrix = ConfigMatrix::from_json(j.at("matrix"));
    c.languages = j.value("languages", c.matrix.languages);
    c.store = resolve(base_dir, j.value("store", c.store.string()));
    c.manifest = resolve(base_dir, j.value("manifest", c.manifest.string()));
    c.concurrency = j.value("concurrency", c.concurrency);
    if (j.contains("endpoint")) c.endpoint = j.at("endpoint");
    if (j.contains("mock")) c.mock = BiasProfile::from_json(j.at("mock"));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kInvalidInput, std::string("config: ") + e.what());
  }
  return c;
}

AuditConfig AuditConfig::load(const std::filesystem::path& path) {
  return from_json(read_json_file(path), path.parent_path());
}

AuditData load_audit_data(const AuditConfig& config) {
  AuditData d;
  {
    std::ifstream in = open_input(config.taxonomy);
    d.taxonomy = Taxonomy::load(in);
  }
  {
    std::ifstream in = open_input(config.entities);
    d.registry = load_entities(in, d.taxonomy, config.languages);
  }
  {
    std::ifstream in = open_input(config.schemas);
    d.schemas = load_label_schemas(in);
  }
  // All template sources go through one loader so ids, labels and balance are
  // checked across files.
  std::stringstream combined;
  for (const auto& path : config.templates) {
    std::ifstream in = open_input(path);
    combined << std::string(std::istreambuf_iterator<char>(in), {}) << '\n';
  }
  for (const auto& path : config.benchmarks) {
    std::ifstream in = open_input(path);
    for (const Template& t : load_benchmark_items(in, d.schemas)) combined << t.to_json().dump() << '\n';
  }
  LoadedTemplates loaded = load_templates(combined, d.schemas, config.languages);
  d.corpus = std::move(loaded.corpus);
  d.balance = std::move(loaded.balance);
  if (config.few_shot) {
    std::ifstream in = open_input(*config.few_shot);
    d.few_shot = FewShotBank::load(in);
  }
  return d;
}

}  // namespace entbias
