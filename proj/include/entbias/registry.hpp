#pragma once

// Static data model of an audit: entities, label schemas and template corpora.
// Everything here is immutable after load and safe for concurrent reads.

#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "entbias/util.hpp"

namespace entbias {

inline constexpr std::string_view kPlaceholder = "X";
inline constexpr std::string_view kUnknownGroup = "unknown";

enum class EntityClass { kPolitician, kCountry, kCompany, kCustom };

std::string_view to_string(EntityClass c);
EntityClass parse_entity_class(std::string_view s);

struct Entity {
  std::string id;
  std::map<std::string, std::string> names;  // language code -> surface form
  EntityClass entity_class = EntityClass::kCustom;
  std::map<std::string, std::string> metadata;

  const std::string* name_in(const std::string& language) const;
  std::string tag(const std::string& key) const;  // kUnknownGroup when absent
};

/// Declared metadata keys and, optionally, the admissible values for each.
/// An empty value set accepts any value.
struct Taxonomy {
  std::map<std::string, std::set<std::string>> keys;

  bool has_key(const std::string& key) const { return keys.contains(key); }
  static Taxonomy from_json(const Json& j);
  static Taxonomy load(std::istream& in);
};

class EntityRegistry {
 public:
  EntityRegistry() = default;
  EntityRegistry(std::vector<Entity> entities, std::string digest);

  std::size_t size() const { return entities_.size(); }
  bool empty() const { return entities_.empty(); }
  const std::vector<Entity>& entities() const { return entities_; }
  const Entity* find(const std::string& id) const;
  const Entity& at(const std::string& id) const;
  const std::string& digest() const { return digest_; }

  /// Entities of one class, in registry order.
  std::vector<const Entity*> of_class(EntityClass c) const;

 private:
  std::vector<Entity> entities_;
  std::unordered_map<std::string, std::size_t> index_;
  std::string digest_;
};

struct Label {
  std::string id;
  std::map<std::string, std::string> display;  // language -> text
  double weight = 0.0;
  int numeric_alias = 0;  // 1..K in schema order
};

struct LabelSchema {
  std::string task_id;
  std::map<std::string, std::string> role_instruction;
  std::vector<Label> labels;

  std::size_t size() const { return labels.size(); }
  std::optional<std::size_t> index_of(const std::string& label_id) const;
  std::vector<double> weights() const;
  const std::string& display(std::size_t label, const std::string& language) const;
  const std::string& role(const std::string& language) const;
  Json to_json() const;
};

/// First whitespace-delimited token of a label answer, lowercased. Scoring
/// matches endpoint tokens against this.
std::string first_answer_token(std::string_view answer);

class SchemaSet {
 public:
  void add(LabelSchema schema);
  const LabelSchema* find(const std::string& task_id) const;
  const LabelSchema& at(const std::string& task_id) const;
  const std::map<std::string, LabelSchema>& all() const { return schemas_; }
  std::size_t size() const { return schemas_.size(); }
  std::string digest() const;

 private:
  std::map<std::string, LabelSchema> schemas_;
};

enum class TemplateOrigin { kSynthetic, kRealBenchmark };

std::string_view to_string(TemplateOrigin o);
TemplateOrigin parse_template_origin(std::string_view s);

struct Template {
  std::string id;
  std::string task_id;
  std::string language;
  std::string text;
  std::string intended_label;
  std::vector<std::string> keywords;
  TemplateOrigin origin = TemplateOrigin::kSynthetic;

  Json to_json() const;
};

class TemplateCorpus {
 public:
  TemplateCorpus() = default;
  TemplateCorpus(std::vector<Template> templates, std::string digest);

  /// Builds a corpus from in-memory templates (digest over their records).
  /// Throws on duplicate ids.
  static TemplateCorpus from_templates(std::vector<Template> templates);

  std::size_t size() const { return templates_.size(); }
  const std::vector<Template>& templates() const { return templates_; }
  const Template* find(const std::string& id) const;
  const Template& at(const std::string& id) const;
  const std::string& digest() const { return digest_; }

  /// Templates for (task, language), sorted by id: the canonical context order.
  std::vector<const Template*> select(const std::string& task_id,
                                      const std::string& language) const;

 private:
  std::vector<Template> templates_;
  std::unordered_map<std::string, std::size_t> index_;
  std::string digest_;
};

struct BalanceCell {
  std::string task_id;
  std::string language;
  std::string label_id;
  std::size_t count = 0;
};

struct BalanceGroup {
  std::string task_id;
  std::string language;
  double max_min_ratio = 1.0;  // infinity when some label has no templates
  bool warning = false;
};

inline constexpr double kBalanceWarnRatio = 1.2;

struct BalanceReport {
  std::vector<BalanceCell> cells;
  std::vector<BalanceGroup> groups;
  std::vector<std::string> warnings;
  std::size_t multi_placeholder_templates = 0;
};

struct LoadedTemplates {
  TemplateCorpus corpus;
  BalanceReport balance;
};

struct RegistrySummary {
  std::string key;
  std::map<std::string, std::size_t> counts;

  std::size_t total() const;
};

/// Number of standalone `X` tokens (ASCII word boundaries) in `text`.
std::size_t count_placeholders(std::string_view text);

/// Replaces every standalone `X` in `text` with `surface`.
std::string substitute_placeholder(std::string_view text, std::string_view surface);

EntityRegistry load_entities(std::istream& in, const Taxonomy& taxonomy,
                             std::span<const std::string> languages);
LabelSchema load_label_schema(const Json& record);
SchemaSet load_label_schemas(std::istream& in);
LoadedTemplates load_templates(std::istream& in, const SchemaSet& schemas,
                               std::span<const std::string> languages = {});
RegistrySummary summarize(const EntityRegistry& registry, const std::string& key,
                          const Taxonomy& taxonomy);

Template parse_template(const Json& record);

}  // namespace entbias
