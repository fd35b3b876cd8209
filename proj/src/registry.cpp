#include "entbias/registry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "entbias/error.hpp"

namespace entbias {
namespace {

bool is_word_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
         c == '_';
}

// Positions of standalone placeholder tokens. Non-ASCII bytes count as
// boundaries so that `X` embedded in CJK text is still found.
std::vector<std::size_t> placeholder_positions(std::string_view text) {
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != kPlaceholder[0]) continue;
    const bool left_ok = i == 0 || !is_word_char(text[i - 1]);
    const bool right_ok = i + 1 >= text.size() || !is_word_char(text[i + 1]);
    if (left_ok && right_ok) pos.push_back(i);
  }
  return pos;
}

std::map<std::string, std::string> string_map(const Json& j, std::string_view field) {
  std::map<std::string, std::string> out;
  if (j.is_null()) return out;
  if (!j.is_object()) {
    throw Error(ErrorCode::kInvalidInput, std::string(field) + " must be an object");
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_string()) {
      throw Error(ErrorCode::kInvalidInput,
                  std::string(field) + "." + it.key() + " must be a string");
    }
    out.emplace(it.key(), it.value().get<std::string>());
  }
  return out;
}

std::string required_string(const Json& j, const char* field, std::string_view what) {
  if (!j.contains(field) || !j.at(field).is_string()) {
    throw Error(ErrorCode::kInvalidInput,
                std::string(what) + " record lacks string field '" + field + "'");
  }
  return j.at(field).get<std::string>();
}

std::string digest_records(const std::vector<Json>& records) {
  std::string canon;
  for (const auto& r : records) {
    canon += r.dump();
    canon += '\n';
  }
  return sha256_hex(canon);
}

}  // namespace

std::string_view to_string(EntityClass c) {
  switch (c) {
    case EntityClass::kPolitician: return "politician";
    case EntityClass::kCountry: return "country";
    case EntityClass::kCompany: return "company";
    case EntityClass::kCustom: return "custom";
  }
  return "custom";
}

EntityClass parse_entity_class(std::string_view s) {
  if (s == "politician") return EntityClass::kPolitician;
  if (s == "country") return EntityClass::kCountry;
  if (s == "company") return EntityClass::kCompany;
  if (s == "custom") return EntityClass::kCustom;
  throw Error(ErrorCode::kInvalidInput, "unknown entity_class '" + std::string(s) + "'");
}

const std::string* Entity::name_in(const std::string& language) const {
  auto it = names.find(language);
  return it == names.end() ? nullptr : &it->second;
}

std::string Entity::tag(const std::string& key) const {
  auto it = metadata.find(key);
  return it == metadata.end() ? std::string(kUnknownGroup) : it->second;
}

Taxonomy Taxonomy::from_json(const Json& j) {
  Taxonomy t;
  const Json& keys = j.contains("keys") ? j.at("keys") : j;
  if (!keys.is_object()) throw Error(ErrorCode::kInvalidInput, "taxonomy must be an object");
  for (auto it = keys.begin(); it != keys.end(); ++it) {
    std::set<std::string> values;
    for (const auto& v : it.value()) values.insert(v.get<std::string>());
    t.keys.emplace(it.key(), std::move(values));
  }
  return t;
}

Taxonomy Taxonomy::load(std::istream& in) {
  try {
    return from_json(Json::parse(in));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kInvalidInput, std::string("taxonomy: ") + e.what());
  }
}

EntityRegistry::EntityRegistry(std::vector<Entity> entities, std::string digest)
    : entities_(std::move(entities)), digest_(std::move(digest)) {
  for (std::size_t i = 0; i < entities_.size(); ++i) index_.emplace(entities_[i].id, i);
}

const Entity* EntityRegistry::find(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &entities_[it->second];
}

const Entity& EntityRegistry::at(const std::string& id) const {
  if (const Entity* e = find(id)) return *e;
  throw Error(ErrorCode::kNotFound, "unknown entity '" + id + "'");
}

std::vector<const Entity*> EntityRegistry::of_class(EntityClass c) const {
  std::vector<const Entity*> out;
  for (const auto& e : entities_) {
    if (e.entity_class == c) out.push_back(&e);
  }
  return out;
}

EntityRegistry load_entities(std::istream& in, const Taxonomy& taxonomy,
                             std::span<const std::string> languages) {
  const std::vector<Json> records = read_json_lines(in, "entities");
  if (records.empty()) throw Error(ErrorCode::kEmptyRegistry, "empty registry");

  std::vector<Entity> entities;
  entities.reserve(records.size());
  std::set<std::string> seen;
  for (const auto& r : records) {
    Entity e;
    e.id = required_string(r, "id", "entity");
    if (!seen.insert(e.id).second) {
      throw Error(ErrorCode::kDuplicateId, "duplicate entity id '" + e.id + "'");
    }
    e.names = string_map(r.value("names", Json()), "names");
    e.entity_class = parse_entity_class(r.value("entity_class", std::string("custom")));
    e.metadata = string_map(r.value("metadata", Json()), "metadata");
    for (const auto& lang : languages) {
      const std::string* name = e.name_in(lang);
      if (name == nullptr || trim(*name).empty()) {
        throw Error(ErrorCode::kMissingSurfaceForm,
                    "entity '" + e.id + "' has no surface form for language '" + lang + "'");
      }
    }
    for (const auto& [key, value] : e.metadata) {
      auto it = taxonomy.keys.find(key);
      if (it == taxonomy.keys.end()) {
        throw Error(ErrorCode::kUnknownMetadataKey,
                    "entity '" + e.id + "' uses undeclared metadata key '" + key + "'");
      }
      if (!it->second.empty() && !it->second.contains(value)) {
        throw Error(ErrorCode::kUnknownMetadataValue, "entity '" + e.id + "': value '" +
                                                          value + "' not declared for key '" +
                                                          key + "'");
      }
    }
    entities.push_back(std::move(e));
  }
  return EntityRegistry(std::move(entities), digest_records(records));
}

std::optional<std::size_t> LabelSchema::index_of(const std::string& label_id) const {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].id == label_id) return i;
  }
  return std::nullopt;
}

std::vector<double> LabelSchema::weights() const {
  std::vector<double> w;
  w.reserve(labels.size());
  for (const auto& l : labels) w.push_back(l.weight);
  return w;
}

const std::string& LabelSchema::display(std::size_t label, const std::string& language) const {
  const Label& l = labels.at(label);
  auto it = l.display.find(language);
  if (it == l.display.end()) {
    throw Error(ErrorCode::kUnknownLanguage, "task '" + task_id + "' label '" + l.id +
                                                 "' has no display text for '" + language + "'");
  }
  return it->second;
}

const std::string& LabelSchema::role(const std::string& language) const {
  auto it = role_instruction.find(language);
  if (it == role_instruction.end()) {
    throw Error(ErrorCode::kUnknownLanguage,
                "task '" + task_id + "' has no role instruction for '" + language + "'");
  }
  return it->second;
}

Json LabelSchema::to_json() const {
  Json j;
  j["task_id"] = task_id;
  j["role_instruction"] = role_instruction;
  Json ls = Json::array();
  for (const auto& l : labels) {
    ls.push_back({{"label_id", l.id}, {"display", l.display}, {"weight", l.weight}});
  }
  j["labels"] = ls;
  return j;
}

std::string first_answer_token(std::string_view answer) {
  const std::string t = trim(answer);
  const auto end = t.find_first_of(" \t");
  return to_lower_ascii(end == std::string::npos ? t : t.substr(0, end));
}

LabelSchema load_label_schema(const Json& record) {
  LabelSchema s;
  s.task_id = required_string(record, "task_id", "schema");
  s.role_instruction = string_map(record.value("role_instruction", Json()), "role_instruction");
  if (!record.contains("labels") || !record.at("labels").is_array()) {
    throw Error(ErrorCode::kInvalidSchema, "task '" + s.task_id + "' has no label list");
  }
  std::set<std::string> ids;
  int alias = 0;
  for (const auto& lj : record.at("labels")) {
    Label l;
    l.id = required_string(lj, "label_id", "label");
    if (!ids.insert(l.id).second) {
      throw Error(ErrorCode::kInvalidSchema,
                  "task '" + s.task_id + "': duplicate label_id '" + l.id + "'");
    }
    l.display = string_map(lj.value("display", Json()), "display");
    if (l.display.empty()) {
      throw Error(ErrorCode::kInvalidSchema,
                  "task '" + s.task_id + "': label '" + l.id + "' has no display text");
    }
    const Json& w = lj.contains("weight") ? lj.at("weight") : Json();
    if (!w.is_number() || !std::isfinite(w.get<double>())) {
      throw Error(ErrorCode::kInvalidSchema,
                  "task '" + s.task_id + "': label '" + l.id + "' weight is not finite");
    }
    l.weight = w.get<double>();
    l.numeric_alias = ++alias;
    s.labels.push_back(std::move(l));
  }
  if (s.labels.size() < 2) {
    throw Error(ErrorCode::kInvalidSchema,
                "task '" + s.task_id + "' needs at least 2 labels, got " +
                    std::to_string(s.labels.size()));
  }
  // Scoring reads a single decoded token, so every label must be identifiable
  // from its first token in every language it is displayed in.
  std::set<std::string> languages;
  for (const auto& l : s.labels) {
    for (const auto& [lang, _] : l.display) languages.insert(lang);
  }
  for (const auto& lang : languages) {
    std::map<std::string, std::string> first;
    for (const auto& l : s.labels) {
      auto it = l.display.find(lang);
      if (it == l.display.end()) {
        throw Error(ErrorCode::kInvalidSchema, "task '" + s.task_id + "': label '" + l.id +
                                                   "' lacks display text for '" + lang + "'");
      }
      const std::string tok = first_answer_token(it->second);
      auto [pos, inserted] = first.emplace(tok, l.id);
      if (!inserted) {
        throw Error(ErrorCode::kInvalidSchema, "task '" + s.task_id + "' (" + lang +
                                                   "): labels '" + pos->second + "' and '" +
                                                   l.id + "' share first token '" + tok + "'");
      }
    }
  }
  return s;
}

void SchemaSet::add(LabelSchema schema) {
  const std::string id = schema.task_id;
  if (!schemas_.emplace(id, std::move(schema)).second) {
    throw Error(ErrorCode::kDuplicateId, "duplicate task_id '" + id + "'");
  }
}

const LabelSchema* SchemaSet::find(const std::string& task_id) const {
  auto it = schemas_.find(task_id);
  return it == schemas_.end() ? nullptr : &it->second;
}

const LabelSchema& SchemaSet::at(const std::string& task_id) const {
  if (const LabelSchema* s = find(task_id)) return *s;
  throw Error(ErrorCode::kUnknownTask, "unknown task_id '" + task_id + "'");
}

std::string SchemaSet::digest() const {
  std::string canon;
  for (const auto& [id, s] : schemas_) canon += s.to_json().dump() + "\n";
  return sha256_hex(canon);
}

SchemaSet load_label_schemas(std::istream& in) {
  SchemaSet set;
  for (const auto& r : read_json_lines(in, "schemas")) set.add(load_label_schema(r));
  return set;
}

std::string_view to_string(TemplateOrigin o) {
  return o == TemplateOrigin::kSynthetic ? "synthetic" : "real_benchmark";
}

TemplateOrigin parse_template_origin(std::string_view s) {
  if (s == "synthetic") return TemplateOrigin::kSynthetic;
  if (s == "real_benchmark") return TemplateOrigin::kRealBenchmark;
  throw Error(ErrorCode::kInvalidInput, "unknown template origin '" + std::string(s) + "'");
}

Json Template::to_json() const {
  return Json{{"id", id},
              {"task_id", task_id},
              {"language", language},
              {"text", text},
              {"intended_label", intended_label},
              {"keywords", keywords},
              {"origin", std::string(to_string(origin))}};
}

Template parse_template(const Json& r) {
  Template t;
  t.id = required_string(r, "id", "template");
  t.task_id = required_string(r, "task_id", "template");
  t.language = required_string(r, "language", "template");
  t.text = required_string(r, "text", "template");
  t.intended_label = required_string(r, "intended_label", "template");
  if (r.contains("keywords")) t.keywords = r.at("keywords").get<std::vector<std::string>>();
  t.origin = parse_template_origin(r.value("origin", std::string("synthetic")));
  return t;
}

TemplateCorpus::TemplateCorpus(std::vector<Template> templates, std::string digest)
    : templates_(std::move(templates)), digest_(std::move(digest)) {
  for (std::size_t i = 0; i < templates_.size(); ++i) index_.emplace(templates_[i].id, i);
}

TemplateCorpus TemplateCorpus::from_templates(std::vector<Template> templates) {
  std::set<std::string> seen;
  std::vector<Json> records;
  records.reserve(templates.size());
  for (const auto& t : templates) {
    if (!seen.insert(t.id).second) {
      throw Error(ErrorCode::kDuplicateId, "duplicate template id '" + t.id + "'");
    }
    records.push_back(t.to_json());
  }
  return TemplateCorpus(std::move(templates), digest_records(records));
}

const Template* TemplateCorpus::find(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &templates_[it->second];
}

const Template& TemplateCorpus::at(const std::string& id) const {
  if (const Template* t = find(id)) return *t;
  throw Error(ErrorCode::kNotFound, "unknown template '" + id + "'");
}

std::vector<const Template*> TemplateCorpus::select(const std::string& task_id,
                                                    const std::string& language) const {
  std::vector<const Template*> out;
  for (const auto& t : templates_) {
    if (t.task_id == task_id && t.language == language) out.push_back(&t);
  }
  std::sort(out.begin(), out.end(),
            [](const Template* a, const Template* b) { return a->id < b->id; });
  return out;
}

std::size_t count_placeholders(std::string_view text) {
  return placeholder_positions(text).size();
}

std::string substitute_placeholder(std::string_view text, std::string_view surface) {
  std::string out;
  std::size_t prev = 0;
  for (std::size_t pos : placeholder_positions(text)) {
    out.append(text.substr(prev, pos - prev));
    out.append(surface);
    prev = pos + kPlaceholder.size();
  }
  out.append(text.substr(prev));
  return out;
}

LoadedTemplates load_templates(std::istream& in, const SchemaSet& schemas,
                               std::span<const std::string> languages) {
  const std::vector<Json> records = read_json_lines(in, "templates");
  std::vector<Template> templates;
  templates.reserve(records.size());
  std::set<std::string> seen;
  BalanceReport balance;
  // (task, language) -> per-label counts in schema order
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> counts;

  for (const auto& r : records) {
    Template t = parse_template(r);
    if (!seen.insert(t.id).second) {
      throw Error(ErrorCode::kDuplicateId, "duplicate template id '" + t.id + "'");
    }
    const LabelSchema* schema = schemas.find(t.task_id);
    if (schema == nullptr) {
      throw Error(ErrorCode::kUnknownTask,
                  "template '" + t.id + "' references unknown task '" + t.task_id + "'");
    }
    const std::size_t n_placeholders = count_placeholders(t.text);
    if (n_placeholders == 0) {
      throw Error(ErrorCode::kMissingPlaceholder,
                  "template '" + t.id + "' has no placeholder 'X'");
    }
    if (n_placeholders > 1) ++balance.multi_placeholder_templates;
    const auto label = schema->index_of(t.intended_label);
    if (!label) {
      throw Error(ErrorCode::kUnknownLabel, "template '" + t.id + "': label '" +
                                                t.intended_label + "' not in task '" +
                                                t.task_id + "'");
    }
    if (!languages.empty() &&
        std::find(languages.begin(), languages.end(), t.language) == languages.end()) {
      throw Error(ErrorCode::kUnknownLanguage,
                  "template '" + t.id + "' uses undeclared language '" + t.language + "'");
    }
    auto& row = counts[{t.task_id, t.language}];
    row.resize(schema->size(), 0);
    ++row[*label];
    templates.push_back(std::move(t));
  }

  for (const auto& [key, row] : counts) {
    const LabelSchema& schema = schemas.at(key.first);
    for (std::size_t i = 0; i < row.size(); ++i) {
      balance.cells.push_back({key.first, key.second, schema.labels[i].id, row[i]});
    }
    const auto [mn, mx] = std::minmax_element(row.begin(), row.end());
    BalanceGroup g{key.first, key.second, 1.0, false};
    g.max_min_ratio = *mn == 0 ? std::numeric_limits<double>::infinity()
                               : static_cast<double>(*mx) / static_cast<double>(*mn);
    if (g.max_min_ratio > kBalanceWarnRatio) {
      g.warning = true;
      balance.warnings.push_back("task '" + key.first + "' (" + key.second +
                                 ") label balance ratio " + format_double(g.max_min_ratio) +
                                 " exceeds " + format_double(kBalanceWarnRatio));
    }
    balance.groups.push_back(g);
  }
  return {TemplateCorpus(std::move(templates), digest_records(records)), std::move(balance)};
}

std::size_t RegistrySummary::total() const {
  std::size_t n = 0;
  for (const auto& [_, c] : counts) n += c;
  return n;
}

RegistrySummary summarize(const EntityRegistry& registry, const std::string& key,
                          const Taxonomy& taxonomy) {
  if (!taxonomy.has_key(key)) {
    throw Error(ErrorCode::kUnknownMetadataKey, "unknown grouping key '" + key + "'");
  }
  RegistrySummary s{key, {}};
  for (const auto& e : registry.entities()) ++s.counts[e.tag(key)];
  return s;
}

}  // namespace entbias
