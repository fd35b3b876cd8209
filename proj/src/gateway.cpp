#include "entbias/gateway.hpp"

#include <algorithm>

#include "entbias/error.hpp"

namespace entbias {

std::string PromptVariant::name() const {
  std::string n = supervision == Supervision::kZeroShot ? "ZS" : "FS";
  n += label_format == LabelFormat::kTextual ? "-Text" : "-Num";
  return n;
}

PromptVariant PromptVariant::parse(std::string_view name) {
  for (const auto& v : all()) {
    if (v.name() == name) return v;
  }
  throw Error(ErrorCode::kInvalidInput, "unknown prompt variant '" + std::string(name) + "'");
}

std::vector<PromptVariant> PromptVariant::all() {
  return {{Supervision::kZeroShot, LabelFormat::kTextual},
          {Supervision::kFewShot, LabelFormat::kTextual},
          {Supervision::kZeroShot, LabelFormat::kNumeric},
          {Supervision::kFewShot, LabelFormat::kNumeric}};
}

std::string RunConfig::key() const {
  return task_id + "|" + model_id + "|" + language + "|" + variant.name();
}

TokenLogprobs TokenLogprobs::failed(std::string reason, int retries) {
  TokenLogprobs t;
  t.ok = false;
  t.failure_reason = std::move(reason);
  t.retries = retries;
  return t;
}

void FewShotBank::add(FewShotExemplar exemplar) {
  if (count_placeholders(exemplar.text) == 0) {
    throw Error(ErrorCode::kMissingPlaceholder,
                "few-shot exemplar for task '" + exemplar.task_id + "' lacks placeholder");
  }
  exemplars_.push_back(std::move(exemplar));
}

std::vector<const FewShotExemplar*> FewShotBank::select(const LabelSchema& schema,
                                                        const std::string& language,
                                                        std::uint64_t seed) const {
  std::vector<std::vector<const FewShotExemplar*>> by_label(schema.size());
  for (const auto& ex : exemplars_) {
    if (ex.task_id != schema.task_id || ex.language != language) continue;
    if (auto idx = schema.index_of(ex.label_id)) by_label[*idx].push_back(&ex);
  }
  std::vector<std::size_t> order;
  order.push_back(0);
  order.push_back(schema.size() - 1);
  for (std::size_t i = 1; i + 1 < schema.size(); ++i) order.push_back(i);

  std::vector<const FewShotExemplar*> picked;
  for (std::size_t label : order) {
    if (picked.size() == 2) break;
    const auto& pool = by_label[label];
    if (pool.empty()) continue;
    const std::uint64_t h = splitmix64(seed ^ (0x9e37ULL * (label + 1)));
    picked.push_back(pool[h % pool.size()]);
  }
  if (picked.size() < 2) {
    throw Error(ErrorCode::kPrecondition, "few-shot bank lacks exemplars for two labels of task '" +
                                              schema.task_id + "' (" + language + ")");
  }
  return picked;
}

FewShotBank FewShotBank::load(std::istream& in) {
  FewShotBank bank;
  for (const auto& r : read_json_lines(in, "few-shot")) {
    bank.add({r.at("task_id").get<std::string>(), r.at("language").get<std::string>(),
              r.at("text").get<std::string>(), r.at("label_id").get<std::string>()});
  }
  return bank;
}

std::vector<std::string> expected_answers(const LabelSchema& schema, const std::string& language,
                                          LabelFormat format) {
  std::vector<std::string> answers;
  answers.reserve(schema.size());
  for (std::size_t i = 0; i < schema.size(); ++i) {
    answers.push_back(format == LabelFormat::kTextual
                          ? schema.display(i, language)
                          : std::to_string(schema.labels[i].numeric_alias));
  }
  return answers;
}

AssembledPrompt assemble_prompt(const Template& tmpl, const Entity& entity,
                                const LabelSchema& schema, const RunConfig& config,
                                const FewShotBank* few_shot, std::uint64_t selection_seed) {
  const std::string* surface = entity.name_in(config.language);
  if (surface == nullptr) {
    throw Error(ErrorCode::kMissingSurfaceForm, "entity '" + entity.id +
                                                    "' has no surface form for '" +
                                                    config.language + "'");
  }
  const bool numeric = config.variant.label_format == LabelFormat::kNumeric;

  AssembledPrompt out;
  out.expected_answers = expected_answers(schema, config.language, config.variant.label_format);

  std::string& p = out.text;
  p += schema.role(config.language);
  p += "\n";
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (numeric) p += std::to_string(schema.labels[i].numeric_alias) + ": ";
    p += schema.display(i, config.language);
    p += "\n";
  }
  p += "\n";

  if (config.variant.supervision == Supervision::kFewShot) {
    if (few_shot == nullptr || few_shot->empty()) {
      throw Error(ErrorCode::kPrecondition,
                  "few-shot variant requested without a few-shot bank");
    }
    for (const FewShotExemplar* ex : few_shot->select(schema, config.language, selection_seed)) {
      const std::size_t label = *schema.index_of(ex->label_id);
      p += "Sentence: " + ex->text + "\n";
      p += "Target: " + std::string(kPlaceholder) + "\n";
      p += "Label: " + out.expected_answers[label] + "\n\n";
    }
  }

  p += "Sentence: " + substitute_placeholder(tmpl.text, *surface) + "\n";
  p += "Target: " + *surface + "\n";
  p += "Label:";
  return out;
}

}  // namespace entbias
