#pragma once

// Inference prompt assembly and the endpoint abstraction shared by the HTTP
// client and the deterministic mock backend.

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "entbias/registry.hpp"

namespace entbias {

enum class Supervision { kZeroShot, kFewShot };
enum class LabelFormat { kTextual, kNumeric };

struct PromptVariant {
  Supervision supervision = Supervision::kZeroShot;
  LabelFormat label_format = LabelFormat::kTextual;

  /// Canonical names: ZS-Text, FS-Text, ZS-Num, FS-Num.
  std::string name() const;
  static PromptVariant parse(std::string_view name);
  static std::vector<PromptVariant> all();

  auto operator<=>(const PromptVariant&) const = default;
};

struct RunConfig {
  std::string task_id;
  std::string model_id;
  std::string language;
  PromptVariant variant;

  /// "task|model|language|variant", used as a sort and dedup key.
  std::string key() const;
  auto operator<=>(const RunConfig&) const = default;
};

struct TokenCandidate {
  std::string token;
  double logprob = 0.0;
};

struct TokenLogprobs {
  std::vector<TokenCandidate> candidates;  // sorted by logprob, descending
  bool ok = false;
  std::string failure_reason;
  int retries = 0;

  static TokenLogprobs failed(std::string reason, int retries = 0);
};

/// A few-shot exemplar. Its text keeps the placeholder; entities are never
/// substituted into exemplars.
struct FewShotExemplar {
  std::string task_id;
  std::string language;
  std::string text;
  std::string label_id;
};

class FewShotBank {
 public:
  void add(FewShotExemplar exemplar);
  bool empty() const { return exemplars_.empty(); }

  /// Two exemplars: one for the first and one for the last label of the
  /// schema where available, otherwise distinct labels in schema order. The
  /// choice among candidates for a label is a pure function of `seed`.
  std::vector<const FewShotExemplar*> select(const LabelSchema& schema,
                                             const std::string& language,
                                             std::uint64_t seed) const;

  static FewShotBank load(std::istream& in);

 private:
  std::vector<FewShotExemplar> exemplars_;
};

struct AssembledPrompt {
  std::string text;
  std::vector<std::string> expected_answers;  // label order
};

/// Answer strings the model is expected to emit, in label order: display
/// text for textual variants, "1".."K" for numeric ones.
std::vector<std::string> expected_answers(const LabelSchema& schema, const std::string& language,
                                          LabelFormat format);

AssembledPrompt assemble_prompt(const Template& tmpl, const Entity& entity,
                                const LabelSchema& schema, const RunConfig& config,
                                const FewShotBank* few_shot, std::uint64_t selection_seed);

struct DecodeParams {
  double temperature = 0.0;
  int seed = 42;
  int max_tokens = 1;
  int top_logprobs = 20;
};

/// Identifies an observation key. Sent alongside the prompt so the mock
/// server can reproduce the in-process mock exactly.
struct QueryMetadata {
  std::string entity_id;
  std::string template_id;
  std::string task_id;
  std::string language;
  PromptVariant variant;
};

struct CompletionRequest {
  std::string model;
  std::string prompt;
  DecodeParams decode;
  QueryMetadata metadata;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual TokenLogprobs query(const CompletionRequest& request) = 0;
};

}  // namespace entbias
