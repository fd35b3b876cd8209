#pragma once

// Keyword-driven synthetic template generation: keyword sampling, generation
// prompts, offline validation of generated sentences and balanced quotas.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "entbias/registry.hpp"

namespace entbias {

inline constexpr std::size_t kKeywordsPerJob = 5;
inline constexpr std::size_t kKeywordAcceptThreshold = 3;
inline constexpr std::size_t kMinSentenceTokens = 8;
inline constexpr std::size_t kInflectionPrefix = 4;

struct KeywordVocabulary {
  std::string task_id;
  // nouns, verbs, adjectives, adverbs, connectives, domain
  std::map<std::string, std::vector<std::string>> categories;

  /// Distinct keywords in category order, first occurrence wins.
  std::vector<std::string> distinct() const;
  std::string digest() const;
  static KeywordVocabulary from_json(const Json& j);
};

/// Instructions framing a generation call for one task.
struct GenerationBrief {
  std::string persona;   // system-message opening, e.g. who generates what
  std::string subject;   // "country", "company", ...
  std::string purpose;   // what the label assesses, e.g. "credibility"
  static GenerationBrief from_json(const Json& j);
};

struct GenerationExample {
  std::vector<std::string> keywords;
  std::string label_id;
  std::string output;
};

struct GenerationJob {
  std::string task_id;
  std::string target_label;
  std::vector<std::string> keywords;
  std::uint64_t seed = 0;
};

struct ChatPrompt {
  std::string system;
  std::string user;
  std::string text() const { return system + "\n\n" + user; }
};

struct ValidationReport {
  bool has_placeholder = false;
  std::size_t keywords_incorporated = 0;
  bool leaks_label_text = false;
  std::optional<std::string> leaked_entity;
  std::size_t length_tokens = 0;
  bool accepted = false;
  std::string reject_reason;
};

/// Pure function of (vocabulary digest, seed); returns `count` distinct keywords.
std::vector<std::string> sample_keywords(const KeywordVocabulary& vocab, std::size_t count,
                                         std::uint64_t seed);

GenerationJob make_job(const KeywordVocabulary& vocab, const LabelSchema& schema,
                       const std::string& target_label, std::uint64_t seed);

ChatPrompt build_generation_prompt(const GenerationJob& job, const LabelSchema& schema,
                                   const GenerationBrief& brief,
                                   const std::vector<GenerationExample>& few_shot_bank,
                                   std::size_t exemplar_count = 2);

/// Case-insensitive word match; a keyword sharing a prefix of at least four
/// characters with some word of the sentence counts as incorporated.
/// `deny_list` holds surface forms of real entities that must not appear.
ValidationReport validate_generated(std::string_view text, const GenerationJob& job,
                                    const LabelSchema& schema,
                                    const std::vector<std::string>& deny_list = {},
                                    const std::string& language = "en");

/// Per-label quotas in schema order; they differ by at most one and sum to n.
std::vector<std::size_t> plan_balanced_batch(const LabelSchema& schema, std::size_t n);

/// Lowercased surface forms of every entity, used as the real-entity deny list.
std::vector<std::string> entity_deny_list(const EntityRegistry& registry);

struct ChatResult {
  bool ok = false;
  std::string text;
  std::string error;
};

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual ChatResult complete(const ChatPrompt& prompt, std::uint64_t seed) = 0;
};

/// Deterministic offline generator: weaves the requested keywords into a
/// fixed sentence frame. Serves tests and the mock server.
std::string mock_generate_sentence(const ChatPrompt& prompt);

class MockChatClient final : public ChatClient {
 public:
  ChatResult complete(const ChatPrompt& prompt, std::uint64_t seed) override;
};

struct GenerationOptions {
  std::size_t total = 0;
  std::uint64_t seed = 0;
  std::size_t exemplar_count = 2;
  int endpoint_retries = 3;      // per job before re-seeding
  int max_reseeds_per_slot = 25;
  std::string language = "en";
  std::string id_prefix;         // defaults to "<task>-syn"
};

struct GenerationStats {
  std::size_t requests = 0;
  std::size_t endpoint_failures = 0;
  std::size_t rejected = 0;
  std::size_t reseeds = 0;
  std::map<std::string, std::size_t> reject_reasons;
};

struct GeneratedCorpus {
  std::vector<Template> templates;
  GenerationStats stats;
};

GeneratedCorpus generate_corpus(ChatClient& client, const KeywordVocabulary& vocab,
                                const LabelSchema& schema, const GenerationBrief& brief,
                                const std::vector<GenerationExample>& few_shot_bank,
                                const std::vector<std::string>& deny_list,
                                const GenerationOptions& options);

}  // namespace entbias
