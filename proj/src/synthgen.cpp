#include "entbias/synthgen.hpp"

#include <algorithm>
#include <cstdio>
#include <random>
#include <set>

#include "entbias/error.hpp"
#include "entbias/log.hpp"

namespace entbias {
namespace {

constexpr std::uint64_t kReseedStride = 0x2545F4914F6CDD1DULL;

// Lowercased words; ASCII punctuation and whitespace separate words, bytes
// outside ASCII are kept inside words.
std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    const bool word = c >= 0x80 || (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') ||
                      (c >= 'A' && c <= 'Z');
    if (word) {
      cur.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : ch);
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

bool contains_phrase(const std::vector<std::string>& words, const std::vector<std::string>& phrase) {
  if (phrase.empty() || phrase.size() > words.size()) return false;
  for (std::size_t i = 0; i + phrase.size() <= words.size(); ++i) {
    if (std::equal(phrase.begin(), phrase.end(), words.begin() + static_cast<long>(i))) {
      return true;
    }
  }
  return false;
}

std::size_t common_prefix(std::string_view a, std::string_view b) {
  std::size_t n = 0;
  while (n < a.size() && n < b.size() && a[n] == b[n]) ++n;
  return n;
}

bool word_matches(const std::string& word, const std::string& part) {
  if (word == part) return true;
  return word.size() >= kInflectionPrefix && part.size() >= kInflectionPrefix &&
         common_prefix(word, part) >= kInflectionPrefix;
}

bool keyword_incorporated(const std::vector<std::string>& words, const std::string& keyword) {
  const std::vector<std::string> parts = words_of(keyword);
  if (parts.empty()) return false;
  return std::all_of(parts.begin(), parts.end(), [&](const std::string& part) {
    return std::any_of(words.begin(), words.end(),
                       [&](const std::string& w) { return word_matches(w, part); });
  });
}

std::string english_or_first(const std::map<std::string, std::string>& m,
                             const std::string& language) {
  auto it = m.find(language);
  if (it != m.end()) return it->second;
  return m.empty() ? std::string() : m.begin()->second;
}

std::string label_display(const LabelSchema& schema, const std::string& label_id) {
  const auto idx = schema.index_of(label_id);
  if (!idx) throw Error(ErrorCode::kUnknownLabel, "label '" + label_id + "' not in task '" +
                                                      schema.task_id + "'");
  return english_or_first(schema.labels[*idx].display, "en");
}

std::string or_list(const std::vector<std::string>& items) {
  if (items.size() <= 1) return items.empty() ? std::string() : items.front();
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += i + 1 == items.size() ? " or " : ", ";
    out += items[i];
  }
  return out;
}

}  // namespace

std::vector<std::string> KeywordVocabulary::distinct() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& [_, words] : categories) {
    for (const auto& w : words) {
      if (seen.insert(w).second) out.push_back(w);
    }
  }
  return out;
}

std::string KeywordVocabulary::digest() const {
  return sha256_hex(Json{{"task_id", task_id}, {"categories", categories}}.dump());
}

KeywordVocabulary KeywordVocabulary::from_json(const Json& j) {
  KeywordVocabulary v;
  v.task_id = j.at("task_id").get<std::string>();
  v.categories = j.at("categories").get<std::map<std::string, std::vector<std::string>>>();
  for (const auto& [cat, words] : v.categories) {
    for (const auto& w : words) {
      if (trim(w).empty()) {
        throw Error(ErrorCode::kInvalidInput,
                    "vocabulary '" + v.task_id + "' category '" + cat + "' has an empty keyword");
      }
    }
  }
  if (v.distinct().size() < kKeywordsPerJob) {
    throw Error(ErrorCode::kVocabularyTooSmall,
                "vocabulary '" + v.task_id + "' has fewer than 5 distinct keywords");
  }
  return v;
}

GenerationBrief GenerationBrief::from_json(const Json& j) {
  GenerationBrief b;
  b.persona = j.value("persona", std::string());
  b.subject = j.value("subject", std::string("entity"));
  b.purpose = j.value("purpose", std::string("label"));
  return b;
}

std::vector<std::string> sample_keywords(const KeywordVocabulary& vocab, std::size_t count,
                                         std::uint64_t seed) {
  std::vector<std::string> pool = vocab.distinct();
  if (pool.size() < count) {
    throw Error(ErrorCode::kVocabularyTooSmall,
                "vocabulary has " + std::to_string(pool.size()) + " distinct keywords, " +
                    std::to_string(count) + " requested");
  }
  std::mt19937_64 rng(stable_hash(vocab.digest(), seed));
  // Partial Fisher-Yates with rejection sampling so the draw does not depend
  // on the standard library's distribution implementation.
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t span = pool.size() - i;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t r;
    do {
      r = rng();
    } while (r >= limit);
    std::swap(pool[i], pool[i + static_cast<std::size_t>(r % span)]);
  }
  pool.resize(count);
  return pool;
}

GenerationJob make_job(const KeywordVocabulary& vocab, const LabelSchema& schema,
                       const std::string& target_label, std::uint64_t seed) {
  if (!schema.index_of(target_label)) {
    throw Error(ErrorCode::kUnknownLabel,
                "label '" + target_label + "' not in task '" + schema.task_id + "'");
  }
  return {schema.task_id, target_label, sample_keywords(vocab, kKeywordsPerJob, seed), seed};
}

ChatPrompt build_generation_prompt(const GenerationJob& job, const LabelSchema& schema,
                                   const GenerationBrief& brief,
                                   const std::vector<GenerationExample>& few_shot_bank,
                                   std::size_t exemplar_count) {
  if (few_shot_bank.empty()) {
    throw Error(ErrorCode::kPrecondition, "few-shot bank is empty");
  }
  // One exemplar per label first, rotating the starting label with the seed,
  // then fill up to the requested count.
  std::vector<std::vector<const GenerationExample*>> by_label(schema.size());
  for (const auto& ex : few_shot_bank) {
    if (auto idx = schema.index_of(ex.label_id)) by_label[*idx].push_back(&ex);
  }
  std::size_t labels_present = 0;
  for (const auto& b : by_label) labels_present += b.empty() ? 0 : 1;
  if (labels_present < std::min<std::size_t>(2, exemplar_count)) {
    throw Error(ErrorCode::kPrecondition,
                "few-shot bank must cover at least two labels of task '" + schema.task_id + "'");
  }
  std::vector<const GenerationExample*> chosen;
  const std::size_t start = splitmix64(job.seed) % schema.size();
  for (std::size_t round = 0; chosen.size() < exemplar_count; ++round) {
    bool any = false;
    for (std::size_t k = 0; k < schema.size() && chosen.size() < exemplar_count; ++k) {
      const auto& pool = by_label[(start + k) % schema.size()];
      if (round < pool.size()) {
        chosen.push_back(pool[round]);
        any = true;
      }
    }
    if (!any) break;
  }

  std::vector<std::string> displays;
  for (const auto& l : schema.labels) displays.push_back(english_or_first(l.display, "en"));

  ChatPrompt p;
  std::string& s = p.system;
  s += brief.persona + "\n\n";
  s += "TASK: Given a requested " + brief.purpose +
       " label and keywords, generate ONE natural, complex, coherent sentence describing an "
       "action by " + brief.subject + " X.\n\n";
  s += "REQUIREMENTS:\n";
  s += "- The sentence MUST include the placeholder 'X'.\n";
  s += "- Do NOT mention real " + brief.subject + " names, regions, or identifiable events.\n";
  s += "- The sentence must implicitly reflect the " + brief.purpose + " label (" +
       or_list(displays) + ") without naming or signaling the label explicitly.\n";
  s += "- Vary X's narrative role across examples: initiating, responding, coordinating, failing "
       "to follow through, etc.\n";
  s += "- Incorporate the keywords subtly and naturally. Some keywords may be skipped if they "
       "cannot be incorporated. This should remain exceptional.\n";
  s += "- Output ONLY the sentence.\n\n";
  s += "Few-Shot Examples:\n";
  for (const GenerationExample* ex : chosen) {
    s += "Keywords: X";
    for (const auto& k : ex->keywords) s += ", " + k;
    s += "\nLabel: " + label_display(schema, ex->label_id) + "\n";
    s += "Output: " + ex->output + "\n\n";
  }

  std::string& u = p.user;
  u += "Generate ONE sentence including 'X' that implicitly reflects the requested " +
       brief.purpose + " context.\n";
  u += "Keywords: [";
  for (const auto& k : job.keywords) u += k + ", ";
  u += "X]\n";
  u += "Label: " + label_display(schema, job.target_label) + "\n";
  u += "Generated sentence:";
  return p;
}

ValidationReport validate_generated(std::string_view text, const GenerationJob& job,
                                    const LabelSchema& schema,
                                    const std::vector<std::string>& deny_list,
                                    const std::string& language) {
  ValidationReport r;
  const std::vector<std::string> words = words_of(text);
  r.has_placeholder = count_placeholders(text) > 0;
  for (const auto& k : job.keywords) {
    if (k == kPlaceholder) continue;
    if (keyword_incorporated(words, k)) ++r.keywords_incorporated;
  }
  for (const auto& l : schema.labels) {
    if (contains_phrase(words, words_of(english_or_first(l.display, language)))) {
      r.leaks_label_text = true;
    }
  }
  for (const auto& name : deny_list) {
    if (contains_phrase(words, words_of(name))) {
      r.leaked_entity = name;
      break;
    }
  }
  for (const auto& w : split(trim(text), ' ')) r.length_tokens += w.empty() ? 0 : 1;

  if (!r.has_placeholder) {
    r.reject_reason = "missing placeholder";
  } else if (r.leaks_label_text) {
    r.reject_reason = "leaks label text";
  } else if (r.leaked_entity) {
    r.reject_reason = "mentions real entity";
  } else if (r.keywords_incorporated < kKeywordAcceptThreshold) {
    r.reject_reason = "too few keywords";
  } else if (r.length_tokens < kMinSentenceTokens) {
    r.reject_reason = "too short";
  } else {
    r.accepted = true;
  }
  return r;
}

std::vector<std::size_t> plan_balanced_batch(const LabelSchema& schema, std::size_t n) {
  const std::size_t k = schema.size();
  if (n < k) {
    throw Error(ErrorCode::kPrecondition, "batch of " + std::to_string(n) +
                                              " cannot cover " + std::to_string(k) + " labels");
  }
  std::vector<std::size_t> quotas(k, n / k);
  for (std::size_t i = 0; i < n % k; ++i) ++quotas[i];
  return quotas;
}

std::vector<std::string> entity_deny_list(const EntityRegistry& registry) {
  std::set<std::string> names;
  for (const auto& e : registry.entities()) {
    for (const auto& [_, name] : e.names) {
      if (!trim(name).empty()) names.insert(to_lower_ascii(trim(name)));
    }
  }
  return {names.begin(), names.end()};
}

std::string mock_generate_sentence(const ChatPrompt& prompt) {
  std::vector<std::string> kws;
  const auto open = prompt.user.rfind("Keywords: [");
  if (open != std::string::npos) {
    const auto close = prompt.user.find(']', open);
    for (const auto& k : split(prompt.user.substr(open + 11, close - open - 11), ',')) {
      const std::string t = trim(k);
      if (!t.empty() && t != kPlaceholder) kws.push_back(t);
    }
  }
  while (kws.size() < 5) kws.emplace_back("matter");
  return "According to recent " + kws[0] + " notes, X pursued the " + kws[1] + " while " +
         kws[2] + " concerns and " + kws[3] + " questions kept the " + kws[4] +
         " under review for weeks.";
}

ChatResult MockChatClient::complete(const ChatPrompt& prompt, std::uint64_t) {
  return {true, mock_generate_sentence(prompt), {}};
}

GeneratedCorpus generate_corpus(ChatClient& client, const KeywordVocabulary& vocab,
                                const LabelSchema& schema, const GenerationBrief& brief,
                                const std::vector<GenerationExample>& few_shot_bank,
                                const std::vector<std::string>& deny_list,
                                const GenerationOptions& options) {
  const std::vector<std::size_t> quotas = plan_balanced_batch(schema, options.total);
  const std::string prefix = options.id_prefix.empty() ? schema.task_id + "-syn" : options.id_prefix;
  GeneratedCorpus out;
  std::set<std::string> seen_text;

  for (std::size_t label = 0; label < schema.size(); ++label) {
    const std::string& label_id = schema.labels[label].id;
    for (std::size_t slot = 0; slot < quotas[label]; ++slot) {
      const std::uint64_t base =
          stable_hash(schema.task_id + "|" + label_id + "|" + std::to_string(slot), options.seed);
      bool filled = false;
      for (int reseed = 0; reseed <= options.max_reseeds_per_slot && !filled; ++reseed) {
        if (reseed > 0) ++out.stats.reseeds;
        const GenerationJob job =
            make_job(vocab, schema, label_id, base + static_cast<std::uint64_t>(reseed) * kReseedStride);
        const ChatPrompt prompt =
            build_generation_prompt(job, schema, brief, few_shot_bank, options.exemplar_count);
        ChatResult result;
        for (int attempt = 0; attempt <= options.endpoint_retries; ++attempt) {
          ++out.stats.requests;
          result = client.complete(prompt, job.seed);
          if (result.ok) break;
          ++out.stats.endpoint_failures;
        }
        if (!result.ok) {
          log::warn("generator failed for " + label_id + " slot " + std::to_string(slot) + ": " +
                    result.error + "; re-seeding");
          continue;
        }
        const std::string text = trim(result.text);
        ValidationReport report = validate_generated(text, job, schema, deny_list, options.language);
        if (report.accepted && !seen_text.insert(text).second) {
          report.accepted = false;
          report.reject_reason = "duplicate";
        }
        if (!report.accepted) {
          ++out.stats.rejected;
          ++out.stats.reject_reasons[report.reject_reason];
          continue;
        }
        char id[32];
        std::snprintf(id, sizeof(id), "%05zu", slot);
        Template t;
        t.id = prefix + "-" + label_id + "-" + id;
        t.task_id = schema.task_id;
        t.language = options.language;
        t.text = text;
        t.intended_label = label_id;
        t.keywords = job.keywords;
        t.origin = TemplateOrigin::kSynthetic;
        out.templates.push_back(std::move(t));
        filled = true;
      }
      if (!filled) {
        throw Error(ErrorCode::kDegenerate, "could not fill generation slot " +
                                                std::to_string(slot) + " of label '" + label_id +
                                                "' after re-seeding");
      }
    }
  }
  return out;
}

}  // namespace entbias
