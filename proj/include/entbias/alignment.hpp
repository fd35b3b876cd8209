#pragma once

// Synthetic-versus-real validation. Real benchmark items are masked into
// templates, both corpora are scored identically, and the task-level entity
// biases of the two are correlated per (model, language).

#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "entbias/registry.hpp"
#include "entbias/scoring.hpp"

namespace entbias {

inline constexpr std::size_t kMinAlignmentSupport = 20;
inline constexpr std::size_t kMinAlignmentEntities = 3;

/// Byte offsets [begin, end) into the item text.
struct EntitySpan {
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct BenchmarkItem {
  std::string benchmark_id;
  std::string id;
  std::string task_id;
  std::string language;
  std::string text;
  std::string gold_label;
  std::vector<EntitySpan> spans;
  bool rewritten = false;  // confounders already removed upstream

  /// Template record fields plus "benchmark_id", "spans" ([[b, e], ...]) and
  /// "rewritten"; the gold label is the record's "intended_label".
  static BenchmarkItem from_json(const Json& j);
};

/// Replaces every span with the placeholder. Keeps id, task, language and
/// gold label; origin becomes real_benchmark.
Template mask_item(const BenchmarkItem& item);

/// Parses and masks a benchmark file, checking spans and gold labels.
std::vector<Template> load_benchmark_items(std::istream& in, const SchemaSet& schemas);

/// Splits observations by the origin of their template: (real, synthetic).
std::pair<std::vector<Observation>, std::vector<Observation>> split_by_origin(
    std::span<const Observation> observations, const TemplateCorpus& corpus);

struct AlignmentPair {
  std::string entity_id;
  double real = 0.0;
  double synthetic = 0.0;
  std::size_t support_real = 0;
  std::size_t support_synthetic = 0;
};

struct AlignmentReport {
  std::string benchmark_id;
  std::string task_id;
  std::string model_id;
  std::string language;
  double r = 0.0;
  std::size_t n = 0;
  std::vector<AlignmentPair> pairs;    // sorted by entity
  std::vector<std::string> excluded;   // support below the floor in either corpus
};

struct AlignmentOptions {
  std::string benchmark_id;
  std::string task_id;
  std::size_t min_support = kMinAlignmentSupport;
};

/// One report per (model, language) present in both computations. Task
/// biases are averaged over prompt variants; support is summed.
std::vector<AlignmentReport> align(const BiasComputation& real, const BiasComputation& synthetic,
                                   const AlignmentOptions& options);

/// Long form: one line per report.
void write_alignment_reports(std::ostream& out, std::span<const AlignmentReport> reports);

/// Grid: one row per model, one column per language:benchmark, cells hold r.
void write_alignment_grid(std::ostream& out, std::span<const AlignmentReport> reports);

}  // namespace entbias
