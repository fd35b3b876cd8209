#pragma once

// From endpoint logprobs to bias scores.
//
//   raw score     s(e, t)  = sum_l w_l * P(l | t, e)
//   context bias  d(e, t)  = (s(e, t) - mean_e s(., t)) / sd_e s(., t)
//   task bias     D(e, T)  = mean over templates t of T of d(e, t)
//   global bias   D(e)     = mean over tasks T of D(e, T)
//
// A context is one (template, run configuration) cell. The standard deviation
// is the population one; a context whose scores are all equal (sd < 1e-12)
// contributes d = 0 for every entity.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "entbias/gateway.hpp"
#include "entbias/registry.hpp"

namespace entbias {

inline constexpr double kSigmaFloor = 1e-12;
inline constexpr double kMinContextCoverage = 0.5;
inline constexpr std::string_view kAll = "*";

struct Observation {
  std::string entity_id;
  std::string template_id;
  RunConfig config;
  bool ok = false;
  std::vector<double> posterior;  // label order; empty when failed
  std::string predicted;          // label id; empty when failed
  std::string failure_reason;
  int retries = 0;

  /// Dedup key: entity|template|task|model|language|variant.
  std::string key() const;
  Json to_json() const;
  static Observation from_json(const Json& j);
};

struct PosteriorResult {
  bool ok = false;
  std::vector<double> posterior;
  std::string failure_reason;
};

/// Matches each label's first answer token (case-insensitive, trimmed)
/// against the candidates, exponentiates and renormalizes over the label set.
/// Labels without a candidate get probability 0.
PosteriorResult extract_posterior(const TokenLogprobs& logprobs,
                                  std::span<const std::string> expected_answers);

/// Argmax; ties go to the earlier label.
std::size_t predicted_label(std::span<const double> posterior);

double raw_score(std::span<const double> posterior, std::span<const double> weights);

/// Population z-score over entities of one context. Needs at least 2 entities.
std::map<std::string, double> normalize_context(const std::map<std::string, double>& scores);

struct MeanWithSupport {
  double value = 0.0;
  std::size_t support = 0;
};

MeanWithSupport task_bias(std::span<const double> context_deltas);
double global_bias(std::span<const double> task_biases);

enum class BiasScope { kContext, kTask, kGlobal };
std::string_view to_string(BiasScope s);
BiasScope parse_bias_scope(std::string_view s);

struct BiasRecord {
  std::string entity_id;
  BiasScope scope = BiasScope::kTask;
  bool pooled = false;  // averaged over (model, language, variant)
  std::string task_id;  // kAll for global scope
  std::string model_id;
  std::string language;
  std::string variant;
  std::string template_id;  // context scope only
  double value = 0.0;
  std::size_t support = 0;
};

struct ScoringOptions {
  double min_context_coverage = kMinContextCoverage;
  bool keep_context_records = false;
};

struct BiasComputation {
  std::vector<BiasRecord> context;        // only with keep_context_records
  std::vector<BiasRecord> task;           // per configuration
  std::vector<BiasRecord> global;         // per (model, language, variant)
  std::vector<BiasRecord> task_pooled;    // averaged over configurations
  std::vector<BiasRecord> global_pooled;
  std::size_t contexts = 0;
  std::size_t dropped_contexts = 0;
  std::vector<std::string> warnings;
};

/// Full bias stack over an observation set. Failed observations are ignored;
/// contexts where fewer than `min_context_coverage` of the configuration's
/// entities succeeded are dropped with a warning. Output is sorted and does
/// not depend on the order of `observations`.
BiasComputation compute_bias(std::span<const Observation> observations,
                             const TemplateCorpus& corpus, const SchemaSet& schemas,
                             const ScoringOptions& options = {});

enum class GroupStatistic { kMean, kMagnitude };

struct GroupValue {
  std::string group;
  double value = 0.0;
  std::size_t count = 0;
};

std::vector<GroupValue> group_aggregate(std::span<const BiasRecord> records,
                                        const EntityRegistry& registry, const Taxonomy& taxonomy,
                                        const std::string& key, GroupStatistic statistic);

struct LabeledPrediction {
  std::string reference;
  std::string predicted;
};

/// Macro-F1 over the classes present in the references. Per-class precision,
/// recall and F1 are 0 when undefined.
double macro_f1(std::span<const LabeledPrediction> predictions);

enum class GroupField { kTask, kModel, kLanguage, kVariant, kEntity };
std::string_view to_string(GroupField f);
GroupField parse_group_field(std::string_view s);

struct PerformanceRecord {
  std::map<std::string, std::string> grouping;  // field name -> value
  double macro_f1 = 0.0;
  std::size_t support = 0;
};

/// Macro-F1 per group of successful observations. Labels are qualified by
/// task so groups spanning tasks do not merge unrelated classes.
std::vector<PerformanceRecord> macro_f1_grouped(std::span<const Observation> observations,
                                                const TemplateCorpus& corpus,
                                                std::span<const GroupField> fields);

struct AssociationRow {
  std::string entity_id;
  double bias = 0.0;
  double mean_f1 = 0.0;
  double deviation = 0.0;             // mean_f1 - population mean
  double bottom_quartile_rate = 0.0;  // share of groupings with F1 <= Q1
};

struct AssociationReport {
  double population_mean_f1 = 0.0;
  std::vector<AssociationRow> rows;  // ascending deviation
};

/// `f1_by_grouping` holds one entity -> F1 map per grouping (task, language,
/// variant, ...). Entities are those present in `bias` and every grouping.
AssociationReport bias_performance_association(
    const std::map<std::string, double>& bias,
    const std::vector<std::map<std::string, double>>& f1_by_grouping);

}  // namespace entbias
