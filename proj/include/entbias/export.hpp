#pragma once

// Tab-separated exports. Every file starts with a header row; rows are in a
// deterministic sorted order, so equal content gives identical bytes.

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "entbias/registry.hpp"
#include "entbias/runner.hpp"
#include "entbias/scoring.hpp"
#include "entbias/similarity.hpp"
#include "entbias/stats.hpp"

namespace entbias {

enum class ExportKind { kObservations, kBias, kPerformance, kSimilarity, kAlignment, kSummary };
std::string_view to_string(ExportKind k);
ExportKind parse_export_kind(std::string_view s);

/// scope, pooled, entity_id, task_id, model_id, language, variant,
/// template_id, value, support. Task rows, then global rows; pooled rows
/// follow only when more than one (model, language, variant) was scored.
void write_bias_records(std::ostream& out, const BiasComputation& bias,
                        bool include_context = false);
std::vector<BiasRecord> read_bias_records(std::istream& in);

/// Grouping fields in the given order, then macro_f1 and support.
void write_performance(std::ostream& out, std::span<const PerformanceRecord> records,
                       std::span<const GroupField> fields);

/// rank, entity_a, entity_b, similarity, group_a, group_b.
void write_top_pairs(std::ostream& out, std::span<const SimilarPair> pairs);

/// section, key, group, value, count. Registry counts per taxonomy key, then
/// per-group mean and magnitude of the pooled global bias.
void write_summary(std::ostream& out, const EntityRegistry& registry, const Taxonomy& taxonomy,
                   std::span<const BiasRecord> global_pooled);

/// Planned totals by domain and task, then the grand total.
void write_plan(std::ostream& out, const RunManifest& manifest);

/// task_id, model_id, language, variant, planned, ok, failed, coverage.
void write_coverage(std::ostream& out, const CompletionReport& report);

/// name, test, statistic, p_value, n1, n2, method, effect_size, band.
void write_test_results(std::ostream& out,
                        std::span<const std::pair<std::string, TestResult>> results);

}  // namespace entbias
