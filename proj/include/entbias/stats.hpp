#pragma once

// Entity-level hypothesis testing: Wilcoxon signed-rank for paired designs,
// Mann-Whitney U for independent groups, Cohen's d and Pearson correlation.
//
// Tests run on one value per entity (see entity_level_aggregate); individual
// template scores are never treated as independent samples. All tests are
// two-sided. Small samples use the exact permutation distribution over
// mid-ranks; larger ones use a tie-corrected normal approximation with
// continuity correction and an Edgeworth (kurtosis) term.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "entbias/registry.hpp"
#include "entbias/scoring.hpp"

namespace entbias {

inline constexpr std::size_t kExactMaxN = 12;
inline constexpr std::size_t kWilcoxonMinN = 5;
inline constexpr std::size_t kMannWhitneyMinN = 3;

enum class EffectBand { kNegligible, kSmall, kMedium, kLarge };
std::string_view to_string(EffectBand b);
EffectBand effect_band(double d);

enum class TestMethod { kExact, kNormalApprox };

struct TestResult {
  std::string test;       // "wilcoxon" | "mann_whitney"
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t n1 = 0;     // pairs after zero removal, or first sample size
  std::size_t n2 = 0;
  std::optional<double> effect_size;
  std::optional<EffectBand> band;
  TestMethod method = TestMethod::kExact;
  // Exact mode: p = exact_count / exact_total.
  std::uint64_t exact_count = 0;
  std::uint64_t exact_total = 0;

  std::string method_note() const;
};

enum class Design { kPaired, kIndependent };

/// Drops zero differences, mid-ranks ties, reports min(W+, W-).
TestResult wilcoxon_signed_rank(std::span<const double> left, std::span<const double> right);

/// Reports U of the first sample, computed from mid-rank sums.
TestResult mann_whitney_u(std::span<const double> a, std::span<const double> b);

struct EffectSize {
  double d = 0.0;
  EffectBand band = EffectBand::kNegligible;
};

/// Independent: pooled sample sd (Bessel). Paired: sd of the differences.
EffectSize cohens_d(std::span<const double> a, std::span<const double> b, Design design);

double pearson(std::span<const double> x, std::span<const double> y);

/// Selects bias records for one side of a comparison. Empty fields match anything.
struct RecordSelector {
  BiasScope scope = BiasScope::kGlobal;
  std::optional<bool> pooled;
  std::string task_id;
  std::string model_id;
  std::string language;
  std::string variant;
  std::map<std::string, std::string> metadata;  // entity tag filters

  static RecordSelector from_json(const Json& j);
};

struct ComparisonSpec {
  std::string name;
  Design design = Design::kIndependent;
  RecordSelector left;
  RecordSelector right;

  static ComparisonSpec from_json(const Json& j);
};

struct EntityLevelValues {
  std::map<std::string, double> left;
  std::map<std::string, double> right;
  std::size_t left_records = 0;
  std::size_t right_records = 0;
};

/// One mean value per entity per side. Paired specs must cover the same entities.
EntityLevelValues entity_level_aggregate(std::span<const BiasRecord> records,
                                         const ComparisonSpec& spec,
                                         const EntityRegistry& registry);

/// Aggregates, runs the design's test and attaches Cohen's d.
TestResult compare(std::span<const BiasRecord> records, const ComparisonSpec& spec,
                   const EntityRegistry& registry);

/// Normal-approximation helpers, exposed for tests.
double wilcoxon_normal_p(std::span<const double> abs_ranks, double w_plus);
double mann_whitney_normal_p(std::span<const double> ranks, std::size_t n1, double u);

}  // namespace entbias
