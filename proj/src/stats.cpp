#include "entbias/stats.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <numeric>

#include "entbias/error.hpp"

namespace entbias {
namespace {

// Mid-ranks doubled so that tied ranks stay integral: a run occupying
// 1-based positions i..j gets i + j.
std::vector<std::int64_t> doubled_midranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<std::int64_t> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const auto r2 = static_cast<std::int64_t>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r2;
    i = j + 1;
  }
  return ranks;
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }
double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

// Two-sided tail of a symmetric statistic with the given variance and fourth
// cumulant, |deviation| from the null centre, continuity corrected.
double edgeworth_two_sided(double deviation, double variance, double kappa4) {
  if (variance <= 0.0) return 1.0;
  const double z = std::max(std::abs(deviation) - 0.5, 0.0) / std::sqrt(variance);
  const double excess = kappa4 / (variance * variance);
  const double tail = normal_sf(z) + normal_pdf(z) * excess / 24.0 * (z * z * z - 3.0 * z);
  return std::clamp(2.0 * tail, 0.0, 1.0);
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_variance(std::span<const double> v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

std::optional<EffectSize> try_cohens_d(std::span<const double> a, std::span<const double> b,
                                       Design design) {
  try {
    return cohens_d(a, b, design);
  } catch (const Error&) {
    return std::nullopt;
  }
}

}  // namespace

std::string_view to_string(EffectBand b) {
  switch (b) {
    case EffectBand::kNegligible: return "negligible";
    case EffectBand::kSmall: return "small";
    case EffectBand::kMedium: return "medium";
    case EffectBand::kLarge: return "large";
  }
  return "negligible";
}

EffectBand effect_band(double d) {
  const double a = std::abs(d);
  if (a < 0.2) return EffectBand::kNegligible;
  if (a < 0.5) return EffectBand::kSmall;
  if (a < 0.8) return EffectBand::kMedium;
  return EffectBand::kLarge;
}

std::string TestResult::method_note() const {
  if (method == TestMethod::kExact) {
    return "exact permutation (" + std::to_string(exact_count) + "/" +
           std::to_string(exact_total) + ")";
  }
  return "normal approximation (tie and continuity corrected, Edgeworth term)";
}

double wilcoxon_normal_p(std::span<const double> abs_ranks, double w_plus) {
  double s1 = 0.0, s2 = 0.0, s4 = 0.0;
  for (double r : abs_ranks) {
    s1 += r;
    s2 += r * r;
    s4 += r * r * r * r;
  }
  // W+ is a sum of independent r_i * Bernoulli(1/2).
  const double p = edgeworth_two_sided(w_plus - s1 / 2.0, s2 / 4.0, -s4 / 8.0);
  // No arrangement is rarer than the all-positive or all-negative one.
  return std::max(p, std::ldexp(2.0, -static_cast<int>(abs_ranks.size())));
}

double mann_whitney_normal_p(std::span<const double> ranks, std::size_t n1, double u) {
  const double big_n = static_cast<double>(ranks.size());
  const double n = static_cast<double>(n1);
  const double m = big_n - n;
  const double mean = mean_of(ranks);
  double mu2 = 0.0, mu4 = 0.0;
  for (double r : ranks) {
    const double c = r - mean;
    mu2 += c * c;
    mu4 += c * c * c * c;
  }
  mu2 /= big_n;
  mu4 /= big_n;
  // Cumulants of a sample sum drawn without replacement from the rank scores.
  const double variance = n * m / (big_n - 1.0) * mu2;
  double kappa4 = 0.0;
  if (big_n >= 4.0) {
    const double nm = n * m;
    kappa4 = nm / ((big_n - 1.0) * (big_n - 1.0) * (big_n - 2.0) * (big_n - 3.0)) *
             ((big_n - 1.0) * (big_n * (big_n + 1.0) - 6.0 * nm) * mu4 -
              (3.0 * big_n * (big_n - 1.0) * (big_n - 1.0) - 6.0 * nm * (2.0 * big_n - 3.0)) *
                  mu2 * mu2);
  }
  const double p = edgeworth_two_sided(u - n * m / 2.0, variance, kappa4);
  const double log_choose = std::lgamma(big_n + 1.0) - std::lgamma(n + 1.0) - std::lgamma(m + 1.0);
  return std::max(p, std::min(1.0, 2.0 * std::exp(-log_choose)));
}

TestResult wilcoxon_signed_rank(std::span<const double> left, std::span<const double> right) {
  if (left.size() != right.size()) {
    throw Error(ErrorCode::kPrecondition, "paired samples differ in length");
  }
  std::vector<double> diffs;
  std::vector<double> all_diffs;
  for (std::size_t i = 0; i < left.size(); ++i) {
    const double d = left[i] - right[i];
    all_diffs.push_back(d);
    if (d != 0.0) diffs.push_back(d);
  }
  if (diffs.empty()) throw Error(ErrorCode::kDegenerate, "degenerate pairs: all differences are zero");
  const std::size_t n = diffs.size();
  if (n < kWilcoxonMinN) {
    throw Error(ErrorCode::kPrecondition, "Wilcoxon needs at least 5 non-zero differences, got " +
                                              std::to_string(n));
  }
  std::vector<double> abs_diffs(n);
  for (std::size_t i = 0; i < n; ++i) abs_diffs[i] = std::abs(diffs[i]);
  const std::vector<std::int64_t> r2 = doubled_midranks(abs_diffs);
  const std::int64_t total2 = std::accumulate(r2.begin(), r2.end(), std::int64_t{0});
  std::int64_t wp2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (diffs[i] > 0) wp2 += r2[i];
  }

  TestResult r;
  r.test = "wilcoxon";
  r.n1 = r.n2 = n;
  r.statistic = static_cast<double>(std::min(wp2, total2 - wp2)) / 2.0;
  if (n <= kExactMaxN) {
    const std::int64_t observed = std::abs(2 * wp2 - total2);
    const std::uint64_t masks = std::uint64_t{1} << n;
    std::uint64_t extreme = 0;
    for (std::uint64_t mask = 0; mask < masks; ++mask) {
      std::int64_t s = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (mask >> i & 1U) s += r2[i];
      }
      if (std::abs(2 * s - total2) >= observed) ++extreme;
    }
    r.method = TestMethod::kExact;
    r.exact_count = extreme;
    r.exact_total = masks;
    r.p_value = static_cast<double>(extreme) / static_cast<double>(masks);
  } else {
    std::vector<double> ranks(n);
    for (std::size_t i = 0; i < n; ++i) ranks[i] = static_cast<double>(r2[i]) / 2.0;
    r.method = TestMethod::kNormalApprox;
    r.p_value = wilcoxon_normal_p(ranks, static_cast<double>(wp2) / 2.0);
  }
  if (auto es = try_cohens_d(left, right, Design::kPaired)) {
    r.effect_size = es->d;
    r.band = es->band;
  }
  return r;
}

TestResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  if (a.size() < kMannWhitneyMinN || b.size() < kMannWhitneyMinN) {
    throw Error(ErrorCode::kPrecondition, "Mann-Whitney needs at least 3 values per sample, got " +
                                              std::to_string(a.size()) + " and " +
                                              std::to_string(b.size()));
  }
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::vector<std::int64_t> r2 = doubled_midranks(pooled);
  const std::size_t n1 = a.size();
  const std::size_t big_n = pooled.size();
  const auto n1i = static_cast<std::int64_t>(n1);
  const auto n2i = static_cast<std::int64_t>(b.size());
  std::int64_t rank_sum2 = 0;
  for (std::size_t i = 0; i < n1; ++i) rank_sum2 += r2[i];
  const std::int64_t u2 = rank_sum2 - n1i * (n1i + 1);

  TestResult r;
  r.test = "mann_whitney";
  r.n1 = n1;
  r.n2 = b.size();
  r.statistic = static_cast<double>(u2) / 2.0;
  if (big_n <= kExactMaxN) {
    const std::int64_t observed = std::abs(u2 - n1i * n2i);
    std::uint64_t extreme = 0;
    std::uint64_t total = 0;
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << big_n); ++mask) {
      if (static_cast<std::size_t>(std::popcount(mask)) != n1) continue;
      ++total;
      std::int64_t s = 0;
      for (std::size_t i = 0; i < big_n; ++i) {
        if (mask >> i & 1U) s += r2[i];
      }
      if (std::abs(s - n1i * (n1i + 1) - n1i * n2i) >= observed) ++extreme;
    }
    r.method = TestMethod::kExact;
    r.exact_count = extreme;
    r.exact_total = total;
    r.p_value = static_cast<double>(extreme) / static_cast<double>(total);
  } else {
    std::vector<double> ranks(big_n);
    for (std::size_t i = 0; i < big_n; ++i) ranks[i] = static_cast<double>(r2[i]) / 2.0;
    r.method = TestMethod::kNormalApprox;
    r.p_value = mann_whitney_normal_p(ranks, n1, r.statistic);
  }
  if (auto es = try_cohens_d(a, b, Design::kIndependent)) {
    r.effect_size = es->d;
    r.band = es->band;
  }
  return r;
}

EffectSize cohens_d(std::span<const double> a, std::span<const double> b, Design design) {
  double numerator = 0.0;
  double s = 0.0;
  if (design == Design::kPaired) {
    if (a.size() != b.size() || a.size() < 2) {
      throw Error(ErrorCode::kPrecondition, "paired Cohen's d needs two equal samples of size >= 2");
    }
    std::vector<double> diff(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
    numerator = mean_of(diff);
    s = std::sqrt(sample_variance(diff));
  } else {
    if (a.empty() || b.empty() || a.size() + b.size() < 3) {
      throw Error(ErrorCode::kPrecondition, "independent Cohen's d needs n1 + n2 >= 3");
    }
    const double n1 = static_cast<double>(a.size());
    const double n2 = static_cast<double>(b.size());
    const double v1 = a.size() > 1 ? sample_variance(a) : 0.0;
    const double v2 = b.size() > 1 ? sample_variance(b) : 0.0;
    numerator = mean_of(a) - mean_of(b);
    s = std::sqrt(((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / (n1 + n2 - 2.0));
  }
  if (!(s > 0.0)) throw Error(ErrorCode::kDegenerate, "Cohen's d: zero standard deviation");
  const double d = numerator / s;
  return {d, effect_band(d)};
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::kPrecondition, "pearson: length mismatch");
  if (x.size() < 3) throw Error(ErrorCode::kPrecondition, "pearson needs n >= 3");
  const double mx = mean_of(x);
  const double my = mean_of(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::kDegenerate, "pearson: constant vector");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

RecordSelector RecordSelector::from_json(const Json& j) {
  RecordSelector s;
  s.scope = parse_bias_scope(j.value("scope", std::string("global")));
  if (j.contains("pooled")) s.pooled = j.at("pooled").get<bool>();
  s.task_id = j.value("task_id", std::string());
  s.model_id = j.value("model_id", std::string());
  s.language = j.value("language", std::string());
  s.variant = j.value("variant", std::string());
  if (j.contains("metadata")) s.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
  return s;
}

ComparisonSpec ComparisonSpec::from_json(const Json& j) {
  ComparisonSpec c;
  c.name = j.value("name", std::string("comparison"));
  const std::string design = j.value("design", std::string("independent"));
  if (design == "paired") {
    c.design = Design::kPaired;
  } else if (design == "independent") {
    c.design = Design::kIndependent;
  } else {
    throw Error(ErrorCode::kInvalidInput, "unknown design '" + design + "'");
  }
  c.left = RecordSelector::from_json(j.at("left"));
  c.right = RecordSelector::from_json(j.at("right"));
  return c;
}

namespace {

bool selects(const RecordSelector& s, const BiasRecord& r, const EntityRegistry& registry) {
  if (r.scope != s.scope) return false;
  if (s.pooled && *s.pooled != r.pooled) return false;
  if (!s.task_id.empty() && s.task_id != r.task_id) return false;
  if (!s.model_id.empty() && s.model_id != r.model_id) return false;
  if (!s.language.empty() && s.language != r.language) return false;
  if (!s.variant.empty() && s.variant != r.variant) return false;
  if (!s.metadata.empty()) {
    const Entity* e = registry.find(r.entity_id);
    if (e == nullptr) return false;
    for (const auto& [k, v] : s.metadata) {
      if (e->tag(k) != v) return false;
    }
  }
  return true;
}

std::map<std::string, double> per_entity_mean(std::span<const BiasRecord> records,
                                              const RecordSelector& s,
                                              const EntityRegistry& registry,
                                              std::size_t& matched) {
  std::map<std::string, MeanWithSupport> acc;
  for (const auto& r : records) {
    if (!selects(s, r, registry)) continue;
    ++matched;
    auto& a = acc[r.entity_id];
    a.value += r.value;
    ++a.support;
  }
  std::map<std::string, double> out;
  for (const auto& [e, a] : acc) out.emplace(e, a.value / static_cast<double>(a.support));
  return out;
}

std::vector<double> values_of(const std::map<std::string, double>& m) {
  std::vector<double> v;
  v.reserve(m.size());
  for (const auto& [_, x] : m) v.push_back(x);
  return v;
}

}  // namespace

EntityLevelValues entity_level_aggregate(std::span<const BiasRecord> records,
                                         const ComparisonSpec& spec,
                                         const EntityRegistry& registry) {
  EntityLevelValues out;
  out.left = per_entity_mean(records, spec.left, registry, out.left_records);
  out.right = per_entity_mean(records, spec.right, registry, out.right_records);
  if (spec.design == Design::kPaired) {
    for (const auto& [e, _] : out.left) {
      if (!out.right.contains(e)) {
        throw Error(ErrorCode::kPrecondition, "paired comparison: entity '" + e +
                                                  "' missing from the right side");
      }
    }
    for (const auto& [e, _] : out.right) {
      if (!out.left.contains(e)) {
        throw Error(ErrorCode::kPrecondition, "paired comparison: entity '" + e +
                                                  "' missing from the left side");
      }
    }
  }
  return out;
}

TestResult compare(std::span<const BiasRecord> records, const ComparisonSpec& spec,
                   const EntityRegistry& registry) {
  const EntityLevelValues values = entity_level_aggregate(records, spec, registry);
  const std::vector<double> left = values_of(values.left);
  const std::vector<double> right = values_of(values.right);
  return spec.design == Design::kPaired ? wilcoxon_signed_rank(left, right)
                                        : mann_whitney_u(left, right);
}

}  // namespace entbias
