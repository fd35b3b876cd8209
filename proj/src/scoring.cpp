#include "entbias/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <tuple>

#include "entbias/error.hpp"

namespace entbias {

std::string Observation::key() const {
  return entity_id + "|" + template_id + "|" + config.key();
}

Json Observation::to_json() const {
  Json j{{"entity_id", entity_id},
         {"template_id", template_id},
         {"task_id", config.task_id},
         {"model_id", config.model_id},
         {"language", config.language},
         {"variant", config.variant.name()},
         {"status", ok ? "ok" : "failed"}};
  if (ok) {
    j["posterior"] = posterior;
    j["predicted"] = predicted;
  } else {
    j["reason"] = failure_reason;
  }
  if (retries > 0) j["retries"] = retries;
  return j;
}

Observation Observation::from_json(const Json& j) {
  Observation o;
  o.entity_id = j.at("entity_id").get<std::string>();
  o.template_id = j.at("template_id").get<std::string>();
  o.config.task_id = j.at("task_id").get<std::string>();
  o.config.model_id = j.at("model_id").get<std::string>();
  o.config.language = j.at("language").get<std::string>();
  o.config.variant = PromptVariant::parse(j.at("variant").get<std::string>());
  o.ok = j.at("status").get<std::string>() == "ok";
  if (o.ok) {
    o.posterior = j.at("posterior").get<std::vector<double>>();
    o.predicted = j.at("predicted").get<std::string>();
  } else {
    o.failure_reason = j.value("reason", std::string());
  }
  o.retries = j.value("retries", 0);
  return o;
}

PosteriorResult extract_posterior(const TokenLogprobs& logprobs,
                                  std::span<const std::string> expected_answers) {
  PosteriorResult out;
  if (!logprobs.ok) {
    out.failure_reason = logprobs.failure_reason;
    return out;
  }
  const double neg_inf = -std::numeric_limits<double>::infinity();
  std::vector<double> lp(expected_answers.size(), neg_inf);
  bool any = false;
  for (std::size_t l = 0; l < expected_answers.size(); ++l) {
    const std::string want = first_answer_token(expected_answers[l]);
    // Candidates are sorted by logprob, so the first match is the best one.
    for (const auto& c : logprobs.candidates) {
      if (to_lower_ascii(trim(c.token)) == want) {
        lp[l] = c.logprob;
        any = true;
        break;
      }
    }
  }
  if (!any) {
    out.failure_reason = "no_label_token";
    return out;
  }
  const double mx = *std::max_element(lp.begin(), lp.end());
  double z = 0.0;
  for (double v : lp) z += v == neg_inf ? 0.0 : std::exp(v - mx);
  out.posterior.resize(lp.size());
  for (std::size_t l = 0; l < lp.size(); ++l) {
    out.posterior[l] = lp[l] == neg_inf ? 0.0 : std::exp(lp[l] - mx) / z;
  }
  out.ok = true;
  return out;
}

std::size_t predicted_label(std::span<const double> posterior) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < posterior.size(); ++i) {
    if (posterior[i] > posterior[best]) best = i;
  }
  return best;
}

double raw_score(std::span<const double> posterior, std::span<const double> weights) {
  if (posterior.size() != weights.size()) {
    throw Error(ErrorCode::kPrecondition, "posterior and weights differ in length");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < posterior.size(); ++i) s += weights[i] * posterior[i];
  return s;
}

std::map<std::string, double> normalize_context(const std::map<std::string, double>& scores) {
  if (scores.size() < 2) {
    throw Error(ErrorCode::kPrecondition, "context normalization needs at least 2 entities");
  }
  const double n = static_cast<double>(scores.size());
  double mean = 0.0;
  for (const auto& [_, s] : scores) mean += s;
  mean /= n;
  double var = 0.0;
  for (const auto& [_, s] : scores) var += (s - mean) * (s - mean);
  const double sd = std::sqrt(var / n);
  std::map<std::string, double> out;
  for (const auto& [e, s] : scores) out.emplace(e, sd < kSigmaFloor ? 0.0 : (s - mean) / sd);
  return out;
}

MeanWithSupport task_bias(std::span<const double> context_deltas) {
  if (context_deltas.empty()) throw Error(ErrorCode::kPrecondition, "task bias has zero support");
  double sum = 0.0;
  for (double d : context_deltas) sum += d;
  return {sum / static_cast<double>(context_deltas.size()), context_deltas.size()};
}

double global_bias(std::span<const double> task_biases) {
  if (task_biases.empty()) throw Error(ErrorCode::kPrecondition, "global bias needs at least one task");
  double sum = 0.0;
  for (double d : task_biases) sum += d;
  return sum / static_cast<double>(task_biases.size());
}

std::string_view to_string(BiasScope s) {
  switch (s) {
    case BiasScope::kContext: return "context";
    case BiasScope::kTask: return "task";
    case BiasScope::kGlobal: return "global";
  }
  return "task";
}

BiasScope parse_bias_scope(std::string_view s) {
  if (s == "context") return BiasScope::kContext;
  if (s == "task") return BiasScope::kTask;
  if (s == "global") return BiasScope::kGlobal;
  throw Error(ErrorCode::kInvalidInput, "unknown bias scope '" + std::string(s) + "'");
}

BiasComputation compute_bias(std::span<const Observation> observations,
                             const TemplateCorpus& corpus, const SchemaSet& schemas,
                             const ScoringOptions& options) {
  using ContextKey = std::pair<RunConfig, std::string>;  // (config, template)
  std::map<RunConfig, std::set<std::string>> universe;
  std::map<ContextKey, std::map<std::string, double>> contexts;
  std::map<std::string, std::vector<double>> weights_by_task;

  for (const Observation& o : observations) {
    universe[o.config].insert(o.entity_id);
    if (!o.ok) continue;
    auto wit = weights_by_task.find(o.config.task_id);
    if (wit == weights_by_task.end()) {
      wit = weights_by_task.emplace(o.config.task_id, schemas.at(o.config.task_id).weights()).first;
    }
    if (corpus.find(o.template_id) == nullptr) {
      throw Error(ErrorCode::kNotFound, "observation references unknown template '" +
                                            o.template_id + "'");
    }
    contexts[{o.config, o.template_id}][o.entity_id] = raw_score(o.posterior, wit->second);
  }

  BiasComputation out;
  // (config, entity) -> (sum of deltas, count)
  std::map<std::pair<RunConfig, std::string>, MeanWithSupport> task_acc;
  std::map<RunConfig, std::size_t> dropped_by_config;
  for (const auto& [key, scores] : contexts) {
    ++out.contexts;
    const double coverage =
        static_cast<double>(scores.size()) / static_cast<double>(universe[key.first].size());
    if (coverage < options.min_context_coverage || scores.size() < 2) {
      ++out.dropped_contexts;
      ++dropped_by_config[key.first];
      continue;
    }
    for (const auto& [entity, delta] : normalize_context(scores)) {
      auto& acc = task_acc[{key.first, entity}];
      acc.value += delta;
      ++acc.support;
      if (options.keep_context_records) {
        out.context.push_back({entity, BiasScope::kContext, false, key.first.task_id,
                               key.first.model_id, key.first.language, key.first.variant.name(),
                               key.second, delta, 1});
      }
    }
  }
  for (const auto& [config, n] : dropped_by_config) {
    out.warnings.push_back("dropped " + std::to_string(n) + " context(s) of " + config.key() +
                           " below " + format_double(options.min_context_coverage) +
                           " entity coverage");
  }

  // (model, language, variant, entity) -> task values, in task order
  std::map<std::tuple<std::string, std::string, std::string, std::string>, std::vector<double>>
      global_acc;
  // (task, entity) -> per-config task biases and summed support
  std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::size_t>>
      pooled_acc;
  for (const auto& [key, acc] : task_acc) {
    const RunConfig& c = key.first;
    const double value = acc.value / static_cast<double>(acc.support);
    out.task.push_back({key.second, BiasScope::kTask, false, c.task_id, c.model_id, c.language,
                        c.variant.name(), {}, value, acc.support});
    global_acc[{c.model_id, c.language, c.variant.name(), key.second}].push_back(value);
    auto& p = pooled_acc[{c.task_id, key.second}];
    p.first.push_back(value);
    p.second += acc.support;
  }
  for (const auto& [key, values] : global_acc) {
    const auto& [model, language, variant, entity] = key;
    out.global.push_back({entity, BiasScope::kGlobal, false, std::string(kAll), model, language,
                          variant, {}, global_bias(values), values.size()});
  }
  std::map<std::string, std::vector<double>> pooled_global;
  for (const auto& [key, p] : pooled_acc) {
    const double value = global_bias(p.first);  // plain mean over configurations
    out.task_pooled.push_back({key.second, BiasScope::kTask, true, key.first, std::string(kAll),
                               std::string(kAll), std::string(kAll), {}, value, p.second});
    pooled_global[key.second].push_back(value);
  }
  for (const auto& [entity, values] : pooled_global) {
    out.global_pooled.push_back({entity, BiasScope::kGlobal, true, std::string(kAll),
                                 std::string(kAll), std::string(kAll), std::string(kAll), {},
                                 global_bias(values), values.size()});
  }
  return out;
}

std::vector<GroupValue> group_aggregate(std::span<const BiasRecord> records,
                                        const EntityRegistry& registry, const Taxonomy& taxonomy,
                                        const std::string& key, GroupStatistic statistic) {
  if (!taxonomy.has_key(key)) {
    throw Error(ErrorCode::kUnknownMetadataKey, "unknown grouping key '" + key + "'");
  }
  std::map<std::string, MeanWithSupport> acc;
  for (const auto& r : records) {
    const Entity* e = registry.find(r.entity_id);
    const std::string group = e == nullptr ? std::string(kUnknownGroup) : e->tag(key);
    auto& a = acc[group];
    a.value += statistic == GroupStatistic::kMean ? r.value : std::abs(r.value);
    ++a.support;
  }
  std::vector<GroupValue> out;
  for (const auto& [group, a] : acc) {
    out.push_back({group, a.value / static_cast<double>(a.support), a.support});
  }
  return out;
}

double macro_f1(std::span<const LabeledPrediction> predictions) {
  if (predictions.empty()) throw Error(ErrorCode::kPrecondition, "macro-F1 of an empty group");
  struct Counts {
    std::size_t tp = 0, fp = 0, fn = 0;
  };
  std::map<std::string, Counts> counts;
  std::set<std::string> reference_classes;
  for (const auto& p : predictions) {
    reference_classes.insert(p.reference);
    if (p.reference == p.predicted) {
      ++counts[p.reference].tp;
    } else {
      ++counts[p.reference].fn;
      ++counts[p.predicted].fp;
    }
  }
  double sum = 0.0;
  for (const auto& cls : reference_classes) {
    const Counts& c = counts[cls];
    const double precision =
        c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    const double recall =
        c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    sum += precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
  }
  return sum / static_cast<double>(reference_classes.size());
}

std::string_view to_string(GroupField f) {
  switch (f) {
    case GroupField::kTask: return "task";
    case GroupField::kModel: return "model";
    case GroupField::kLanguage: return "language";
    case GroupField::kVariant: return "variant";
    case GroupField::kEntity: return "entity";
  }
  return "task";
}

GroupField parse_group_field(std::string_view s) {
  if (s == "task") return GroupField::kTask;
  if (s == "model") return GroupField::kModel;
  if (s == "language") return GroupField::kLanguage;
  if (s == "variant") return GroupField::kVariant;
  if (s == "entity") return GroupField::kEntity;
  throw Error(ErrorCode::kInvalidInput, "unknown grouping field '" + std::string(s) + "'");
}

std::vector<PerformanceRecord> macro_f1_grouped(std::span<const Observation> observations,
                                                const TemplateCorpus& corpus,
                                                std::span<const GroupField> fields) {
  std::map<std::map<std::string, std::string>, std::vector<LabeledPrediction>> groups;
  for (const Observation& o : observations) {
    if (!o.ok) continue;
    std::map<std::string, std::string> g;
    for (GroupField f : fields) {
      std::string v;
      switch (f) {
        case GroupField::kTask: v = o.config.task_id; break;
        case GroupField::kModel: v = o.config.model_id; break;
        case GroupField::kLanguage: v = o.config.language; break;
        case GroupField::kVariant: v = o.config.variant.name(); break;
        case GroupField::kEntity: v = o.entity_id; break;
      }
      g.emplace(std::string(to_string(f)), std::move(v));
    }
    const Template& t = corpus.at(o.template_id);
    groups[g].push_back({o.config.task_id + ":" + t.intended_label,
                         o.config.task_id + ":" + o.predicted});
  }
  std::vector<PerformanceRecord> out;
  for (const auto& [g, preds] : groups) out.push_back({g, macro_f1(preds), preds.size()});
  return out;
}

namespace {

// Linear-interpolation quantile (R type 7) of sorted values.
double quantile_sorted(const std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

AssociationReport bias_performance_association(
    const std::map<std::string, double>& bias,
    const std::vector<std::map<std::string, double>>& f1_by_grouping) {
  if (f1_by_grouping.empty()) {
    throw Error(ErrorCode::kPrecondition, "association needs at least one F1 grouping");
  }
  std::vector<std::string> entities;
  for (const auto& [e, _] : bias) {
    const bool everywhere = std::all_of(f1_by_grouping.begin(), f1_by_grouping.end(),
                                        [&](const auto& g) { return g.contains(e); });
    if (everywhere) entities.push_back(e);
  }
  if (entities.empty()) {
    throw Error(ErrorCode::kPrecondition, "bias and F1 maps share no entities");
  }
  if (entities.size() < 2) {
    throw Error(ErrorCode::kDegenerate, "quartiles are undefined for a single entity");
  }

  std::vector<double> q1(f1_by_grouping.size());
  for (std::size_t g = 0; g < f1_by_grouping.size(); ++g) {
    std::vector<double> v;
    for (const auto& e : entities) v.push_back(f1_by_grouping[g].at(e));
    std::sort(v.begin(), v.end());
    q1[g] = quantile_sorted(v, 0.25);
  }

  AssociationReport report;
  for (const auto& e : entities) {
    AssociationRow row;
    row.entity_id = e;
    row.bias = bias.at(e);
    std::size_t bottom = 0;
    for (std::size_t g = 0; g < f1_by_grouping.size(); ++g) {
      const double f = f1_by_grouping[g].at(e);
      row.mean_f1 += f;
      if (f <= q1[g]) ++bottom;
    }
    row.mean_f1 /= static_cast<double>(f1_by_grouping.size());
    row.bottom_quartile_rate = static_cast<double>(bottom) / static_cast<double>(f1_by_grouping.size());
    report.population_mean_f1 += row.mean_f1;
    report.rows.push_back(row);
  }
  report.population_mean_f1 /= static_cast<double>(entities.size());
  for (auto& row : report.rows) row.deviation = row.mean_f1 - report.population_mean_f1;
  std::stable_sort(report.rows.begin(), report.rows.end(),
                   [](const AssociationRow& a, const AssociationRow& b) {
                     return a.deviation < b.deviation;
                   });
  return report;
}

}  // namespace entbias
