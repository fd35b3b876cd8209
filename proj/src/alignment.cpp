#include "entbias/alignment.hpp"

#include <algorithm>
#include <map>
#include <ostream>
#include <set>
#include <tuple>

#include "entbias/error.hpp"
#include "entbias/log.hpp"
#include "entbias/stats.hpp"

namespace entbias {

BenchmarkItem BenchmarkItem::from_json(const Json& j) {
  const Template t = parse_template(j);
  BenchmarkItem item;
  item.benchmark_id = j.value("benchmark_id", std::string());
  item.id = t.id;
  item.task_id = t.task_id;
  item.language = t.language;
  item.text = t.text;
  item.gold_label = t.intended_label;
  item.rewritten = j.value("rewritten", false);
  if (!j.contains("spans") || !j.at("spans").is_array()) {
    throw Error(ErrorCode::kInvalidInput, "benchmark item '" + item.id + "' has no spans");
  }
  for (const auto& s : j.at("spans")) {
    item.spans.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
  }
  return item;
}

Template mask_item(const BenchmarkItem& item) {
  if (item.spans.empty()) {
    throw Error(ErrorCode::kInvalidInput, "benchmark item '" + item.id + "' has no entity span");
  }
  std::vector<EntitySpan> spans = item.spans;
  std::sort(spans.begin(), spans.end(),
            [](const EntitySpan& a, const EntitySpan& b) { return a.begin < b.begin; });
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (spans[i].begin >= spans[i].end || spans[i].end > item.text.size()) {
      throw Error(ErrorCode::kInvalidInput, "benchmark item '" + item.id + "': invalid span [" +
                                                std::to_string(spans[i].begin) + ", " +
                                                std::to_string(spans[i].end) + ")");
    }
    if (i > 0 && spans[i].begin < spans[i - 1].end) {
      throw Error(ErrorCode::kInvalidInput, "benchmark item '" + item.id + "': overlapping spans");
    }
  }
  Template t;
  t.id = item.id;
  t.task_id = item.task_id;
  t.language = item.language;
  t.intended_label = item.gold_label;
  t.origin = TemplateOrigin::kRealBenchmark;
  std::size_t pos = 0;
  for (const auto& s : spans) {
    t.text.append(item.text, pos, s.begin - pos);
    t.text += kPlaceholder;
    pos = s.end;
  }
  t.text.append(item.text, pos);
  return t;
}

std::vector<Template> load_benchmark_items(std::istream& in, const SchemaSet& schemas) {
  std::vector<Template> out;
  for (const Json& record : read_json_lines(in, "benchmark items")) {
    const BenchmarkItem item = BenchmarkItem::from_json(record);
    const LabelSchema* schema = schemas.find(item.task_id);
    if (schema == nullptr) {
      throw Error(ErrorCode::kUnknownTask, "benchmark item '" + item.id +
                                               "' references unknown task '" + item.task_id + "'");
    }
    if (!schema->index_of(item.gold_label)) {
      throw Error(ErrorCode::kUnknownLabel, "benchmark item '" + item.id + "': gold label '" +
                                                item.gold_label + "' not in task '" +
                                                item.task_id + "'");
    }
    out.push_back(mask_item(item));
  }
  return out;
}

std::pair<std::vector<Observation>, std::vector<Observation>> split_by_origin(
    std::span<const Observation> observations, const TemplateCorpus& corpus) {
  std::pair<std::vector<Observation>, std::vector<Observation>> out;
  for (const auto& o : observations) {
    const Template& t = corpus.at(o.template_id);
    (t.origin == TemplateOrigin::kRealBenchmark ? out.first : out.second).push_back(o);
  }
  return out;
}

namespace {

// (model, language) -> entity -> (mean over variants, summed support)
using TaskBiasIndex =
    std::map<std::pair<std::string, std::string>, std::map<std::string, MeanWithSupport>>;

TaskBiasIndex index_task_bias(const BiasComputation& c, const std::string& task_id) {
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<const BiasRecord*>> acc;
  for (const auto& r : c.task) {
    if (r.task_id != task_id) continue;
    acc[{r.model_id, r.language, r.entity_id}].push_back(&r);
  }
  TaskBiasIndex out;
  for (const auto& [key, records] : acc) {
    const auto& [model, language, entity] = key;
    MeanWithSupport m;
    for (const BiasRecord* r : records) {
      m.value += r->value;
      m.support += r->support;
    }
    m.value /= static_cast<double>(records.size());
    out[{model, language}][entity] = m;
  }
  return out;
}

}  // namespace

std::vector<AlignmentReport> align(const BiasComputation& real, const BiasComputation& synthetic,
                                   const AlignmentOptions& options) {
  const TaskBiasIndex a = index_task_bias(real, options.task_id);
  const TaskBiasIndex b = index_task_bias(synthetic, options.task_id);
  std::vector<AlignmentReport> reports;
  for (const auto& [cell, real_bias] : a) {
    const auto it = b.find(cell);
    if (it == b.end()) continue;
    AlignmentReport rep;
    rep.benchmark_id = options.benchmark_id;
    rep.task_id = options.task_id;
    rep.model_id = cell.first;
    rep.language = cell.second;
    std::vector<double> x, y;
    for (const auto& [entity, rv] : real_bias) {
      const auto sit = it->second.find(entity);
      if (sit == it->second.end()) continue;
      if (rv.support < options.min_support || sit->second.support < options.min_support) {
        rep.excluded.push_back(entity);
        continue;
      }
      rep.pairs.push_back({entity, rv.value, sit->second.value, rv.support, sit->second.support});
      x.push_back(rv.value);
      y.push_back(sit->second.value);
    }
    rep.n = rep.pairs.size();
    if (rep.n < kMinAlignmentEntities) {
      throw Error(ErrorCode::kPrecondition,
                  "alignment " + cell.first + "/" + cell.second + ": " + std::to_string(rep.n) +
                      " shared entities with support >= " + std::to_string(options.min_support) +
                      ", need at least 3");
    }
    if (!rep.excluded.empty()) {
      log::warn("alignment " + cell.first + "/" + cell.second + ": excluded " +
                std::to_string(rep.excluded.size()) + " low-support entities");
    }
    rep.r = pearson(x, y);
    reports.push_back(std::move(rep));
  }
  if (reports.empty()) {
    throw Error(ErrorCode::kPrecondition, "alignment: no (model, language) scored in both corpora for task '" +
                                              options.task_id + "'");
  }
  return reports;
}

void write_alignment_reports(std::ostream& out, std::span<const AlignmentReport> reports) {
  out << "benchmark_id\ttask_id\tmodel_id\tlanguage\tr\tn\texcluded\n";
  std::vector<const AlignmentReport*> sorted;
  for (const auto& r : reports) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](const auto* x, const auto* y) {
    return std::tie(x->benchmark_id, x->task_id, x->model_id, x->language) <
           std::tie(y->benchmark_id, y->task_id, y->model_id, y->language);
  });
  for (const auto* r : sorted) {
    out << r->benchmark_id << '\t' << r->task_id << '\t' << r->model_id << '\t' << r->language
        << '\t' << format_double(r->r) << '\t' << r->n << '\t' << r->excluded.size() << '\n';
  }
}

void write_alignment_grid(std::ostream& out, std::span<const AlignmentReport> reports) {
  std::set<std::string> models;
  std::set<std::pair<std::string, std::string>> columns;  // (language, benchmark)
  std::map<std::tuple<std::string, std::string, std::string>, double> cells;
  for (const auto& r : reports) {
    models.insert(r.model_id);
    columns.insert({r.language, r.benchmark_id});
    cells[{r.model_id, r.language, r.benchmark_id}] = r.r;
  }
  out << "model_id";
  for (const auto& [language, benchmark] : columns) out << '\t' << language << ':' << benchmark;
  out << '\n';
  for (const auto& m : models) {
    out << m;
    for (const auto& [language, benchmark] : columns) {
      const auto it = cells.find({m, language, benchmark});
      out << '\t' << (it == cells.end() ? std::string("NA") : format_double(it->second));
    }
    out << '\n';
  }
}

}  // namespace entbias
