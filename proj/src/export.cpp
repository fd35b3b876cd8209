#include "entbias/export.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <set>
#include <tuple>

#include "entbias/error.hpp"

namespace entbias {
namespace {

void write_bias_row(std::ostream& out, const BiasRecord& r) {
  out << to_string(r.scope) << '\t' << (r.pooled ? "1" : "0") << '\t' << r.entity_id << '\t'
      << r.task_id << '\t' << r.model_id << '\t' << r.language << '\t' << r.variant << '\t'
      << (r.template_id.empty() ? "-" : r.template_id) << '\t' << format_double(r.value) << '\t'
      << r.support << '\n';
}

void write_sorted(std::ostream& out, std::vector<BiasRecord> rows) {
  std::sort(rows.begin(), rows.end(), [](const BiasRecord& a, const BiasRecord& b) {
    return std::tie(a.task_id, a.model_id, a.language, a.variant, a.template_id, a.entity_id) <
           std::tie(b.task_id, b.model_id, b.language, b.variant, b.template_id, b.entity_id);
  });
  for (const auto& r : rows) write_bias_row(out, r);
}

}  // namespace

std::string_view to_string(ExportKind k) {
  switch (k) {
    case ExportKind::kObservations: return "observations";
    case ExportKind::kBias: return "bias";
    case ExportKind::kPerformance: return "performance";
    case ExportKind::kSimilarity: return "similarity";
    case ExportKind::kAlignment: return "alignment";
    case ExportKind::kSummary: return "summary";
  }
  return "observations";
}

ExportKind parse_export_kind(std::string_view s) {
  for (ExportKind k : {ExportKind::kObservations, ExportKind::kBias, ExportKind::kPerformance,
                       ExportKind::kSimilarity, ExportKind::kAlignment, ExportKind::kSummary}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::kInvalidInput, "unknown export kind '" + std::string(s) + "'");
}

void write_bias_records(std::ostream& out, const BiasComputation& bias, bool include_context) {
  out << "scope\tpooled\tentity_id\ttask_id\tmodel_id\tlanguage\tvariant\ttemplate_id\tvalue\t"
         "support\n";
  if (include_context) write_sorted(out, bias.context);
  write_sorted(out, bias.task);
  write_sorted(out, bias.global);
  std::set<std::tuple<std::string, std::string, std::string>> cells;
  for (const auto& r : bias.global) cells.insert({r.model_id, r.language, r.variant});
  if (cells.size() > 1) {
    write_sorted(out, bias.task_pooled);
    write_sorted(out, bias.global_pooled);
  }
}

std::vector<BiasRecord> read_bias_records(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || !line.starts_with("scope\t")) {
    throw Error(ErrorCode::kInvalidInput, "bias export: missing header");
  }
  std::vector<BiasRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::vector<std::string> f = split(line, '\t');
    if (f.size() != 10) {
      throw Error(ErrorCode::kInvalidInput,
                  "bias export line " + std::to_string(line_no) + ": expected 10 columns");
    }
    BiasRecord r;
    r.scope = parse_bias_scope(f[0]);
    r.pooled = f[1] == "1";
    r.entity_id = f[2];
    r.task_id = f[3];
    r.model_id = f[4];
    r.language = f[5];
    r.variant = f[6];
    r.template_id = f[7] == "-" ? std::string() : f[7];
    try {
      r.value = std::stod(f[8]);
      r.support = std::stoull(f[9]);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidInput,
                  "bias export line " + std::to_string(line_no) + ": bad number");
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_performance(std::ostream& out, std::span<const PerformanceRecord> records,
                       std::span<const GroupField> fields) {
  for (GroupField f : fields) out << to_string(f) << '\t';
  out << "macro_f1\tsupport\n";
  for (const auto& r : records) {
    for (GroupField f : fields) {
      const auto it = r.grouping.find(std::string(to_string(f)));
      out << (it == r.grouping.end() ? std::string("-") : it->second) << '\t';
    }
    out << format_double(r.macro_f1) << '\t' << r.support << '\n';
  }
}

void write_top_pairs(std::ostream& out, std::span<const SimilarPair> pairs) {
  out << "rank\tentity_a\tentity_b\tsimilarity\tgroup_a\tgroup_b\n";
  std::size_t rank = 0;
  for (const auto& p : pairs) {
    out << ++rank << '\t' << p.a << '\t' << p.b << '\t' << format_double(p.similarity) << '\t'
        << (p.group_a.empty() ? "-" : p.group_a) << '\t' << (p.group_b.empty() ? "-" : p.group_b)
        << '\n';
  }
}

void write_summary(std::ostream& out, const EntityRegistry& registry, const Taxonomy& taxonomy,
                   std::span<const BiasRecord> global_pooled) {
  out << "section\tkey\tgroup\tvalue\tcount\n";
  for (const auto& [key, _] : taxonomy.keys) {
    const RegistrySummary s = summarize(registry, key, taxonomy);
    for (const auto& [group, n] : s.counts) {
      out << "registry\t" << key << '\t' << group << '\t' << n << '\t' << n << '\n';
    }
  }
  if (global_pooled.empty()) return;
  for (const auto& [key, _] : taxonomy.keys) {
    for (const auto& g :
         group_aggregate(global_pooled, registry, taxonomy, key, GroupStatistic::kMean)) {
      out << "bias_mean\t" << key << '\t' << g.group << '\t' << format_double(g.value) << '\t'
          << g.count << '\n';
    }
    for (const auto& g :
         group_aggregate(global_pooled, registry, taxonomy, key, GroupStatistic::kMagnitude)) {
      out << "bias_magnitude\t" << key << '\t' << g.group << '\t' << format_double(g.value)
          << '\t' << g.count << '\n';
    }
  }
}

void write_plan(std::ostream& out, const RunManifest& manifest) {
  out << "level\tname\tplanned\n";
  for (const auto& [domain, n] : manifest.counts.by_domain) {
    out << "domain\t" << domain << '\t' << n << '\n';
  }
  for (const auto& [task, n] : manifest.counts.by_task) {
    out << "task\t" << task << '\t' << n << '\n';
  }
  out << "total\t*\t" << manifest.counts.total << '\n';
}

void write_coverage(std::ostream& out, const CompletionReport& report) {
  out << "task_id\tmodel_id\tlanguage\tvariant\tplanned\tok\tfailed\tcoverage\n";
  for (const auto& c : report.coverage) {
    out << c.config.task_id << '\t' << c.config.model_id << '\t' << c.config.language << '\t'
        << c.config.variant.name() << '\t' << c.planned << '\t' << c.ok << '\t' << c.failed
        << '\t' << format_double(c.coverage()) << '\n';
  }
}

void write_test_results(std::ostream& out,
                        std::span<const std::pair<std::string, TestResult>> results) {
  out << "name\ttest\tstatistic\tp_value\tn1\tn2\tmethod\teffect_size\tband\n";
  for (const auto& [name, r] : results) {
    out << name << '\t' << r.test << '\t' << format_double(r.statistic) << '\t'
        << format_double(r.p_value) << '\t' << r.n1 << '\t' << r.n2 << '\t'
        << (r.method == TestMethod::kExact ? "exact" : "normal") << '\t'
        << (r.effect_size ? format_double(*r.effect_size) : std::string("NA")) << '\t'
        << (r.band ? std::string(to_string(*r.band)) : std::string("NA")) << '\n';
  }
}

}  // namespace entbias
