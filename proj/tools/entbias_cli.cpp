// entbias: command-line front end for the auditing engine.

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "entbias/alignment.hpp"
#include "entbias/config.hpp"
#include "entbias/error.hpp"
#include "entbias/export.hpp"
#include "entbias/http.hpp"
#include "entbias/log.hpp"
#include "entbias/mock.hpp"
#include "entbias/runner.hpp"
#include "entbias/scoring.hpp"
#include "entbias/similarity.hpp"
#include "entbias/stats.hpp"
#include "entbias/store.hpp"
#include "entbias/synthgen.hpp"

namespace fs = std::filesystem;
using namespace entbias;

namespace {

std::atomic<bool> g_cancel{false};

void on_signal(int) { g_cancel.store(true); }

// Writes to `path`, or stdout when it is empty or "-".
void with_output(const std::string& path, const std::function<void(std::ostream&)>& fn) {
  if (path.empty() || path == "-") {
    fn(std::cout);
    return;
  }
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  fn(out);
}

// A JSON value given inline or as a path (relative to `base`) to a JSON file.
Json inline_or_file(const Json& v, const fs::path& base) {
  if (!v.is_string()) return v;
  fs::path p(v.get<std::string>());
  return read_json_file(p.is_absolute() ? p : base / p);
}

RunManifest load_or_plan(const AuditConfig& cfg, const AuditData& data, bool replan) {
  if (!replan && fs::exists(cfg.manifest)) return RunManifest::from_json(read_json_file(cfg.manifest));
  RunManifest m = plan_run(data.registry, data.corpus, data.schemas, cfg.matrix);
  with_output(cfg.manifest.string(), [&](std::ostream& out) { out << m.to_json().dump(2) << '\n'; });
  return m;
}

std::unique_ptr<Backend> make_backend(const AuditConfig& cfg, const AuditData& data, bool mock) {
  if (mock) {
    if (!cfg.mock) throw Error(ErrorCode::kInvalidInput, "--mock needs a \"mock\" section in the config");
    return std::make_unique<MockBackend>(data.schemas, data.corpus, *cfg.mock);
  }
  if (!cfg.endpoint) throw Error(ErrorCode::kInvalidInput, "config has no \"endpoint\" section");
  return std::make_unique<HttpBackend>(EndpointConfig::from_json(*cfg.endpoint));
}

BiasComputation score_store(const AuditConfig& cfg, const AuditData& data, bool keep_context) {
  const std::vector<Observation> obs = ObservationStore::read(cfg.store);
  ScoringOptions opts;
  opts.keep_context_records = keep_context;
  BiasComputation bias = compute_bias(obs, data.corpus, data.schemas, opts);
  for (const auto& w : bias.warnings) log::warn(w);
  return bias;
}

std::vector<GroupField> parse_fields(const std::string& csv) {
  std::vector<GroupField> out;
  for (const auto& f : split(csv, ',')) {
    if (!trim(f).empty()) out.push_back(parse_group_field(trim(f)));
  }
  return out;
}

int cmd_registry_validate(const std::string& config_path) {
  const AuditConfig cfg = AuditConfig::load(config_path);
  const AuditData data = load_audit_data(cfg);
  std::cout << "entities\t" << data.registry.size() << "\n";
  std::cout << "schemas\t" << data.schemas.size() << "\n";
  std::cout << "templates\t" << data.corpus.size() << "\n";
  std::cout << "multi_placeholder_templates\t" << data.balance.multi_placeholder_templates << "\n\n";
  std::cout << "key\tgroup\tcount\n";
  for (const auto& [key, _] : data.taxonomy.keys) {
    const RegistrySummary s = summarize(data.registry, key, data.taxonomy);
    for (const auto& [group, n] : s.counts) std::cout << key << '\t' << group << '\t' << n << '\n';
  }
  std::cout << "\ntask_id\tlanguage\tlabel_id\tcount\n";
  for (const auto& c : data.balance.cells) {
    std::cout << c.task_id << '\t' << c.language << '\t' << c.label_id << '\t' << c.count << '\n';
  }
  std::cout << "\ntask_id\tlanguage\tmax_min_ratio\twarning\n";
  for (const auto& g : data.balance.groups) {
    std::cout << g.task_id << '\t' << g.language << '\t' << format_double(g.max_min_ratio) << '\t'
              << (g.warning ? "yes" : "no") << '\n';
  }
  for (const auto& w : data.balance.warnings) log::warn(w);
  return 0;
}

int cmd_synth_generate(const std::string& config_path, const std::string& out_path, bool mock) {
  const fs::path base = fs::path(config_path).parent_path();
  const Json j = read_json_file(config_path);
  SchemaSet schemas;
  {
    std::ifstream in(base / j.at("schemas").get<std::string>());
    if (!in) throw Error(ErrorCode::kIo, "cannot read schemas");
    schemas = load_label_schemas(in);
  }
  const std::string task_id = j.at("task_id").get<std::string>();
  const LabelSchema& schema = schemas.at(task_id);
  const KeywordVocabulary vocab = KeywordVocabulary::from_json(inline_or_file(j.at("vocabulary"), base));
  const GenerationBrief brief = GenerationBrief::from_json(inline_or_file(j.at("brief"), base));
  std::vector<GenerationExample> examples;
  for (const auto& e : inline_or_file(j.at("examples"), base)) {
    examples.push_back({e.at("keywords").get<std::vector<std::string>>(),
                        e.at("label_id").get<std::string>(), e.at("output").get<std::string>()});
  }
  std::vector<std::string> deny;
  if (j.contains("deny_list")) {
    const Json& d = j.at("deny_list");
    std::ifstream tin(base / d.at("taxonomy").get<std::string>());
    std::ifstream ein(base / d.at("entities").get<std::string>());
    if (!tin || !ein) throw Error(ErrorCode::kIo, "cannot read deny-list registry");
    const Taxonomy taxonomy = Taxonomy::load(tin);
    const std::vector<std::string> langs = d.value("languages", std::vector<std::string>{});
    deny = entity_deny_list(load_entities(ein, taxonomy, langs));
  }
  GenerationOptions opts;
  opts.total = j.at("total").get<std::size_t>();
  opts.seed = j.value("seed", std::uint64_t{0});
  opts.language = j.value("language", opts.language);
  opts.id_prefix = j.value("id_prefix", std::string());

  std::unique_ptr<ChatClient> client;
  if (mock) {
    client = std::make_unique<MockChatClient>();
  } else {
    client = std::make_unique<HttpChatClient>(EndpointConfig::from_json(j.at("endpoint")),
                                              j.at("model").get<std::string>());
  }
  const GeneratedCorpus corpus =
      generate_corpus(*client, vocab, schema, brief, examples, deny, opts);
  with_output(out_path, [&](std::ostream& out) {
    for (const auto& t : corpus.templates) out << t.to_json().dump() << '\n';
  });
  std::cerr << "generated " << corpus.templates.size() << " templates: " << corpus.stats.requests
            << " requests, " << corpus.stats.rejected << " rejected, "
            << corpus.stats.endpoint_failures << " endpoint failures, " << corpus.stats.reseeds
            << " re-seeds\n";
  for (const auto& [reason, n] : corpus.stats.reject_reasons) {
    std::cerr << "  rejected (" << reason << "): " << n << '\n';
  }
  return 0;
}

int cmd_plan(const std::string& config_path, const std::string& factors_path,
             const std::string& out_path) {
  if (!factors_path.empty()) {
    const PlanCounts c = PlanFactors::from_json(read_json_file(factors_path)).counts();
    with_output(out_path, [&](std::ostream& out) {
      out << "level\tname\tplanned\n";
      for (const auto& [d, n] : c.by_domain) out << "domain\t" << d << '\t' << n << '\n';
      for (const auto& [t, n] : c.by_task) out << "task\t" << t << '\t' << n << '\n';
      out << "total\t*\t" << c.total << '\n';
    });
    return 0;
  }
  const AuditConfig cfg = AuditConfig::load(config_path);
  const AuditData data = load_audit_data(cfg);
  const RunManifest m = load_or_plan(cfg, data, true);
  std::cerr << "manifest " << m.id << " written to " << cfg.manifest.string() << '\n';
  with_output(out_path, [&](std::ostream& out) { write_plan(out, m); });
  return 0;
}

int cmd_run(const std::string& config_path, bool mock, int concurrency, std::size_t stop_after,
            bool compact, const std::string& coverage_path) {
  const AuditConfig cfg = AuditConfig::load(config_path);
  const AuditData data = load_audit_data(cfg);
  const RunManifest manifest = load_or_plan(cfg, data, false);
  std::unique_ptr<Backend> backend = make_backend(cfg, data, mock);
  ObservationStore store(cfg.store);
  ExecuteOptions opts;
  opts.concurrency = concurrency > 0 ? static_cast<unsigned>(concurrency) : cfg.concurrency;
  if (stop_after > 0) opts.stop_after = stop_after;
  opts.few_shot = &data.few_shot;
  opts.cancel = &g_cancel;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const CompletionReport r = execute(manifest, data.registry, data.corpus, data.schemas, *backend,
                                     store, opts);
  if (compact) store.compact();
  std::cerr << "planned " << r.planned << ", pending " << r.pending << ", committed "
            << r.committed << " (" << r.committed_ok << " ok, " << r.committed_failed
            << " failed)" << (r.interrupted ? ", incomplete" : "") << '\n';
  for (std::size_t i = 0; i < r.failed_keys.size() && i < 20; ++i) {
    std::cerr << "  failed: " << r.failed_keys[i] << '\n';
  }
  if (r.failed_keys.size() > 20) std::cerr << "  ... " << r.failed_keys.size() - 20 << " more\n";
  with_output(coverage_path, [&](std::ostream& out) { write_coverage(out, r); });
  return r.interrupted ? 2 : 0;
}

int cmd_score(const std::string& config_path, const std::string& out_path, bool context,
              const std::string& perf_path, const std::string& fields) {
  const AuditConfig cfg = AuditConfig::load(config_path);
  const AuditData data = load_audit_data(cfg);
  const BiasComputation bias = score_store(cfg, data, context);
  with_output(out_path, [&](std::ostream& out) { write_bias_records(out, bias, context); });
  if (!perf_path.empty()) {
    const std::vector<Observation> obs = ObservationStore::read(cfg.store);
    const std::vector<GroupField> f = parse_fields(fields);
    const auto perf = macro_f1_grouped(obs, data.corpus, f);
    with_output(perf_path, [&](std::ostream& out) { write_performance(out, perf, f); });
  }
  return 0;
}

int cmd_stats_compare(const std::string& config_path, const std::string& spec_path,
                      const std::string& bias_path, const std::string& out_path) {
  const AuditConfig cfg = AuditConfig::load(config_path);
  const AuditData data = load_audit_data(cfg);
  std::ifstream in(bias_path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + bias_path);
  const std::vector<BiasRecord> records = read_bias_records(in);
  const Json spec = read_json_file(spec_path);
  std::vector<std::pair<std::string, TestResult>> results;
  const Json list = spec.is_array() ? spec : spec.value("comparisons", Json::array({spec}));
  for (const auto& c : list) {
    const ComparisonSpec cs = ComparisonSpec::from_json(c);
    results.emplace_back(cs.name, compare(records, cs, data.registry));
  }
  log::info("ran " + std::to_string(results.size()) + " comparisons; p-values are uncorrected");
  with_output(out_path, [&](std::ostream& out) { write_test_results(out, results); });
  return 0;
}

int cmd_similarity(const std::string& config_path, const ConfigFilter& filter, bool delta,
                   const std::string& out_path, const std::string& distance_path, std::size_t top,
                   const std::string& group_key, const std::string& pairs_path) {
  const AuditConfig cfg = AuditConfig::load(config_path);
  const AuditData data = load_audit_data(cfg);
  const std::vector<Observation> obs = ObservationStore::read(cfg.store);
  std::vector<SimilarityMatrix> per_config;
  for (const RunConfig& c : configs_in(obs)) {
    if (!filter.matches(c)) continue;
    const VectorSet vs = build_vectors(obs, c, data.corpus, data.schemas,
                                       delta ? VectorValue::kContextBias : VectorValue::kRawScore);
    per_config.push_back(similarity_matrix(vs));
  }
  const SimilarityMatrix s = aggregate_similarity(per_config, filter);
  with_output(out_path, [&](std::ostream& out) { write_matrix(out, s); });
  if (!distance_path.empty()) {
    with_output(distance_path, [&](std::ostream& out) { write_matrix(out, distance(s)); });
  }
  if (top > 0) {
    const auto pairs = top_pairs(s, top, &data.registry, group_key);
    with_output(pairs_path, [&](std::ostream& out) { write_top_pairs(out, pairs); });
  }
  return 0;
}

std::vector<AlignmentReport> run_alignment(const AuditConfig& cfg, const AuditData& data,
                                           const std::string& benchmark_id,
                                           const std::string& task_id) {
  const std::vector<Observation> obs = ObservationStore::read(cfg.store);
  const auto [real, synthetic] = split_by_origin(obs, data.corpus);
  const BiasComputation br = compute_bias(real, data.corpus, data.schemas);
  const BiasComputation bs = compute_bias(synthetic, data.corpus, data.schemas);
  return align(br, bs, {benchmark_id, task_id, kMinAlignmentSupport});
}

int cmd_align(const std::string& config_path, const std::string& benchmark_id,
              const std::string& task_id, const std::string& out_path,
              const std::string& grid_path) {
  const AuditConfig cfg = AuditConfig::load(config_path);
  const AuditData data = load_audit_data(cfg);
  const auto reports = run_alignment(cfg, data, benchmark_id, task_id);
  with_output(out_path, [&](std::ostream& out) { write_alignment_reports(out, reports); });
  if (!grid_path.empty()) {
    with_output(grid_path, [&](std::ostream& out) { write_alignment_grid(out, reports); });
  }
  return 0;
}

int cmd_export(const std::string& config_path, const std::string& kind_name,
               const std::string& out_path, const std::string& benchmark_id,
               const std::string& task_id, const std::string& fields) {
  const ExportKind kind = parse_export_kind(kind_name);
  const AuditConfig cfg = AuditConfig::load(config_path);
  const AuditData data = load_audit_data(cfg);
  switch (kind) {
    case ExportKind::kObservations:
      with_output(out_path, [&](std::ostream& out) {
        write_observation_snapshot(out, ObservationStore::read(cfg.store));
      });
      break;
    case ExportKind::kBias: {
      const BiasComputation bias = score_store(cfg, data, false);
      with_output(out_path, [&](std::ostream& out) { write_bias_records(out, bias); });
      break;
    }
    case ExportKind::kPerformance: {
      const std::vector<Observation> obs = ObservationStore::read(cfg.store);
      const std::vector<GroupField> f = parse_fields(fields);
      const auto perf = macro_f1_grouped(obs, data.corpus, f);
      with_output(out_path, [&](std::ostream& out) { write_performance(out, perf, f); });
      break;
    }
    case ExportKind::kSimilarity:
      return cmd_similarity(config_path, {}, false, out_path, {}, 0, {}, {});
    case ExportKind::kAlignment: {
      const auto reports = run_alignment(cfg, data, benchmark_id, task_id);
      with_output(out_path, [&](std::ostream& out) { write_alignment_reports(out, reports); });
      break;
    }
    case ExportKind::kSummary: {
      std::vector<BiasRecord> pooled;
      if (fs::exists(cfg.store)) pooled = score_store(cfg, data, false).global_pooled;
      with_output(out_path, [&](std::ostream& out) {
        write_summary(out, data.registry, data.taxonomy, pooled);
      });
      break;
    }
  }
  return 0;
}

int cmd_mock_serve(const std::string& config_path, const std::string& host, int port) {
  const AuditConfig cfg = AuditConfig::load(config_path);
  const AuditData data = load_audit_data(cfg);
  std::unique_ptr<Backend> backend = make_backend(cfg, data, true);
  MockServer server(*backend);
  std::cerr << "mock endpoint on http://" << host << ":" << port << "/v1/completions\n";
  server.serve_forever(host, port);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"entbias: entity-bias auditing engine"};
  app.require_subcommand(1);
  std::string config = "audit.json";
  std::string out;

  auto* registry = app.add_subcommand("registry", "Registry tools");
  registry->require_subcommand(1);
  auto* validate = registry->add_subcommand("validate", "Load and check all inputs; print summaries");
  validate->add_option("-c,--config", config, "Audit config file")->required();

  auto* synth = app.add_subcommand("synth", "Synthetic template generation");
  synth->require_subcommand(1);
  auto* generate = synth->add_subcommand("generate", "Generate a balanced template corpus");
  std::string synth_config;
  bool synth_mock = false;
  generate->add_option("-c,--config", synth_config, "Generation config file")->required();
  generate->add_option("-o,--out", out, "Output template file (JSONL)");
  generate->add_flag("--mock", synth_mock, "Use the offline mock generator");

  auto* plan = app.add_subcommand("plan", "Plan a run and write its manifest");
  std::string factors;
  plan->add_option("-c,--config", config, "Audit config file");
  plan->add_option("--factors", factors, "Count from declared factors instead of loaded data");
  plan->add_option("-o,--out", out, "Plan table output");

  auto* run = app.add_subcommand("run", "Execute (or resume) the planned run");
  bool run_mock = false;
  bool compact = false;
  int concurrency = 0;
  std::size_t stop_after = 0;
  run->add_option("-c,--config", config, "Audit config file")->required();
  run->add_flag("--mock", run_mock, "Use the config's mock bias profile as backend");
  run->add_option("-j,--concurrency", concurrency, "In-flight requests (default from config)");
  run->add_option("--stop-after", stop_after, "Stop after committing this many records");
  run->add_flag("--compact", compact, "Compact the store afterwards");
  run->add_option("-o,--out", out, "Coverage report output");

  auto* score = app.add_subcommand("score", "Compute bias scores from the store");
  bool context = false;
  std::string perf_out;
  std::string fields = "task,model,language,variant";
  score->add_option("-c,--config", config, "Audit config file")->required();
  score->add_option("-o,--out", out, "Bias export");
  score->add_flag("--context", context, "Include per-context rows");
  score->add_option("--performance", perf_out, "Also write macro-F1 per group");
  score->add_option("--group", fields, "Grouping fields for macro-F1");

  auto* stats = app.add_subcommand("stats", "Statistical tests");
  stats->require_subcommand(1);
  auto* cmp = stats->add_subcommand("compare", "Run entity-level comparisons");
  std::string spec_path, bias_path;
  cmp->add_option("-c,--config", config, "Audit config file")->required();
  cmp->add_option("-s,--spec", spec_path, "Comparison spec (JSON)")->required();
  cmp->add_option("-b,--bias", bias_path, "Bias export")->required();
  cmp->add_option("-o,--out", out, "Test result output");

  auto* sim = app.add_subcommand("similarity", "Entity similarity matrices");
  ConfigFilter filter;
  bool delta = false;
  std::string distance_out, pairs_out, group_key;
  std::size_t top = 0;
  sim->add_option("-c,--config", config, "Audit config file")->required();
  sim->add_option("--task", filter.task_id, "Restrict to a task");
  sim->add_option("--model", filter.model_id, "Restrict to a model");
  sim->add_option("--language", filter.language, "Restrict to a language");
  sim->add_option("--variant", filter.variant, "Restrict to a prompt variant");
  sim->add_flag("--delta", delta, "Use context bias instead of raw scores");
  sim->add_option("-o,--out", out, "Aggregated similarity matrix");
  sim->add_option("--distance", distance_out, "Distance matrix output");
  sim->add_option("--top", top, "Report the k most similar pairs");
  sim->add_option("--group-key", group_key, "Taxonomy key to annotate pairs with");
  sim->add_option("--pairs", pairs_out, "Top pair output");

  auto* al = app.add_subcommand("align", "Synthetic versus real alignment");
  std::string benchmark_id, task_id, grid_out;
  al->add_option("-c,--config", config, "Audit config file")->required();
  al->add_option("--benchmark", benchmark_id, "Benchmark id for the report")->required();
  al->add_option("--task", task_id, "Task scored on both corpora")->required();
  al->add_option("-o,--out", out, "Report output");
  al->add_option("--grid", grid_out, "Model x language grid output");

  auto* exp = app.add_subcommand("export", "Write one export kind");
  std::string kind;
  exp->add_option("-c,--config", config, "Audit config file")->required();
  exp->add_option("-k,--kind", kind,
                  "observations | bias | performance | similarity | alignment | summary")
      ->required();
  exp->add_option("-o,--out", out, "Output file");
  exp->add_option("--benchmark", benchmark_id, "Alignment benchmark id");
  exp->add_option("--task", task_id, "Alignment task");
  exp->add_option("--group", fields, "Grouping fields for performance");

  auto* serve = app.add_subcommand("mock-serve", "Serve the mock backend over HTTP");
  std::string host = "127.0.0.1";
  int port = 8089;
  serve->add_option("-c,--config", config, "Audit config file")->required();
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");

  CLI11_PARSE(app, argc, argv);

  try {
    if (validate->parsed()) return cmd_registry_validate(config);
    if (generate->parsed()) return cmd_synth_generate(synth_config, out, synth_mock);
    if (plan->parsed()) return cmd_plan(config, factors, out);
    if (run->parsed()) return cmd_run(config, run_mock, concurrency, stop_after, compact, out);
    if (score->parsed()) return cmd_score(config, out, context, perf_out, fields);
    if (cmp->parsed()) return cmd_stats_compare(config, spec_path, bias_path, out);
    if (sim->parsed()) {
      return cmd_similarity(config, filter, delta, out, distance_out, top, group_key, pairs_out);
    }
    if (al->parsed()) return cmd_align(config, benchmark_id, task_id, out, grid_out);
    if (exp->parsed()) return cmd_export(config, kind, out, benchmark_id, task_id, fields);
    if (serve->parsed()) return cmd_mock_serve(config, host, port);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
