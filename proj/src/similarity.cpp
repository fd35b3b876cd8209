#include "entbias/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <thread>

#include "entbias/error.hpp"
#include "entbias/log.hpp"

namespace entbias {

std::vector<RunConfig> configs_in(std::span<const Observation> observations) {
  std::set<RunConfig> configs;
  for (const auto& o : observations) configs.insert(o.config);
  return {configs.begin(), configs.end()};
}

VectorSet build_vectors(std::span<const Observation> observations, const RunConfig& config,
                        const TemplateCorpus& corpus, const SchemaSet& schemas, VectorValue value,
                        double min_coverage) {
  const std::vector<const Template*> templates = corpus.select(config.task_id, config.language);
  std::map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < templates.size(); ++i) position.emplace(templates[i]->id, i);

  const std::vector<double> weights = schemas.at(config.task_id).weights();
  std::map<std::string, std::map<std::size_t, double>> scores;
  std::set<std::string> entities;
  bool seen = false;
  for (const auto& o : observations) {
    if (o.config != config) continue;
    seen = true;
    entities.insert(o.entity_id);
    if (!o.ok) continue;
    const auto it = position.find(o.template_id);
    if (it == position.end()) continue;
    scores[o.entity_id][it->second] = raw_score(o.posterior, weights);
  }
  if (!seen) throw Error(ErrorCode::kNotFound, "no observations for config " + config.key());

  if (value == VectorValue::kContextBias) {
    for (std::size_t t = 0; t < templates.size(); ++t) {
      std::map<std::string, double> ctx;
      for (const auto& [e, row] : scores) {
        if (auto it = row.find(t); it != row.end()) ctx.emplace(e, it->second);
      }
      if (ctx.size() < 2) {
        for (const auto& [e, _] : ctx) scores[e].erase(t);
        continue;
      }
      for (const auto& [e, d] : normalize_context(ctx)) scores[e][t] = d;
    }
  }

  VectorSet out;
  out.config = config;
  for (const Template* t : templates) out.template_ids.push_back(t->id);
  const double n = static_cast<double>(templates.size());
  for (const std::string& e : entities) {
    const auto it = scores.find(e);
    const std::size_t have = it == scores.end() ? 0 : it->second.size();
    const double coverage = n > 0 ? static_cast<double>(have) / n : 0.0;
    if (have == 0 || coverage < min_coverage) {
      out.excluded.emplace_back(e, coverage);
      continue;
    }
    OutputVector v;
    v.entity_id = e;
    v.config = config;
    v.values.assign(templates.size(), 0.0);
    v.present.assign(templates.size(), false);
    for (const auto& [pos, s] : it->second) {
      v.values[pos] = s;
      v.present[pos] = true;
    }
    v.coverage = coverage;
    out.vectors.push_back(std::move(v));
  }
  if (!out.excluded.empty()) {
    log::warn(config.key() + ": excluded " + std::to_string(out.excluded.size()) +
              " entities below " + format_double(min_coverage) + " vector coverage");
  }
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kPrecondition, "cosine: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::kDegenerate, "cosine: zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double cosine_present(const OutputVector& a, const OutputVector& b) {
  if (a.values.size() != b.values.size()) {
    throw Error(ErrorCode::kPrecondition, "cosine: vectors from different template sets");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    if (!a.present[i] || !b.present[i]) continue;
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na == 0.0 || nb == 0.0) {
    throw Error(ErrorCode::kDegenerate,
                "cosine: zero vector for " + a.entity_id + " / " + b.entity_id);
  }
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::string_view to_string(MatrixKind k) {
  switch (k) {
    case MatrixKind::kPerConfig: return "per_config";
    case MatrixKind::kAggregated: return "aggregated";
    case MatrixKind::kDistance: return "distance";
  }
  return "per_config";
}

SimilarityMatrix similarity_matrix(const VectorSet& vectors, unsigned threads) {
  const std::size_t n = vectors.vectors.size();
  if (n > kMaxDenseEntities) {
    throw Error(ErrorCode::kPrecondition, "dense similarity limited to " +
                                              std::to_string(kMaxDenseEntities) +
                                              " entities; select a subset");
  }
  SimilarityMatrix m;
  m.kind = MatrixKind::kPerConfig;
  m.config = vectors.config;
  for (const auto& v : vectors.vectors) m.ids.push_back(v.entity_id);
  m.values.assign(n * n, 0.0);
  if (threads == 0) threads = std::max(1U, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));

  auto rows = [&](std::size_t worker) {
    for (std::size_t i = worker; i < n; i += threads) {
      m.at(i, i) = 1.0;
      for (std::size_t j = i + 1; j < n; ++j) {
        const double c = cosine_present(vectors.vectors[i], vectors.vectors[j]);
        m.at(i, j) = c;
        m.at(j, i) = c;
      }
    }
  };
  if (threads <= 1) {
    rows(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w) pool.emplace_back(rows, w);
  }
  return m;
}

bool ConfigFilter::matches(const RunConfig& c) const {
  return (task_id.empty() || task_id == c.task_id) &&
         (model_id.empty() || model_id == c.model_id) &&
         (language.empty() || language == c.language) &&
         (variant.empty() || variant == c.variant.name());
}

SimilarityMatrix aggregate_similarity(std::span<const SimilarityMatrix> per_config,
                                      const ConfigFilter& filter) {
  std::vector<const SimilarityMatrix*> chosen;
  for (const auto& m : per_config) {
    if (!m.config || filter.matches(*m.config)) chosen.push_back(&m);
  }
  if (chosen.empty()) throw Error(ErrorCode::kNotFound, "no similarity matrix matches the filter");
  // Summation order is fixed by config so the mean does not depend on input order.
  std::stable_sort(chosen.begin(), chosen.end(), [](const auto* a, const auto* b) {
    if (a->config && b->config) return *a->config < *b->config;
    return a->config.has_value() < b->config.has_value();
  });

  std::set<std::string> shared(chosen.front()->ids.begin(), chosen.front()->ids.end());
  std::set<std::string> all = shared;
  for (const auto* m : chosen) {
    std::set<std::string> ids(m->ids.begin(), m->ids.end());
    all.insert(ids.begin(), ids.end());
    std::set<std::string> keep;
    std::set_intersection(shared.begin(), shared.end(), ids.begin(), ids.end(),
                          std::inserter(keep, keep.end()));
    shared = std::move(keep);
  }
  if (shared.size() < all.size()) {
    log::info("aggregate similarity: " + std::to_string(all.size() - shared.size()) +
              " entities missing from some configurations were dropped");
  }

  SimilarityMatrix out;
  out.kind = MatrixKind::kAggregated;
  out.ids.assign(shared.begin(), shared.end());
  const std::size_t n = out.ids.size();
  out.values.assign(n * n, 0.0);
  for (const auto* m : chosen) {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < m->ids.size(); ++i) index.emplace(m->ids[i], i);
    std::vector<std::size_t> map_to(n);
    for (std::size_t i = 0; i < n; ++i) map_to[i] = index.at(out.ids[i]);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += m->at(map_to[i], map_to[j]);
    }
  }
  const double count = static_cast<double>(chosen.size());
  for (double& v : out.values) v /= count;
  for (std::size_t i = 0; i < n; ++i) out.at(i, i) = 1.0;
  return out;
}

SimilarityMatrix distance(const SimilarityMatrix& s) {
  SimilarityMatrix d = s;
  d.kind = MatrixKind::kDistance;
  for (double& v : d.values) v = 1.0 - v;
  for (std::size_t i = 0; i < d.size(); ++i) d.at(i, i) = 0.0;
  return d;
}

std::vector<SimilarPair> top_pairs(const SimilarityMatrix& s, std::size_t k,
                                   const EntityRegistry* registry, const std::string& group_key) {
  const std::size_t n = s.size();
  const std::size_t pairs = n < 2 ? 0 : n * (n - 1) / 2;
  if (k == 0) throw Error(ErrorCode::kInvalidInput, "top_pairs: k must be at least 1");
  if (k > pairs) {
    throw Error(ErrorCode::kInvalidInput, "top_pairs: k=" + std::to_string(k) + " exceeds " +
                                              std::to_string(pairs) + " pairs");
  }
  std::vector<SimilarPair> all;
  all.reserve(pairs);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool swap = s.ids[j] < s.ids[i];
      all.push_back({swap ? s.ids[j] : s.ids[i], swap ? s.ids[i] : s.ids[j], s.at(i, j), {}, {}});
    }
  }
  std::sort(all.begin(), all.end(), [](const SimilarPair& x, const SimilarPair& y) {
    if (x.similarity != y.similarity) return x.similarity > y.similarity;
    return std::tie(x.a, x.b) < std::tie(y.a, y.b);
  });
  all.resize(k);
  if (registry != nullptr && !group_key.empty()) {
    for (auto& p : all) {
      const Entity* a = registry->find(p.a);
      const Entity* b = registry->find(p.b);
      p.group_a = a ? a->tag(group_key) : std::string(kUnknownGroup);
      p.group_b = b ? b->tag(group_key) : std::string(kUnknownGroup);
    }
  }
  return all;
}

void write_matrix(std::ostream& out, const SimilarityMatrix& m) {
  out << "entity_id";
  for (const auto& id : m.ids) out << '\t' << id;
  out << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    out << m.ids[i];
    for (std::size_t j = 0; j < m.size(); ++j) out << '\t' << format_double(m.at(i, j));
    out << '\n';
  }
}

SimilarityMatrix read_matrix(std::istream& in, MatrixKind kind) {
  SimilarityMatrix m;
  m.kind = kind;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kInvalidInput, "matrix: missing header");
  std::vector<std::string> header = split(line, '\t');
  if (header.empty() || header.front() != "entity_id") {
    throw Error(ErrorCode::kInvalidInput, "matrix: header must start with entity_id");
  }
  m.ids.assign(header.begin() + 1, header.end());
  const std::size_t n = m.ids.size();
  m.values.reserve(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw Error(ErrorCode::kInvalidInput, "matrix: missing rows");
    const std::vector<std::string> cells = split(line, '\t');
    if (cells.size() != n + 1 || cells.front() != m.ids[i]) {
      throw Error(ErrorCode::kInvalidInput, "matrix: malformed row " + std::to_string(i + 1));
    }
    for (std::size_t j = 1; j <= n; ++j) m.values.push_back(std::stod(cells[j]));
  }
  return m;
}

}  // namespace entbias
