#pragma once

// Latent structure between entities: per-configuration output vectors of raw
// scores, their pairwise cosine similarity, the configuration-averaged
// similarity S and the distance D = 1 - S.

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "entbias/registry.hpp"
#include "entbias/scoring.hpp"

namespace entbias {

inline constexpr double kMinVectorCoverage = 0.8;
inline constexpr std::size_t kMaxDenseEntities = 2000;

enum class VectorValue { kRawScore, kContextBias };

struct OutputVector {
  std::string entity_id;
  RunConfig config;
  std::vector<double> values;  // canonical template order; 0 where missing
  std::vector<bool> present;
  double coverage = 0.0;
};

struct VectorSet {
  RunConfig config;
  std::vector<std::string> template_ids;
  std::vector<OutputVector> vectors;  // sorted by entity id
  std::vector<std::pair<std::string, double>> excluded;  // entity, coverage
};

/// Vectors for one configuration. Entities below `min_coverage` are excluded
/// and listed; missing entries of kept entities are not imputed.
VectorSet build_vectors(std::span<const Observation> observations, const RunConfig& config,
                        const TemplateCorpus& corpus, const SchemaSet& schemas,
                        VectorValue value = VectorValue::kRawScore,
                        double min_coverage = kMinVectorCoverage);

/// Configurations that have at least one observation, sorted.
std::vector<RunConfig> configs_in(std::span<const Observation> observations);

double cosine(std::span<const double> a, std::span<const double> b);

/// Cosine over the positions present in both vectors.
double cosine_present(const OutputVector& a, const OutputVector& b);

enum class MatrixKind { kPerConfig, kAggregated, kDistance };
std::string_view to_string(MatrixKind k);

struct SimilarityMatrix {
  MatrixKind kind = MatrixKind::kPerConfig;
  std::optional<RunConfig> config;
  std::vector<std::string> ids;
  std::vector<double> values;  // row-major, ids.size()^2

  std::size_t size() const { return ids.size(); }
  double at(std::size_t i, std::size_t j) const { return values[i * ids.size() + j]; }
  double& at(std::size_t i, std::size_t j) { return values[i * ids.size() + j]; }
};

/// Rows are split across `threads` workers (0 = hardware concurrency); each
/// entry is computed independently, so the result does not depend on it.
SimilarityMatrix similarity_matrix(const VectorSet& vectors, unsigned threads = 0);

struct ConfigFilter {
  std::string task_id;
  std::string model_id;
  std::string language;
  std::string variant;

  bool matches(const RunConfig& c) const;
};

/// Entrywise mean over the matrices passing `filter`, restricted to the
/// entities shared by all of them.
SimilarityMatrix aggregate_similarity(std::span<const SimilarityMatrix> per_config,
                                      const ConfigFilter& filter = {});

SimilarityMatrix distance(const SimilarityMatrix& s);

struct SimilarPair {
  std::string a;
  std::string b;
  double similarity = 0.0;
  std::string group_a;
  std::string group_b;
};

/// Top-k off-diagonal pairs, descending, ties by (id, id). Group annotations
/// come from `registry` tags when both are given.
std::vector<SimilarPair> top_pairs(const SimilarityMatrix& s, std::size_t k,
                                   const EntityRegistry* registry = nullptr,
                                   const std::string& group_key = {});

/// Header "entity_id<TAB>id1<TAB>id2..." then one row per entity.
void write_matrix(std::ostream& out, const SimilarityMatrix& m);
SimilarityMatrix read_matrix(std::istream& in, MatrixKind kind);

}  // namespace entbias
