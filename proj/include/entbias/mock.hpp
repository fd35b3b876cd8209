#pragma once

// Deterministic stand-in for a logprob endpoint with a planted entity bias.
//
//   logit(l) = fidelity * [l == intended] + beta(e) * w~(l) + noise(l)
//
// where w~ is the label weight vector standardized to zero mean and unit
// population variance. Raising beta(e) tilts the posterior toward high-weight
// labels, so the recovered bias score grows with it.

#include <cstdint>
#include <map>
#include <string>

#include "entbias/gateway.hpp"

namespace entbias {

struct BiasProfile {
  std::map<std::string, double> beta;  // entity id -> shift; absent means 0
  double fidelity = 5.0;
  std::uint64_t noise_seed = 0;
  double noise_sd = 0.0;
  // Entities mapped to the same group draw identical logit noise, which plants
  // correlated output patterns.
  std::map<std::string, std::string> noise_group;
  // Fraction of observation keys answered with a failure.
  double failure_rate = 0.0;

  double beta_of(const std::string& entity_id) const;
  static BiasProfile from_json(const Json& j);
  Json to_json() const;
};

/// Standardized weights (population sd). All zeros when the weights are constant.
std::vector<double> standardized_weights(const std::vector<double>& weights);

TokenLogprobs mock_query(const BiasProfile& profile, const std::string& entity_id,
                         const Template& tmpl, const LabelSchema& schema, PromptVariant variant,
                         const std::string& language);

class MockBackend final : public Backend {
 public:
  MockBackend(const SchemaSet& schemas, const TemplateCorpus& corpus, BiasProfile profile)
      : schemas_(schemas), corpus_(corpus), profile_(std::move(profile)) {}

  TokenLogprobs query(const CompletionRequest& request) override;
  const BiasProfile& profile() const { return profile_; }

 private:
  const SchemaSet& schemas_;
  const TemplateCorpus& corpus_;
  BiasProfile profile_;
};

}  // namespace entbias
