#include "entbias/mock.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "entbias/error.hpp"

namespace entbias {

double BiasProfile::beta_of(const std::string& entity_id) const {
  auto it = beta.find(entity_id);
  return it == beta.end() ? 0.0 : it->second;
}

BiasProfile BiasProfile::from_json(const Json& j) {
  BiasProfile p;
  p.fidelity = j.value("fidelity", p.fidelity);
  p.noise_seed = j.value("noise_seed", p.noise_seed);
  p.noise_sd = j.value("noise_sd", p.noise_sd);
  p.failure_rate = j.value("failure_rate", p.failure_rate);
  if (j.contains("beta")) p.beta = j.at("beta").get<std::map<std::string, double>>();
  if (j.contains("noise_group")) {
    p.noise_group = j.at("noise_group").get<std::map<std::string, std::string>>();
  }
  if (!(p.fidelity > 0.0)) throw Error(ErrorCode::kInvalidInput, "mock fidelity must be > 0");
  return p;
}

Json BiasProfile::to_json() const {
  return Json{{"beta", beta},         {"fidelity", fidelity},
              {"noise_seed", noise_seed}, {"noise_sd", noise_sd},
              {"noise_group", noise_group}, {"failure_rate", failure_rate}};
}

std::vector<double> standardized_weights(const std::vector<double>& weights) {
  const double n = static_cast<double>(weights.size());
  const double mean = std::accumulate(weights.begin(), weights.end(), 0.0) / n;
  double var = 0.0;
  for (double w : weights) var += (w - mean) * (w - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out(weights.size(), 0.0);
  if (sd < 1e-12) return out;
  for (std::size_t i = 0; i < weights.size(); ++i) out[i] = (weights[i] - mean) / sd;
  return out;
}

TokenLogprobs mock_query(const BiasProfile& profile, const std::string& entity_id,
                         const Template& tmpl, const LabelSchema& schema, PromptVariant variant,
                         const std::string& language) {
  const std::string cell = tmpl.id + "|" + schema.task_id + "|" + language + "|" + variant.name();

  if (profile.failure_rate > 0.0) {
    const std::uint64_t h = stable_hash(entity_id + "|" + cell, profile.noise_seed ^ 0xfa11ULL);
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    if (u < profile.failure_rate) return TokenLogprobs::failed("injected");
  }

  const auto intended = schema.index_of(tmpl.intended_label);
  const std::vector<double> wt = standardized_weights(schema.weights());
  const double beta = profile.beta_of(entity_id);
  auto group = profile.noise_group.find(entity_id);
  const std::string& noise_key = group == profile.noise_group.end() ? entity_id : group->second;

  std::vector<double> logits(schema.size());
  for (std::size_t l = 0; l < schema.size(); ++l) {
    logits[l] = beta * wt[l];
    if (intended && *intended == l) logits[l] += profile.fidelity;
    if (profile.noise_sd > 0.0) {
      const std::uint64_t key =
          stable_hash(noise_key + "|" + cell + "|" + std::to_string(l), profile.noise_seed);
      logits[l] += profile.noise_sd * keyed_normal(key);
    }
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double log_z = mx + std::log(z);

  const std::vector<std::string> answers = expected_answers(schema, language, variant.label_format);
  TokenLogprobs out;
  out.ok = true;
  for (std::size_t l = 0; l < schema.size(); ++l) {
    const std::string t = trim(answers[l]);
    out.candidates.push_back({t.substr(0, t.find_first_of(" \t")), logits[l] - log_z});
  }
  std::stable_sort(out.candidates.begin(), out.candidates.end(),
                   [](const TokenCandidate& a, const TokenCandidate& b) {
                     return a.logprob > b.logprob;
                   });
  return out;
}

TokenLogprobs MockBackend::query(const CompletionRequest& request) {
  const QueryMetadata& m = request.metadata;
  const LabelSchema* schema = schemas_.find(m.task_id);
  const Template* tmpl = corpus_.find(m.template_id);
  if (schema == nullptr || tmpl == nullptr) return TokenLogprobs::failed("protocol");
  return mock_query(profile_, m.entity_id, *tmpl, *schema, m.variant, m.language);
}

}  // namespace entbias
