#include "modcomp/composer.hpp"

#include <algorithm>

namespace modcomp {

std::string to_string(Weighting w) {
  return w == Weighting::kScored ? "scored" : "uniform-after-selection";
}
std::string to_string(Method m) { return m == Method::kAverage ? "average" : "ensemble"; }

Weighting weighting_from_string(const std::string& s) {
  if (s == "scored") return Weighting::kScored;
  if (s == "uniform-after-selection") return Weighting::kUniformAfterSelection;
  throw ConfigError("unknown weighting '" + s + "'");
}

Method method_from_string(const std::string& s) {
  if (s == "average") return Method::kAverage;
  if (s == "ensemble") return Method::kEnsemble;
  throw ConfigError("unknown combination method '" + s + "'");
}

void CompositionPlan::validate() const {
  static const std::vector<std::string> kStrategies = {"uniform", "sentsim", "tfidf", "prior",
                                                       "entropy"};
  if (std::find(kStrategies.begin(), kStrategies.end(), strategy) == kStrategies.end())
    throw ConfigError("plan: unknown strategy '" + strategy + "'");
  if (k < 0) throw ConfigError("plan: k must be >= 0");
  if (strategy == "uniform" && weighting == Weighting::kUniformAfterSelection)
    throw ConfigError("plan: uniform scores cannot drive top-k selection for uniform re-weighting");
}

std::vector<std::string> select_top_k(const ScoreVector& scores, int k) {
  const int n = static_cast<int>(scores.scores.size());
  if (k < 1 || k > n) throw ArgumentError("select_top_k: k out of range");
  std::vector<std::pair<std::string, double>> order = scores.scores;
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> out;
  for (int i = 0; i < k; ++i) out.push_back(order[i].first);
  return out;
}

int auto_k(const ScoreVector& scores, double threshold) {
  if (threshold <= 0.0) throw ArgumentError("auto_k: threshold must be positive");
  const int n = static_cast<int>(scores.scores.size());
  if (n == 0) throw ArgumentError("auto_k: empty score vector");
  WeightVector normalized = normalize(scores, scores.domain_ids());
  std::vector<double> w;
  for (const auto& [id, v] : normalized.weights) w.push_back(v);
  std::sort(w.begin(), w.end(), std::greater<double>());
  for (int i = 0; i + 1 < n; ++i) {
    if (w[i] - w[i + 1] > threshold) return i + 1;
  }
  return n;
}

AdapterModule average_params(const std::vector<const AdapterModule*>& adapters,
                             const WeightVector& weights) {
  if (adapters.empty()) throw ArgumentError("average_params: no adapters");
  weights.validate();
  if (weights.weights.size() != adapters.size())
    throw StructureError("average_params: weight count does not match adapters");
  for (std::size_t i = 1; i < adapters.size(); ++i)
    check_same_structure(adapters[0]->theta, adapters[i]->theta);

  AdapterModule out;
  out.domain_id = "merged";
  for (const auto& [name, t0] : adapters[0]->theta.entries) {
    Tensor acc = Tensor::zeros(t0.shape);
    for (std::size_t i = 0; i < adapters.size(); ++i) {
      const auto& [id, w] = weights.weights[i];
      if (id != adapters[i]->domain_id)
        throw StructureError("average_params: weight order does not match adapters");
      const Tensor& ti = adapters[i]->theta.at(name);
      kern::acc_scaled(acc.ptr(), ti.ptr(), static_cast<float>(w), acc.numel());
    }
    out.theta.entries.emplace(name, std::move(acc));
  }
  return out;
}

Tensor ensemble_predict(const BaseModel& base,
                        const std::vector<std::pair<const AdapterModule*, double>>& members,
                        std::span<const int> tokens, bool probability_space) {
  if (members.empty()) throw ArgumentError("ensemble_predict: no members");
  double wsum = 0.0;
  for (const auto& [adapter, w] : members) wsum += w;
  if (std::fabs(wsum - 1.0) > 1e-9) throw ScoringError("ensemble_predict: weights do not sum to 1");

  Tensor mixed;
  for (const auto& [adapter, w] : members) {
    Tensor logits = forward(base, adapter, tokens, nullptr);
    Tensor contrib = probability_space ? softmax<float>(nullptr, logits) : logits;
    if (!mixed.defined()) mixed = Tensor::zeros(contrib.shape);
    kern::acc_scaled(mixed.ptr(), contrib.ptr(), static_cast<float>(w), mixed.numel());
  }
  return probability_space ? mixed : softmax<float>(nullptr, mixed);
}

ComposedModel compose(const CompositionPlan& plan, const BaseModel& base,
                      const std::vector<const AdapterModule*>& adapters,
                      const ScoreVector& scores) {
  plan.validate();
  ComposedModel out;
  out.base = &base;

  const int k = plan.uses_auto_k() ? auto_k(scores, plan.auto_threshold) : plan.k;
  if (k == 0) {
    out.kind = ComposedModel::Kind::kBase;
    return out;
  }
  if (k > static_cast<int>(adapters.size()))
    throw ArgumentError("compose: k exceeds the number of candidate adapters");

  const std::vector<std::string> selected = select_top_k(scores, k);
  WeightVector weights = plan.weighting == Weighting::kScored ? normalize(scores, selected)
                                                              : score_uniform(selected);

  auto adapter_by_id = [&](const std::string& id) -> const AdapterModule* {
    for (const AdapterModule* a : adapters)
      if (a->domain_id == id) return a;
    throw LookupError("compose: no adapter for domain '" + id + "'");
  };

  if (plan.method == Method::kAverage) {
    std::vector<const AdapterModule*> chosen;
    for (const auto& [id, w] : weights.weights) chosen.push_back(adapter_by_id(id));
    out.kind = ComposedModel::Kind::kMerged;
    out.merged = average_params(chosen, weights);
    out.merged_k = k;
  } else {
    out.kind = ComposedModel::Kind::kEnsemble;
    for (const auto& [id, w] : weights.weights) out.members.emplace_back(adapter_by_id(id), w);
  }
  return out;
}

}  // namespace modcomp
