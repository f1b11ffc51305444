#pragma once

#include <optional>
#include <string>
#include <vector>

#include "modcomp/model.hpp"
#include "modcomp/scoring.hpp"

namespace modcomp {

enum class Weighting { kScored, kUniformAfterSelection };
enum class Method { kAverage, kEnsemble };

std::string to_string(Weighting w);
std::string to_string(Method m);
Weighting weighting_from_string(const std::string& s);
Method method_from_string(const std::string& s);

struct CompositionPlan {
  std::string strategy;             // uniform | sentsim | tfidf | prior | entropy
  int k = 1;                        // 0 = bare base model; ignored when auto_threshold > 0
  double auto_threshold = 0.0;      // > 0 switches to gap-based automatic k
  Weighting weighting = Weighting::kScored;
  Method method = Method::kEnsemble;
  std::uint64_t seed = 5;

  bool uses_auto_k() const { return auto_threshold > 0.0; }
  void validate() const;
};

// Either the bare base, a single merged adapter, or a weighted ensemble.
struct ComposedModel {
  enum class Kind { kBase, kMerged, kEnsemble };
  Kind kind = Kind::kBase;
  const BaseModel* base = nullptr;
  std::optional<AdapterModule> merged;
  std::vector<std::pair<const AdapterModule*, double>> members;  // ensemble weights sum to 1

  int k() const {
    switch (kind) {
      case Kind::kBase: return 0;
      case Kind::kMerged: return merged_k;
      case Kind::kEnsemble: return static_cast<int>(members.size());
    }
    return 0;
  }
  int merged_k = 0;
};

// k highest-scoring domains; ties break toward the lexicographically smaller
// domain id.
std::vector<std::string> select_top_k(const ScoreVector& scores, int k);

// Early-stopping rule: sort normalized weights descending and stop
// before the first consecutive gap larger than the threshold.
int auto_k(const ScoreVector& scores, double threshold);

// Elementwise weighted average of the adapter trees, head entries included.
AdapterModule average_params(const std::vector<const AdapterModule*>& adapters,
                             const WeightVector& weights);

// Per-position mixture of member predictions. Probability-space mixing keeps
// each row a distribution; logit-space mixing is available for ablation.
Tensor ensemble_predict(const BaseModel& base,
                        const std::vector<std::pair<const AdapterModule*, double>>& members,
                        std::span<const int> tokens, bool probability_space = true);

ComposedModel compose(const CompositionPlan& plan, const BaseModel& base,
                      const std::vector<const AdapterModule*>& adapters,
                      const ScoreVector& scores);

}  // namespace modcomp
