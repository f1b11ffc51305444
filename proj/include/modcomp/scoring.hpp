#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "modcomp/corpus.hpp"
#include "modcomp/model.hpp"

namespace modcomp {

// Raw (pre-normalization) relevance scores over all candidate domains.
struct ScoreVector {
  std::string strategy;
  std::vector<std::pair<std::string, double>> scores;

  std::vector<std::string> domain_ids() const;
};

// Selected domains with non-negative weights summing to one.
struct WeightVector {
  std::vector<std::pair<std::string, double>> weights;

  void validate() const;
  double weight_of(const std::string& domain_id) const;  // 0 when absent
};

struct PriorConfig {
  double lambda = 0.3;  // EMA decay
  int n_sequences = 100;

  void validate() const;
};

// Pluggable sequence embedder backing the sentence-similarity strategy. The
// default embeds a sequence as the mean of the base model's token embeddings,
// skipping reserved tokens.
struct SequenceEmbedder {
  virtual ~SequenceEmbedder() = default;
  virtual std::vector<double> embed(const TokenSeq& tokens) const = 0;
};

struct MeanTokenEmbedder : SequenceEmbedder {
  explicit MeanTokenEmbedder(const BaseModel& base) : base_(&base) {}
  std::vector<double> embed(const TokenSeq& tokens) const override;

 private:
  const BaseModel* base_;
};

// ---- pure pieces, exposed for direct verification ----

// Bayes step: posterior_j proportional to likelihood_j * prior_j.
std::vector<double> bayes_posterior(const std::vector<double>& likelihoods,
                                    const std::vector<double>& prior);

// Geometric accumulation of per-sequence posteriors: sum_i lambda^i * post_i
// (i is 1-based over sequences).
std::vector<double> ema_prior(const std::vector<std::vector<double>>& posteriors, double lambda);

// H = -sum_b p_b * log p_b over per-batch mean probabilities.
double entropy_from_batch_probs(const std::vector<double>& batch_mean_probs);

// Smoothed inverse document frequency over n_docs total documents.
inline double tfidf_idf(std::int64_t n_docs, std::int64_t doc_freq) {
  return std::log((1.0 + static_cast<double>(n_docs)) / (1.0 + static_cast<double>(doc_freq)) + 1.0);
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// Uncertainties to certainty weights: (max H - H_j) / sum, uniform fallback
// when all uncertainties coincide.
std::vector<double> certainty_scores(const std::vector<double>& uncertainties);

// ---- the five strategies ----

WeightVector score_uniform(const std::vector<std::string>& selected_domains);

ScoreVector score_sentsim(const std::map<std::string, std::vector<TokenSeq>>& train_dev_samples,
                          const std::vector<TokenSeq>& eval_samples,
                          const SequenceEmbedder& embedder);

ScoreVector score_tfidf(const std::map<std::string, std::vector<TokenSeq>>& train_dev_samples,
                        const std::vector<TokenSeq>& eval_samples);

ScoreVector score_prior(const BaseModel& base,
                        const std::vector<const AdapterModule*>& adapters,
                        const std::vector<TokenSeq>& eval_samples, const PriorConfig& cfg);

ScoreVector score_entropy(const BaseModel& base,
                          const std::vector<const AdapterModule*>& adapters,
                          const std::vector<TokenSeq>& eval_samples, int batch_size);

// Restricts to `selected` and divides by the subset sum.
WeightVector normalize(const ScoreVector& scores, const std::vector<std::string>& selected);

}  // namespace modcomp
