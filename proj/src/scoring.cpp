#include "modcomp/scoring.hpp"

#include <algorithm>
#include <unordered_map>

namespace modcomp {

std::vector<std::string> ScoreVector::domain_ids() const {
  std::vector<std::string> ids;
  ids.reserve(scores.size());
  for (const auto& [id, s] : scores) ids.push_back(id);
  return ids;
}

void WeightVector::validate() const {
  if (weights.empty()) throw ScoringError("weight vector: empty");
  double sum = 0.0;
  for (const auto& [id, w] : weights) {
    if (w < 0.0) throw ScoringError("weight vector: negative weight for '" + id + "'");
    sum += w;
  }
  if (std::fabs(sum - 1.0) > 1e-9) throw ScoringError("weight vector: weights do not sum to 1");
}

double WeightVector::weight_of(const std::string& domain_id) const {
  for (const auto& [id, w] : weights)
    if (id == domain_id) return w;
  return 0.0;
}

void PriorConfig::validate() const {
  if (lambda <= 0.0 || lambda >= 1.0) throw ConfigError("prior config: lambda must lie in (0, 1)");
  if (n_sequences < 1) throw ConfigError("prior config: need at least one sequence");
}

std::vector<double> MeanTokenEmbedder::embed(const TokenSeq& tokens) const {
  const Tensor& table = base_->phi.at("tok_emb.w");
  const int d = table.shape[1];
  std::vector<double> out(d, 0.0);
  int counted = 0;
  for (int id : tokens) {
    if (id < Vocab::kReserved) continue;
    if (id >= table.shape[0]) throw IndexError("embedder: token id out of range");
    const float* row = table.ptr() + static_cast<std::size_t>(id) * d;
    for (int j = 0; j < d; ++j) out[j] += row[j];
    ++counted;
  }
  if (counted > 0)
    for (double& v : out) v /= counted;
  return out;
}

std::vector<double> bayes_posterior(const std::vector<double>& likelihoods,
                                    const std::vector<double>& prior) {
  if (likelihoods.size() != prior.size())
    throw ArgumentError("bayes_posterior: size mismatch");
  std::vector<double> post(likelihoods.size());
  double z = 0.0;
  for (std::size_t j = 0; j < post.size(); ++j) {
    post[j] = likelihoods[j] * prior[j];
    z += post[j];
  }
  if (z <= 0.0) {  // no evidence: fall back to the prior
    return prior;
  }
  for (double& p : post) p /= z;
  return post;
}

std::vector<double> ema_prior(const std::vector<std::vector<double>>& posteriors, double lambda) {
  if (posteriors.empty()) throw ArgumentError("ema_prior: no posteriors");
  std::vector<double> acc(posteriors.front().size(), 0.0);
  double w = 1.0;
  for (const auto& post : posteriors) {
    w *= lambda;
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += w * post[j];
  }
  return acc;
}

double entropy_from_batch_probs(const std::vector<double>& batch_mean_probs) {
  double h = 0.0;
  for (double p : batch_mean_probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> certainty_scores(const std::vector<double>& uncertainties) {
  if (uncertainties.empty()) throw ScoringError("certainty: no uncertainties");
  const double max_h = *std::max_element(uncertainties.begin(), uncertainties.end());
  std::vector<double> c(uncertainties.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < c.size(); ++j) {
    c[j] = max_h - uncertainties[j];
    sum += c[j];
  }
  if (sum <= 0.0) {  // all adapters equally uncertain
    std::fill(c.begin(), c.end(), 1.0 / static_cast<double>(c.size()));
    return c;
  }
  for (double& v : c) v /= sum;
  return c;
}

WeightVector score_uniform(const std::vector<std::string>& selected_domains) {
  if (selected_domains.empty()) throw ArgumentError("score_uniform: k must be >= 1");
  WeightVector w;
  const double v = 1.0 / static_cast<double>(selected_domains.size());
  for (const auto& id : selected_domains) w.weights.emplace_back(id, v);
  return w;
}

namespace {

bool zero_norm(const std::vector<double>& v) {
  for (double x : v)
    if (x != 0.0) return false;
  return true;
}

ScoreVector make_scores(std::string strategy,
                           std::vector<std::pair<std::string, double>> raw) {
  ScoreVector out;
  out.strategy = std::move(strategy);
  out.scores = std::move(raw);
  return out;
}

// Sparse term-frequency vector over non-reserved token ids, normalized by
// document length.
std::unordered_map<int, double> term_frequencies(const TokenSeq& doc) {
  std::unordered_map<int, double> tf;
  int len = 0;
  for (int id : doc) {
    if (id < Vocab::kReserved) continue;
    ++tf[id];
    ++len;
  }
  if (len > 0)
    for (auto& [id, f] : tf) f /= static_cast<double>(len);
  return tf;
}

double sparse_cosine(const std::unordered_map<int, double>& a,
                     const std::unordered_map<int, double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [id, v] : a) na += v * v;
  for (const auto& [id, v] : b) nb += v * v;
  if (na == 0.0 || nb == 0.0) return 0.0;
  const auto& small = a.size() <= b.size() ? a : b;
  const auto& large = a.size() <= b.size() ? b : a;
  for (const auto& [id, v] : small) {
    auto it = large.find(id);
    if (it != large.end()) dot += v * it->second;
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Likelihood of the final token of each sample under each adapter.
std::vector<std::vector<double>> last_token_likelihoods(
    const BaseModel& base, const std::vector<const AdapterModule*>& adapters,
    const std::vector<TokenSeq>& samples) {
  std::vector<std::vector<double>> liks;  // [sample][adapter]
  for (const auto& seq : samples) {
    if (seq.size() < 2) continue;  // too short to condition on
    std::span<const int> prefix(seq.data(), seq.size() - 1);
    const int target = seq.back();
    std::vector<double> row;
    row.reserve(adapters.size());
    for (const AdapterModule* adapter : adapters) {
      Tensor logits = forward(base, adapter, prefix, nullptr);
      const int v = logits.shape[1];
      const int last = logits.shape[0] - 1;
      Tensor probs = softmax<float>(nullptr, logits);
      row.push_back(static_cast<double>(probs.at(static_cast<std::size_t>(last) * v + target)));
    }
    liks.push_back(std::move(row));
  }
  return liks;
}

}  // namespace

ScoreVector score_sentsim(const std::map<std::string, std::vector<TokenSeq>>& train_dev_samples,
                          const std::vector<TokenSeq>& eval_samples,
                          const SequenceEmbedder& embedder) {
  if (train_dev_samples.empty() || eval_samples.empty())
    throw ArgumentError("sentsim: need samples for every domain and the eval set");
  std::vector<std::vector<double>> eval_emb;
  for (const auto& seq : eval_samples) eval_emb.push_back(embedder.embed(seq));

  std::vector<std::pair<std::string, double>> raw;
  std::int64_t valid_pairs_total = 0;
  for (const auto& [domain, samples] : train_dev_samples) {
    if (samples.empty()) throw ArgumentError("sentsim: empty sample set for '" + domain + "'");
    double sum = 0.0;
    std::int64_t pairs = 0;
    for (const auto& seq : samples) {
      const std::vector<double> e = embedder.embed(seq);
      if (zero_norm(e)) continue;
      for (const auto& ee : eval_emb) {
        if (zero_norm(ee)) continue;
        sum += cosine_similarity(e, ee);
        ++pairs;
      }
    }
    valid_pairs_total += pairs;
    // negative mean similarities are floored: weights must stay non-negative
    raw.emplace_back(domain, pairs > 0 ? std::max(0.0, sum / static_cast<double>(pairs)) : 0.0);
  }
  if (valid_pairs_total == 0) throw ScoringError("sentsim: all embedding pairs were excluded");
  return make_scores("sentsim", std::move(raw));
}

ScoreVector score_tfidf(const std::map<std::string, std::vector<TokenSeq>>& train_dev_samples,
                        const std::vector<TokenSeq>& eval_samples) {
  if (train_dev_samples.empty() || eval_samples.empty())
    throw ArgumentError("tfidf: need samples for every domain and the eval set");

  // document frequencies over the union of all sampled documents
  std::unordered_map<int, std::int64_t> df;
  std::int64_t n_docs = 0;
  auto count_doc = [&](const TokenSeq& doc) {
    std::unordered_map<int, double> tf = term_frequencies(doc);
    if (tf.empty()) return false;  // empty after dropping reserved ids
    ++n_docs;
    for (const auto& [id, f] : tf) ++df[id];
    return true;
  };
  for (const auto& [domain, samples] : train_dev_samples)
    for (const auto& doc : samples) count_doc(doc);
  for (const auto& doc : eval_samples) count_doc(doc);
  if (n_docs == 0) throw ScoringError("tfidf: every document was empty");

  auto vectorize = [&](const TokenSeq& doc) {
    std::unordered_map<int, double> v = term_frequencies(doc);
    for (auto& [id, f] : v) f *= tfidf_idf(n_docs, df[id]);
    return v;
  };

  std::vector<std::unordered_map<int, double>> eval_vecs;
  for (const auto& doc : eval_samples) {
    auto v = vectorize(doc);
    if (!v.empty()) eval_vecs.push_back(std::move(v));
  }
  if (eval_vecs.empty()) throw ScoringError("tfidf: eval documents all empty");

  std::vector<std::pair<std::string, double>> raw;
  for (const auto& [domain, samples] : train_dev_samples) {
    double sum = 0.0;
    std::int64_t pairs = 0;
    for (const auto& doc : samples) {
      auto v = vectorize(doc);
      if (v.empty()) continue;
      for (const auto& ev : eval_vecs) {
        sum += sparse_cosine(v, ev);
        ++pairs;
      }
    }
    raw.emplace_back(domain, pairs > 0 ? sum / static_cast<double>(pairs) : 0.0);
  }
  return make_scores("tfidf", std::move(raw));
}

ScoreVector score_prior(const BaseModel& base,
                        const std::vector<const AdapterModule*>& adapters,
                        const std::vector<TokenSeq>& eval_samples, const PriorConfig& cfg) {
  cfg.validate();
  if (adapters.empty()) throw ArgumentError("prior: need at least one adapter");
  if (eval_samples.empty()) throw ArgumentError("prior: no eval samples");

  std::vector<TokenSeq> usable(eval_samples.begin(), eval_samples.end());
  if (static_cast<int>(usable.size()) > cfg.n_sequences) usable.resize(cfg.n_sequences);
  const auto liks = last_token_likelihoods(base, adapters, usable);
  if (liks.empty()) throw ScoringError("prior: every sequence was shorter than 2 tokens");

  const std::size_t n = adapters.size();
  std::vector<double> running_prior(n, 1.0 / static_cast<double>(n));
  std::vector<double> acc(n, 0.0);
  double w = 1.0;
  for (const auto& lik : liks) {
    const std::vector<double> post = bayes_posterior(lik, running_prior);
    w *= cfg.lambda;
    double acc_sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      acc[j] += w * post[j];
      acc_sum += acc[j];
    }
    if (acc_sum > 0.0)
      for (std::size_t j = 0; j < n; ++j) running_prior[j] = acc[j] / acc_sum;
  }

  std::vector<std::pair<std::string, double>> raw;
  for (std::size_t j = 0; j < n; ++j) raw.emplace_back(adapters[j]->domain_id, acc[j]);
  return make_scores("prior", std::move(raw));
}

ScoreVector score_entropy(const BaseModel& base,
                          const std::vector<const AdapterModule*>& adapters,
                          const std::vector<TokenSeq>& eval_samples, int batch_size) {
  if (adapters.empty()) throw ArgumentError("entropy: need at least one adapter");
  if (eval_samples.empty()) throw ArgumentError("entropy: no eval samples");
  if (batch_size < 1) throw ArgumentError("entropy: batch size must be >= 1");

  std::vector<double> uncertainties;
  for (const AdapterModule* adapter : adapters) {
    std::vector<double> batch_probs;
    for (std::size_t start = 0; start < eval_samples.size();
         start += static_cast<std::size_t>(batch_size)) {
      const std::size_t end =
          std::min(eval_samples.size(), start + static_cast<std::size_t>(batch_size));
      double prob_sum = 0.0;
      std::int64_t positions = 0;
      for (std::size_t i = start; i < end; ++i) {
        const TokenSeq& seq = eval_samples[i];
        if (seq.size() < 2) continue;
        std::span<const int> prefix(seq.data(), seq.size() - 1);
        Tensor logits = forward(base, adapter, prefix, nullptr);
        Tensor probs = softmax<float>(nullptr, logits);
        const int v = logits.shape[1];
        for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
          prob_sum += probs.at(t * v + seq[t + 1]);
          ++positions;
        }
      }
      if (positions == 0) continue;  // empty batch
      batch_probs.push_back(prob_sum / static_cast<double>(positions));
    }
    if (batch_probs.empty()) throw ScoringError("entropy: no usable batches");
    uncertainties.push_back(entropy_from_batch_probs(batch_probs));
  }

  const std::vector<double> certainty = certainty_scores(uncertainties);
  std::vector<std::pair<std::string, double>> raw;
  for (std::size_t j = 0; j < adapters.size(); ++j)
    raw.emplace_back(adapters[j]->domain_id, certainty[j]);
  return make_scores("entropy", std::move(raw));
}

WeightVector normalize(const ScoreVector& scores, const std::vector<std::string>& selected) {
  WeightVector out;
  double sum = 0.0;
  for (const auto& id : selected) {
    bool found = false;
    for (const auto& [sid, s] : scores.scores) {
      if (sid == id) {
        if (s < 0.0) throw ScoringError("normalize: negative raw score for '" + id + "'");
        out.weights.emplace_back(id, s);
        sum += s;
        found = true;
        break;
      }
    }
    if (!found) throw LookupError("normalize: unknown domain '" + id + "'");
  }
  if (out.weights.empty()) throw ArgumentError("normalize: empty selection");
  if (sum <= 0.0) throw ScoringError("normalize: selected scores sum to zero");
  for (auto& [id, w] : out.weights) w /= sum;
  return out;
}

}  // namespace modcomp
