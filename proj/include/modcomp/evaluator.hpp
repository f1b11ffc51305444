#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "modcomp/composer.hpp"
#include "modcomp/corpus.hpp"
#include "modcomp/workmodel.hpp"

namespace modcomp {

// One benchmark cell.
struct EvalRecord {
  std::string strategy;
  std::string method;
  std::string weighting;
  int k = 0;
  std::string eval_domain;
  std::uint64_t seed = 0;
  double perplexity = 0.0;
  double wall_seconds = 0.0;  // modeled compute seconds (see workmodel.hpp)
  double co2_g = 0.0;
};

// exp of the mean NLL over all predicted positions of the packed eval split.
double perplexity(const ComposedModel& model, const std::vector<TokenSeq>& eval_chunks);

// Perplexity from externally computed per-position probability rows; rows are
// [T x V] aligned with chunk positions predicting the next token.
double perplexity_from_probs(const std::vector<Tensor>& prob_rows,
                             const std::vector<TokenSeq>& chunks);

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;
  int n = 0;
  bool single_seed = false;
};

// Mean/std of perplexity over seeds, keyed by (strategy, method, weighting, k,
// eval_domain).
std::map<std::string, Aggregate> aggregate(const std::vector<EvalRecord>& records);

std::string cell_key(const EvalRecord& r);

struct WilcoxonResult {
  double w_plus = 0.0;
  double w_minus = 0.0;
  double w = 0.0;        // min(w_plus, w_minus)
  double p_two_sided = 1.0;
  int n = 0;             // pairs after dropping zero differences
  bool exact = true;
  bool degenerate = false;  // all differences zero
};

// Zero differences are dropped; exact sign-assignment distribution for
// n <= 20, normal approximation with tie correction above.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b);

// Tie-corrected normal approximation for the same statistic regardless of n,
// exposed for cross-checking against the exact path.
double wilcoxon_normal_approx_p(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace modcomp
