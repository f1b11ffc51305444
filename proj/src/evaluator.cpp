#include "modcomp/evaluator.hpp"

#include <algorithm>
#include <cmath>

namespace modcomp {

namespace {

// Summed NLL of next-token targets from raw logits, accumulated in double via
// log-sum-exp.
void accumulate_nll_from_logits(const Tensor& logits, const TokenSeq& chunk, double& nll,
                                std::int64_t& positions) {
  const int T = logits.shape[0];
  const int v = logits.shape[1];
  for (int t = 0; t < T; ++t) {
    const float* row = logits.ptr() + static_cast<std::size_t>(t) * v;
    double mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double sum = 0.0;
    for (int j = 0; j < v; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
    const int target = chunk[static_cast<std::size_t>(t) + 1];
    nll += std::log(sum) + mx - static_cast<double>(row[target]);
    ++positions;
  }
}

}  // namespace

double perplexity(const ComposedModel& model, const std::vector<TokenSeq>& eval_chunks) {
  if (eval_chunks.empty()) throw DataError("perplexity: empty eval split");
  double nll = 0.0;
  std::int64_t positions = 0;
  for (const auto& chunk : eval_chunks) {
    if (chunk.size() < 2) continue;
    std::span<const int> inputs(chunk.data(), chunk.size() - 1);
    switch (model.kind) {
      case ComposedModel::Kind::kBase: {
        Tensor logits = forward(*model.base, nullptr, inputs, nullptr);
        accumulate_nll_from_logits(logits, chunk, nll, positions);
        break;
      }
      case ComposedModel::Kind::kMerged: {
        Tensor logits = forward(*model.base, &*model.merged, inputs, nullptr);
        accumulate_nll_from_logits(logits, chunk, nll, positions);
        break;
      }
      case ComposedModel::Kind::kEnsemble: {
        Tensor probs = ensemble_predict(*model.base, model.members, inputs);
        const int v = probs.shape[1];
        for (std::size_t t = 0; t + 1 < chunk.size(); ++t) {
          nll -= std::log(static_cast<double>(probs.at(t * v + chunk[t + 1])));
          ++positions;
        }
        break;
      }
    }
  }
  if (positions == 0) throw DataError("perplexity: no predictable positions");
  return std::exp(nll / static_cast<double>(positions));
}

double perplexity_from_probs(const std::vector<Tensor>& prob_rows,
                             const std::vector<TokenSeq>& chunks) {
  if (prob_rows.size() != chunks.size()) throw ArgumentError("perplexity: row/chunk mismatch");
  double nll = 0.0;
  std::int64_t positions = 0;
  for (std::size_t c = 0; c < chunks.size(); ++c) {
    const int v = prob_rows[c].shape[1];
    for (std::size_t t = 0; t + 1 < chunks[c].size(); ++t) {
      nll -= std::log(static_cast<double>(prob_rows[c].at(t * v + chunks[c][t + 1])));
      ++positions;
    }
  }
  if (positions == 0) throw DataError("perplexity: no predictable positions");
  return std::exp(nll / static_cast<double>(positions));
}

std::string cell_key(const EvalRecord& r) {
  return r.strategy + "|" + r.method + "|" + r.weighting + "|" + std::to_string(r.k) + "|" +
         r.eval_domain;
}

std::map<std::string, Aggregate> aggregate(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw DataError("aggregate: no records");
  std::map<std::string, std::vector<double>> cells;
  for (const auto& r : records) cells[cell_key(r)].push_back(r.perplexity);
  std::map<std::string, Aggregate> out;
  for (const auto& [key, values] : cells) {
    Aggregate a;
    a.n = static_cast<int>(values.size());
    double sum = 0.0;
    for (double v : values) sum += v;
    a.mean = sum / a.n;
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(ss / a.n);
    a.single_seed = a.n == 1;
    out.emplace(key, a);
  }
  return out;
}

namespace {

struct RankedDiffs {
  std::vector<double> ranks;  // midranks of |d|
  std::vector<int> signs;
  double w_plus = 0.0, w_minus = 0.0;
};

RankedDiffs rank_diffs(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ArgumentError("wilcoxon: paired samples differ in length");
  std::vector<double> absd;
  std::vector<int> sign;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d == 0.0) continue;  // standard convention: zero differences dropped
    absd.push_back(std::fabs(d));
    sign.push_back(d > 0 ? 1 : -1);
  }
  const std::size_t n = absd.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return absd[x] < absd[y]; });
  RankedDiffs out;
  out.ranks.assign(n, 0.0);
  out.signs = sign;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && absd[order[j + 1]] == absd[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t t = i; t <= j; ++t) out.ranks[order[t]] = midrank;
    i = j + 1;
  }
  for (std::size_t t = 0; t < n; ++t) {
    if (sign[t] > 0)
      out.w_plus += out.ranks[t];
    else
      out.w_minus += out.ranks[t];
  }
  return out;
}

double exact_two_sided_p(const std::vector<double>& ranks, double w_obs) {
  // Distribution of W+ over all 2^n sign assignments via subset-sum counts on
  // doubled ranks (midranks are multiples of 1/2).
  std::vector<std::int64_t> doubled;
  std::int64_t total = 0;
  for (double r : ranks) {
    doubled.push_back(std::llround(2.0 * r));
    total += doubled.back();
  }
  std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
  counts[0] = 1.0;
  std::int64_t reach = 0;
  for (std::int64_t r2 : doubled) {
    for (std::int64_t s = reach; s >= 0; --s)
      if (counts[s] > 0.0) counts[s + r2] += counts[s];
    reach += r2;
  }
  const double denom = std::pow(2.0, static_cast<double>(ranks.size()));
  const std::int64_t w2 = std::llround(2.0 * w_obs);
  double low = 0.0, high = 0.0;
  for (std::int64_t s = 0; s <= total; ++s) {
    if (s <= w2) low += counts[s];
    if (s >= w2) high += counts[s];
  }
  return std::min(1.0, 2.0 * std::min(low, high) / denom);
}

double normal_two_sided_p(const RankedDiffs& rd, double w_obs) {
  const double n = static_cast<double>(rd.ranks.size());
  const double mu = n * (n + 1.0) / 4.0;
  double tie_term = 0.0;
  std::map<double, int> groups;
  for (double r : rd.ranks) ++groups[r];
  for (const auto& [rank, count] : groups) {
    const double t = count;
    tie_term += (t * t * t - t);
  }
  const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
  if (var <= 0.0) return 1.0;
  const double z = (w_obs - mu + 0.5) / std::sqrt(var);  // continuity-corrected lower tail
  const double phi = 0.5 * std::erfc(-z / std::sqrt(2.0));
  return std::min(1.0, 2.0 * phi);
}

}  // namespace

double wilcoxon_normal_approx_p(const std::vector<double>& a, const std::vector<double>& b) {
  RankedDiffs rd = rank_diffs(a, b);
  if (rd.ranks.empty()) return 1.0;
  return normal_two_sided_p(rd, std::min(rd.w_plus, rd.w_minus));
}

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
  RankedDiffs rd = rank_diffs(a, b);
  WilcoxonResult res;
  res.n = static_cast<int>(rd.ranks.size());
  if (res.n == 0) {
    res.degenerate = true;
    res.p_two_sided = 1.0;
    return res;
  }
  res.w_plus = rd.w_plus;
  res.w_minus = rd.w_minus;
  res.w = std::min(rd.w_plus, rd.w_minus);
  if (res.n <= 20) {
    res.exact = true;
    res.p_two_sided = exact_two_sided_p(rd.ranks, res.w);
  } else {
    res.exact = false;
    res.p_two_sided = normal_two_sided_p(rd, res.w);
  }
  return res;
}

}  // namespace modcomp
