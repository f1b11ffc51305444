#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "modcomp/evaluator.hpp"
#include "modcomp/rng.hpp"

using namespace modcomp;

TEST_CASE("perplexity closed forms") {
  // uniform predictor over V: perplexity = V
  const int v = 9;
  std::vector<TokenSeq> chunks = {{2, 4, 7, 1}};
  Tensor uniform_rows = Tensor::zeros({3, v});
  std::fill(uniform_rows.data->begin(), uniform_rows.data->end(), 1.0f / v);
  CHECK(perplexity_from_probs({uniform_rows}, chunks) == doctest::Approx(v).epsilon(1e-6));

  // perfect predictor: 1.0
  Tensor perfect = Tensor::zeros({3, v});
  perfect.ptr()[0 * v + 4] = 1.0f;
  perfect.ptr()[1 * v + 7] = 1.0f;
  perfect.ptr()[2 * v + 1] = 1.0f;
  CHECK(perplexity_from_probs({perfect}, chunks) == doctest::Approx(1.0).epsilon(1e-6));

  // probs 0.5 and 0.125 -> exp((ln2 + ln8)/2) = 4
  std::vector<TokenSeq> two = {{2, 3, 5}};
  Tensor rows = Tensor::zeros({2, 8});
  std::fill(rows.data->begin(), rows.data->end(), 0.001f);
  rows.ptr()[0 * 8 + 3] = 0.5f;
  rows.ptr()[1 * 8 + 5] = 0.125f;
  CHECK(perplexity_from_probs({rows}, two) == doctest::Approx(4.0).epsilon(1e-6));

  CHECK_THROWS_AS(perplexity_from_probs({}, {}), DataError);
}

TEST_CASE("perplexity of an ensemble of identical models equals the member") {
  testutil::TinyWorld w = testutil::make_tiny_world(1);
  const auto adapters = w.adapter_ptrs();
  std::vector<TokenSeq> chunks;
  for (const auto& seq : w.corpus.domain("mix").split("eval"))
    if (seq.size() >= 2 && chunks.size() < 8) chunks.push_back(seq);

  ComposedModel solo;
  solo.kind = ComposedModel::Kind::kEnsemble;
  solo.base = &w.base;
  solo.members = {{adapters[0], 1.0}};
  ComposedModel trio;
  trio.kind = ComposedModel::Kind::kEnsemble;
  trio.base = &w.base;
  trio.members = {{adapters[0], 0.2}, {adapters[0], 0.5}, {adapters[0], 0.3}};
  const double a = perplexity(solo, chunks);
  const double b = perplexity(trio, chunks);
  CHECK(std::fabs(a - b) / a < 1e-6);
}

TEST_CASE("aggregate means, stds, and the single-seed flag") {
  auto rec = [](int k, std::uint64_t seed, double ppl) {
    EvalRecord r;
    r.strategy = "tfidf";
    r.method = "ensemble";
    r.weighting = "scored";
    r.k = k;
    r.eval_domain = "mix";
    r.seed = seed;
    r.perplexity = ppl;
    return r;
  };
  std::vector<EvalRecord> records = {rec(1, 5, 4), rec(1, 10, 4), rec(1, 42, 4), rec(1, 88, 4),
                                     rec(2, 5, 3), rec(2, 10, 5), rec(3, 5, 7)};
  const auto agg = aggregate(records);
  const Aggregate& k1 = agg.at(cell_key(records[0]));
  CHECK(k1.mean == doctest::Approx(4.0));
  CHECK(k1.stddev == doctest::Approx(0.0));
  CHECK(!k1.single_seed);
  const Aggregate& k2 = agg.at(cell_key(records[4]));
  CHECK(k2.mean == doctest::Approx(4.0));
  const Aggregate& k3 = agg.at(cell_key(records[6]));
  CHECK(k3.single_seed);
  CHECK(k3.stddev == 0.0);
}

TEST_CASE("wilcoxon hand example and degenerate input") {
  // diffs [1.5, -0.5, 2.0, 3.0]: W- = 1, exact two-sided p = 0.25
  const std::vector<double> a = {2.5, 1.0, 3.0, 4.0};
  const std::vector<double> b = {1.0, 1.5, 1.0, 1.0};
  const WilcoxonResult r = wilcoxon_signed_rank(a, b);
  CHECK(r.w_minus == doctest::Approx(1.0));
  CHECK(r.w == doctest::Approx(1.0));
  CHECK(r.p_two_sided == doctest::Approx(0.25));
  CHECK(r.exact);

  const WilcoxonResult d = wilcoxon_signed_rank({1.0, 2.0}, {1.0, 2.0});
  CHECK(d.degenerate);
  CHECK(d.p_two_sided == 1.0);
}

namespace {

// Independent oracle: enumerate all sign assignments directly over the
// midranks and count min(W+, W-) tail mass.
double brute_force_p(std::vector<double> diffs) {
  std::vector<double> absd;
  for (double d : diffs)
    if (d != 0.0) absd.push_back(std::fabs(d));
  const std::size_t n = absd.size();
  if (n == 0) return 1.0;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto x, auto y) { return absd[x] < absd[y]; });
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && absd[order[j + 1]] == absd[order[i]]) ++j;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = (i + 1 + j + 1) / 2.0;
    i = j + 1;
  }
  double w_plus = 0, total = 0;
  {
    std::size_t idx = 0;
    for (double d : diffs) {
      if (d == 0.0) continue;
      if (d > 0) w_plus += rank[idx];
      ++idx;
    }
  }
  for (double r : rank) total += r;
  const double w_obs = std::min(w_plus, total - w_plus);
  std::int64_t count_low = 0, count_high = 0;
  const std::int64_t masks = 1ll << n;
  for (std::int64_t mask = 0; mask < masks; ++mask) {
    double wp = 0;
    for (std::size_t bit = 0; bit < n; ++bit)
      if (mask & (1ll << bit)) wp += rank[bit];
    if (wp <= w_obs + 1e-12) ++count_low;
    if (wp >= w_obs - 1e-12) ++count_high;
  }
  const double tail = std::min(count_low, count_high) / static_cast<double>(masks);
  return std::min(1.0, 2.0 * tail);
}

}  // namespace

TEST_CASE("wilcoxon exact path matches brute-force enumeration for n <= 10") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 3 + static_cast<int>(rng.next_below(8));
    std::vector<double> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      // quantized values produce plenty of ties and occasional zero diffs
      a[i] = std::round(rng.next_normal() * 4.0) / 2.0;
      b[i] = std::round(rng.next_normal() * 4.0) / 2.0;
    }
    std::vector<double> diffs(n);
    for (int i = 0; i < n; ++i) diffs[i] = a[i] - b[i];
    const WilcoxonResult r = wilcoxon_signed_rank(a, b);
    if (r.degenerate) continue;
    CHECK(r.p_two_sided == doctest::Approx(brute_force_p(diffs)).epsilon(1e-9));
  }
}

TEST_CASE("exact and normal-approximation p agree at n = 15") {
  Rng rng(7);
  double max_gap = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(15), b(15);
    for (int i = 0; i < 15; ++i) {
      a[i] = rng.next_normal();
      b[i] = rng.next_normal() + 0.4;
    }
    const WilcoxonResult exact = wilcoxon_signed_rank(a, b);
    const double approx = wilcoxon_normal_approx_p(a, b);
    if (exact.degenerate) continue;
    max_gap = std::max(max_gap, std::fabs(exact.p_two_sided - approx));
  }
  CHECK(max_gap < 0.02);
}

TEST_CASE("co2 arithmetic") {
  EnergyModel gpu;
  gpu.power_kw = 0.3;
  gpu.intensity_g_per_kwh = 470.0;
  CHECK(co2_estimate(2.0, gpu) == doctest::Approx(282.0));
  CHECK(co2_estimate(0.0, gpu) == 0.0);

  EnergyModel cpu;
  cpu.power_kw = 0.155;
  CHECK(co2_estimate(1.0, cpu) == doctest::Approx(72.85));

  CHECK_THROWS_AS(co2_estimate(-1.0, cpu), ArgumentError);
}

TEST_CASE("modeled cost: ensemble grows with k, merged inference does not") {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 64;
  cfg.n_heads = 4;
  cfg.vocab_size = 240;
  cfg.max_seq_len = 128;
  const std::int64_t one_forward = forward_flops(cfg, 32, true);
  std::int64_t prev_ens = 0;
  for (int k = 1; k <= 4; ++k) {
    const std::int64_t ens = k * one_forward;  // one member pass each
    CHECK(ens > prev_ens);
    prev_ens = ens;
    // the merged model runs a single pass regardless of k
    if (k >= 2) CHECK(one_forward < ens);
  }
  // only the one-time merge grows for averaging, linearly in k
  CHECK(merge_flops(cfg, 2) == 2 * merge_flops(cfg, 1));
  CHECK(merge_flops(cfg, 4) > merge_flops(cfg, 3));
}
