// Acceptance suite: one test case per criterion, executed in order. The
// benchmark-scale cases share one pipeline run (criterion 3 produces it;
// criteria 5, 7, 8, and 9 consume its outputs). Each case prints a
// [criterion N] PASS/FAIL line; criterion 5 is report-only by design.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"
#include "modcomp/csv.hpp"
#include "modcomp/metareg.hpp"
#include "modcomp/pipeline.hpp"
#include "test_util.hpp"

using namespace modcomp;
namespace fs = std::filesystem;

namespace {

struct SharedRun {
  RunConfig cfg;
  bool ready = false;
  std::vector<EvalRecord> records;
};

SharedRun& shared_run() {
  static SharedRun run;
  return run;
}

void announce(int criterion, bool pass, const std::string& detail) {
  std::printf("[criterion %d] %s: %s\n", criterion, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("criterion 1: gradient correctness in 64-bit mode") {
  using testutil::check_gradient;
  using testutil::random_tensor;
  using testutil::scalarize;
  Rng rng(31337);
  std::vector<double> lw, rw;
  for (int i = 0; i < 64; ++i) {
    lw.push_back(rng.next_normal());
    rw.push_back(rng.next_normal());
  }
  double worst = 0.0;

  auto probe = [&](TensorT<double>& param, auto make_out) {
    const auto res = check_gradient(
        param, [&](TapeT<double>* tape) { return scalarize(tape, make_out(tape), lw, rw); }, 32);
    worst = std::max(worst, res.max_rel_err);
  };

  {
    auto a = random_tensor<double>({4, 5}, rng, true);
    auto b = random_tensor<double>({5, 6}, rng, true);
    probe(a, [&](TapeT<double>* t) { return matmul(t, a, b); });
    probe(b, [&](TapeT<double>* t) { return matmul(t, a, b); });
    auto v = random_tensor<double>({6}, rng, true);
    auto x = random_tensor<double>({4, 6}, rng, true);
    probe(v, [&](TapeT<double>* t) { return add_bias(t, x, v); });
    probe(x, [&](TapeT<double>* t) { return gelu(t, x); });
    probe(x, [&](TapeT<double>* t) { return softmax(t, x); });
    auto g = random_tensor<double>({6}, rng, true, 0.3);
    auto be = random_tensor<double>({6}, rng, true, 0.3);
    for (int i = 0; i < 6; ++i) g.ptr()[i] += 1.0;
    probe(x, [&](TapeT<double>* t) { return layer_norm(t, x, g, be); });
    probe(g, [&](TapeT<double>* t) { return layer_norm(t, x, g, be); });
    auto q = random_tensor<double>({5, 8}, rng, true);
    auto k = random_tensor<double>({5, 8}, rng, true);
    auto vv = random_tensor<double>({5, 8}, rng, true);
    probe(q, [&](TapeT<double>* t) { return causal_attention(t, q, k, vv, 2); });
    probe(k, [&](TapeT<double>* t) { return causal_attention(t, q, k, vv, 2); });
    probe(vv, [&](TapeT<double>* t) { return causal_attention(t, q, k, vv, 2); });
    auto table = random_tensor<double>({9, 4}, rng, true);
    std::vector<int> ids = {1, 3, 3, 8};
    probe(table, [&](TapeT<double>* t) { return embedding(t, table, ids); });
    auto logits = random_tensor<double>({4, 7}, rng, true);
    std::vector<int> targets = {0, 6, 2, 2};
    const auto ce = check_gradient(
        logits, [&](TapeT<double>* t) { return cross_entropy_mean(t, logits, targets); }, 28);
    worst = std::max(worst, ce.max_rel_err);
  }

  // full two-layer model end to end
  {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.vocab_size = 13;
    cfg.max_seq_len = 8;
    cfg.reduction_factor = 3;
    BaseModel base = init_base(cfg, 5150);
    AdapterModule adapter = init_adapter(base, "acc");
    for (auto& [name, t] : adapter.theta.entries)
      for (std::int64_t i = 0; i < t.numel(); ++i)
        t.ptr()[i] += static_cast<float>(rng.next_normal() * 0.05);
    ParamTreeT<double> phi = to_double(base.phi);
    ParamTreeT<double> theta = to_double(adapter.theta);
    std::vector<int> tokens = {2, 5, 7, 3, 11, 9};
    std::vector<int> targets = {5, 7, 3, 11, 9, 1};
    auto loss_fn = [&](TapeT<double>* tape) {
      return cross_entropy_mean(tape, model_forward<double>(cfg, phi, &theta, tokens, tape),
                                targets);
    };
    for (auto& [name, t] : theta.entries) {
      t.enable_grad();
      worst = std::max(worst, check_gradient(t, loss_fn, 8).max_rel_err);
      t.drop_grad();
    }
    for (const char* name : {"tok_emb.w", "pos_emb.w", "layers.00.attn.wq", "layers.00.attn.bv",
                             "layers.01.ffn.w1", "layers.01.ln2.g", "final_ln.b"}) {
      auto& t = phi.at(name);
      t.enable_grad();
      worst = std::max(worst, check_gradient(t, loss_fn, 8).max_rel_err);
      t.drop_grad();
    }
  }

  const bool pass = worst < 1e-5;
  announce(1, pass, "max relative error vs central differences = " + fmt_double(worst));
  CHECK(pass);
}

TEST_CASE("criterion 2: averaging and ensembling are equivalent at k <= 1") {
  testutil::TinyWorld w = testutil::make_tiny_world(2);
  const auto adapters = w.adapter_ptrs();
  std::vector<TokenSeq> eval_chunks;
  for (const auto& seq : w.corpus.domain("mix").split("eval"))
    if (seq.size() >= 2) eval_chunks.push_back(seq);

  MeanTokenEmbedder embedder(w.base);
  double worst = 0.0;
  for (const std::string strategy : {"uniform", "sentsim", "tfidf", "prior", "entropy"}) {
    for (std::uint64_t seed : {5ull, 10ull, 42ull, 88ull}) {
      std::map<std::string, std::vector<TokenSeq>> dev;
      for (const auto& id : w.corpus.training_domain_ids)
        dev[id] = sample_sequences(w.corpus.domain(id), "dev", 16, 24, seed);
      const auto eval_s = sample_sequences(w.corpus.domain("mix"), "dev", 16, 24, seed);

      ScoreVector scores;
      if (strategy == "uniform") {
        scores.strategy = strategy;
        for (const auto& id : w.corpus.training_domain_ids) scores.scores.emplace_back(id, 1.0);
      } else if (strategy == "sentsim") {
        scores = score_sentsim(dev, eval_s, embedder);
      } else if (strategy == "tfidf") {
        scores = score_tfidf(dev, eval_s);
      } else if (strategy == "prior") {
        scores = score_prior(w.base, adapters, eval_s, PriorConfig{});
      } else {
        scores = score_entropy(w.base, adapters, eval_s, 4);
      }

      for (int k = 0; k <= 1; ++k) {
        CompositionPlan plan;
        plan.strategy = strategy;
        plan.k = k;
        plan.seed = seed;
        plan.method = Method::kAverage;
        const double avg = perplexity(compose(plan, w.base, adapters, scores), eval_chunks);
        plan.method = Method::kEnsemble;
        const double ens = perplexity(compose(plan, w.base, adapters, scores), eval_chunks);
        worst = std::max(worst, std::fabs(avg - ens) / ens);
      }
    }
  }
  const bool pass = worst < 1e-5;
  announce(2, pass,
           "5 strategies x 4 seeds x k in {0,1}: max |ppl_avg - ppl_ens|/ppl_ens = " +
               fmt_double(worst));
  CHECK(pass);
}

TEST_CASE("criterion 3: zero-shot adaptation beats the bare base") {
  SharedRun& run = shared_run();
  run.cfg = default_config();
  run.cfg.output_dir = fs::temp_directory_path() / "modcomp_acceptance_run";
  fs::remove_all(run.cfg.output_dir);

  std::ostringstream log;
  run_gen_data(run.cfg, log);
  run_train(run.cfg, log, 2);
  run.records = run_bench(run.cfg, log, 2);
  run.ready = true;

  std::map<std::string, double> base_ppl;
  for (const auto& r : run.records)
    if (r.k == 0) base_ppl[r.eval_domain] = r.perplexity;

  bool pass = true;
  double worst_margin = 1e30;
  for (const auto& r : run.records) {
    if (r.k != 2 || r.method != "ensemble" || r.weighting != "scored") continue;
    if (r.strategy != "tfidf" && r.strategy != "sentsim") continue;
    const double base = base_ppl.at(r.eval_domain);
    worst_margin = std::min(worst_margin, base - r.perplexity);
    if (!(r.perplexity < base)) pass = false;
  }
  announce(3, pass,
           "top-2 corpus-selected ensembles vs base over 4 seeds x 2 mixtures; smallest "
           "improvement = " +
               fmt_double(worst_margin) + " perplexity points");
  CHECK(pass);
}

TEST_CASE("criterion 4: corpus strategies rank the true source domain first") {
  auto spec = testutil::tiny_spec(0.0, 4, false);
  spec.vocab_size = 160;
  CorpusSet corpus = generate_synthetic(spec);
  ModelConfig mc;
  mc.n_layers = 1;
  mc.d_model = 32;
  mc.n_heads = 4;
  mc.vocab_size = corpus.vocab.size();
  mc.max_seq_len = 32;
  BaseModel base = init_base(mc, 777);
  MeanTokenEmbedder embedder(base);

  int trials = 0, hits_tfidf = 0, hits_sentsim = 0;
  for (std::uint64_t trial_seed = 1; trial_seed <= 20; ++trial_seed) {
    for (const auto& truth : corpus.training_domain_ids) {
      std::map<std::string, std::vector<TokenSeq>> dev;
      for (const auto& id : corpus.training_domain_ids)
        dev[id] = sample_sequences(corpus.domain(id), "dev", 20, 24, trial_seed);
      const auto eval_s = sample_sequences(corpus.domain(truth), "eval", 20, 24, trial_seed + 50);
      ++trials;
      auto argmax = [](const ScoreVector& sv) {
        std::string best;
        double best_v = -1;
        for (const auto& [id, v] : sv.scores)
          if (v > best_v) {
            best_v = v;
            best = id;
          }
        return best;
      };
      hits_tfidf += argmax(score_tfidf(dev, eval_s)) == truth;
      hits_sentsim += argmax(score_sentsim(dev, eval_s, embedder)) == truth;
    }
  }
  const double rate_tfidf = static_cast<double>(hits_tfidf) / trials;
  const double rate_sentsim = static_cast<double>(hits_sentsim) / trials;
  const bool pass = rate_tfidf >= 0.9 && rate_sentsim >= 0.9;
  announce(4, pass,
           "rank-1 rate over " + std::to_string(trials) + " trials: tfidf " +
               fmt_double(rate_tfidf) + ", sentsim " + fmt_double(rate_sentsim));
  CHECK(pass);
}

TEST_CASE("criterion 5: weight-distribution shape (report-only)") {
  SharedRun& run = shared_run();
  REQUIRE(run.ready);
  const int n = 4;
  auto mean_kl = [&](const std::string& strategy) {
    double sum = 0.0;
    int count = 0;
    for (const auto& domain : run.cfg.grid.eval_domains) {
      for (std::uint64_t seed : run.cfg.grid.seeds) {
        const fs::path path = run.cfg.output_dir / "scores" /
                              (strategy + "_" + domain + "_s" + std::to_string(seed) + ".json");
        std::ifstream in(path);
        REQUIRE(in.good());
        nlohmann::json j;
        in >> j;
        const auto w = j.at("normalized").get<std::vector<double>>();
        double kl = 0.0;
        for (double wi : w)
          if (wi > 0.0) kl += wi * std::log(wi * n);
        sum += kl;
        ++count;
      }
    }
    return sum / count;
  };
  const double kl_entropy = mean_kl("entropy");
  const double kl_prior = mean_kl("prior");
  const double kl_tfidf = mean_kl("tfidf");
  const double kl_sentsim = mean_kl("sentsim");
  const double model_based = 0.5 * (kl_entropy + kl_prior);
  const double corpus_based = 0.5 * (kl_tfidf + kl_sentsim);
  const bool ordering_holds = model_based < corpus_based;
  // empirical claim: reported, not hard-failed
  std::printf(
      "[criterion 5] %s: KL-from-uniform means: entropy %.4f, prior %.4f (model %.4f) vs "
      "tfidf %.4f, sentsim %.4f (corpus %.4f)%s\n",
      ordering_holds ? "PASS" : "REPORT", kl_entropy, kl_prior, model_based, kl_tfidf, kl_sentsim,
      corpus_based, ordering_holds ? "" : " - ordering violated on this run");
  CHECK(std::isfinite(model_based));
  CHECK(std::isfinite(corpus_based));
}

TEST_CASE("criterion 6: exact Wilcoxon matches brute-force enumeration") {
  // hand fixture: diffs [1.5, -0.5, 2.0, 3.0] -> W- = 1, p = 0.25
  const WilcoxonResult hand = wilcoxon_signed_rank({2.5, 1.0, 3.0, 4.0}, {1.0, 1.5, 1.0, 1.0});
  bool pass = hand.w_minus == 1.0 && hand.p_two_sided == 0.25;

  Rng rng(90210);
  int checked = 0;
  double worst_gap = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 3 + static_cast<int>(rng.next_below(8));
    std::vector<double> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a[i] = std::round(rng.next_normal() * 4.0) / 2.0;
      b[i] = std::round(rng.next_normal() * 4.0) / 2.0;
    }
    const WilcoxonResult r = wilcoxon_signed_rank(a, b);
    if (r.degenerate) continue;

    // oracle: enumerate every sign assignment over the midranks
    std::vector<double> ranks;
    {
      std::vector<double> absd;
      for (int i = 0; i < n; ++i)
        if (a[i] != b[i]) absd.push_back(std::fabs(a[i] - b[i]));
      std::vector<std::size_t> order(absd.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](auto x, auto y) { return absd[x] < absd[y]; });
      ranks.assign(absd.size(), 0.0);
      std::size_t i = 0;
      while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && absd[order[j + 1]] == absd[order[i]]) ++j;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = (i + 1 + j + 1) / 2.0;
        i = j + 1;
      }
    }
    double total = 0;
    for (double rk : ranks) total += rk;
    const double w_obs = r.w;
    std::int64_t low = 0, high = 0;
    const std::int64_t masks = 1ll << ranks.size();
    for (std::int64_t mask = 0; mask < masks; ++mask) {
      double wp = 0;
      for (std::size_t bit = 0; bit < ranks.size(); ++bit)
        if (mask & (1ll << bit)) wp += ranks[bit];
      if (wp <= w_obs + 1e-12) ++low;
      if (wp >= w_obs - 1e-12) ++high;
    }
    const double oracle = std::min(1.0, 2.0 * std::min(low, high) / static_cast<double>(masks));
    worst_gap = std::max(worst_gap, std::fabs(oracle - r.p_two_sided));
    ++checked;
  }
  pass = pass && worst_gap < 1e-9 && checked > 50;
  announce(6, pass,
           "hand example reproduced; " + std::to_string(checked) +
               " random fixtures, max |p - oracle| = " + fmt_double(worst_gap));
  CHECK(pass);
}

TEST_CASE("criterion 7: emission accounting") {
  EnergyModel gpu;
  gpu.power_kw = 0.3;
  gpu.intensity_g_per_kwh = 470.0;
  bool pass = co2_estimate(2.0, gpu) == 282.0;

  SharedRun& run = shared_run();
  REQUIRE(run.ready);
  // ensemble co2 non-decreasing in k per (strategy, eval domain, seed)
  std::map<std::tuple<std::string, std::string, std::uint64_t>, std::map<int, double>> series;
  for (const auto& r : run.records)
    if (r.method == "ensemble" && r.weighting == "scored")
      series[{r.strategy, r.eval_domain, r.seed}][r.k] = r.co2_g;
  bool monotone = !series.empty();
  for (const auto& [key, by_k] : series) {
    double prev = -1.0;
    for (const auto& [k, co2] : by_k) {
      if (co2 < prev) monotone = false;
      prev = co2;
    }
  }
  pass = pass && monotone;
  announce(7, pass,
           "2h x 0.3kW x 470g/kWh = 282g exactly; ensemble co2 series non-decreasing in k over " +
               std::to_string(series.size()) + " series");
  CHECK(pass);
}

TEST_CASE("criterion 8: meta-regression machinery and baseline comparison") {
  // synthetic recovery: n = 200, 10 features, noise sigma = 0.01
  Rng rng(808);
  const int n = 200, p = 10;
  Matrix x(n, p);
  std::vector<double> beta(p), y(n);
  for (int j = 0; j < p; ++j) beta[j] = rng.next_normal();
  for (int i = 0; i < n; ++i) {
    double acc = 0.4;
    for (int j = 0; j < p; ++j) {
      x.at(i, j) = rng.next_normal();
      acc += beta[j] * x.at(i, j);
    }
    y[i] = acc + 0.01 * rng.next_normal();
  }
  RegressionModel m = fit_ridge(x, y, 0.0);
  double worst_coef = 0.0;
  for (int j = 0; j < p; ++j)
    worst_coef = std::max(worst_coef, std::fabs(m.coefficients[j] - beta[j]));
  CvSpec spec;
  spec.alpha = 0.0;
  const double r2 = cross_validate(x, y, spec).pooled_r2;
  bool pass = worst_coef < 0.05 && r2 > 0.99;

  // desk benchmark: linear and ridge beat the mean-diff baseline on Spearman
  SharedRun& run = shared_run();
  REQUIRE(run.ready);
  std::ostringstream log;
  run_metareg(run.cfg, log);
  CsvTable table = read_csv(run.cfg.output_dir / "metareg.csv");
  const int c_model = table.column("model");
  const int c_fold = table.column("fold");
  const int c_spearman = table.column("spearman");
  double linear_s = -2, ridge_s = -2, baseline_s = -2;
  for (const auto& row : table.rows) {
    if (row[c_fold] != "mean") continue;
    const double s = parse_double(row[c_spearman], 0);
    if (row[c_model] == "linear") linear_s = s;
    if (row[c_model] == "ridge") ridge_s = std::max(ridge_s, s);
    if (row[c_model] == "mean_diff") baseline_s = s;
  }
  pass = pass && linear_s >= baseline_s && ridge_s >= baseline_s;
  announce(8, pass,
           "recovery max |coef err| = " + fmt_double(worst_coef) + ", CV R2 = " + fmt_double(r2) +
               "; desk spearman: linear " + fmt_double(linear_s) + ", best ridge " +
               fmt_double(ridge_s) + ", baseline " + fmt_double(baseline_s));
  CHECK(pass);
}

TEST_CASE("criterion 9: automatic k selection") {
  ScoreVector sv;
  sv.scores = {{"a", 0.40}, {"b", 0.35}, {"c", 0.15}, {"d", 0.10}};
  bool pass = auto_k(sv, 0.1) == 2;

  SharedRun& run = shared_run();
  REQUIRE(run.ready);
  std::ostringstream log;
  run_report(run.cfg, log);
  CsvTable sweep = read_csv(run.cfg.output_dir / "report" / "autok_sweep.csv");
  const int c_thr = sweep.column("threshold");
  const int c_frac = sweep.column("fraction_of_optimal");
  std::set<std::string> thresholds;
  for (const auto& row : sweep.rows) {
    thresholds.insert(row[c_thr]);
    const double frac = parse_double(row[c_frac], 0);
    if (!(frac > 0.0 && frac <= 1.0 + 1e-12)) pass = false;
  }
  if (thresholds.size() != run.cfg.report.autok_thresholds.size()) pass = false;
  announce(9, pass,
           "gap fixture -> k=2; sweep emitted " + std::to_string(thresholds.size()) +
               " thresholds with fractions in (0, 1]");
  CHECK(pass);
}

TEST_CASE("criterion 10: byte-identical reruns and bit-exact checkpoints") {
  RunConfig cfg = default_config();
  cfg.data.spec.n_domains = 2;
  cfg.data.spec.vocab_size = 80;
  cfg.data.spec.tokens_per_split = {{"train", 768}, {"dev", 384}, {"eval", 384}};
  cfg.data.spec.mixtures = {{"mix", {0, 1}, {0.5, 0.5}}};
  cfg.model.d_model = 32;
  cfg.model.max_seq_len = 48;
  cfg.pretrain_epochs = 1;
  cfg.train.epochs = 2;
  cfg.grid.strategies = {"tfidf", "prior"};
  cfg.grid.k_values = {{0, 0.0}, {1, 0.0}, {2, 0.0}};
  cfg.grid.seeds = {5, 10};
  cfg.grid.eval_domains = {"mix"};
  cfg.grid.sample_n = 12;
  cfg.grid.sample_len = 24;

  std::ostringstream log;
  const fs::path dir_a = fs::temp_directory_path() / "modcomp_repro_a";
  const fs::path dir_b = fs::temp_directory_path() / "modcomp_repro_b";
  for (const auto& dir : {dir_a, dir_b}) {
    fs::remove_all(dir);
    cfg.output_dir = dir;
    run_gen_data(cfg, log);
    run_train(cfg, log, 1);
    run_bench(cfg, log, 1);
  }
  bool pass = file_bytes(dir_a / "results.csv") == file_bytes(dir_b / "results.csv");
  pass = pass && !file_bytes(dir_a / "results.csv").empty();
  pass = pass && file_bytes(dir_a / "model" / "base" / "params.bin") ==
                     file_bytes(dir_b / "model" / "base" / "params.bin");

  // checkpoint round-trip: save(load(x)) reproduces the original bytes
  ParamTree loaded = load_checkpoint(dir_a / "model" / "adapters" / "dom00");
  const fs::path rt = fs::temp_directory_path() / "modcomp_repro_rt";
  fs::remove_all(rt);
  save_checkpoint(rt, loaded);
  pass = pass && file_bytes(rt / "params.bin") ==
                     file_bytes(dir_a / "model" / "adapters" / "dom00" / "params.bin");
  pass = pass && file_bytes(rt / "manifest.json") ==
                     file_bytes(dir_a / "model" / "adapters" / "dom00" / "manifest.json");

  announce(10, pass, "two full runs byte-identical; checkpoint round-trip bit-exact");
  CHECK(pass);
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  fs::remove_all(rt);
}
