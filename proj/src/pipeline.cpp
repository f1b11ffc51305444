#include "modcomp/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <set>
#include <thread>

#include "json.hpp"
#include "modcomp/csv.hpp"
#include "modcomp/metareg.hpp"
#include "modcomp/trainer.hpp"

namespace modcomp {

namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double elapsed_seconds(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void append_timing(const RunConfig& cfg, const std::string& command, const std::string& phase,
                   double seconds) {
  const auto dir = cfg.output_dir / "meta";
  std::filesystem::create_directories(dir);
  const auto path = dir / "timings.csv";
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  if (fresh) out << "command,phase,wall_seconds\n";
  out << command << ',' << phase << ',' << fmt_double(seconds) << '\n';
}

void write_run_meta(const RunConfig& cfg, const std::string& command) {
  const auto dir = cfg.output_dir / "meta";
  std::filesystem::create_directories(dir);
  json j;
  j["command"] = command;
  j["unix_time"] = static_cast<std::int64_t>(
      std::chrono::duration_cast<std::chrono::seconds>(
          std::chrono::system_clock::now().time_since_epoch())
          .count());
  std::ofstream out(dir / "run_meta.json", std::ios::trunc);
  out << j.dump(2) << "\n";
  // resolved configuration snapshot for reproducing the run
  std::ofstream echo(dir / "config_echo.json", std::ios::trunc);
  echo << config_to_json_text(cfg);
}

// Bounded task runner; each task writes only its own output slot, so the
// result is independent of scheduling.
void run_tasks(std::size_t count, int jobs, const std::function<void(std::size_t)>& task) {
  if (jobs <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  const int n_threads = std::min<std::size_t>(jobs, count);
  for (int t = 0; t < n_threads; ++t) {
    pool.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          task(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

json model_config_to_json(const ModelConfig& m) {
  return {{"n_layers", m.n_layers},   {"d_model", m.d_model},
          {"n_heads", m.n_heads},     {"vocab_size", m.vocab_size},
          {"max_seq_len", m.max_seq_len}, {"reduction_factor", m.reduction_factor},
          {"tie_head", m.tie_head}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig m;
  m.n_layers = j.at("n_layers").get<int>();
  m.d_model = j.at("d_model").get<int>();
  m.n_heads = j.at("n_heads").get<int>();
  m.vocab_size = j.at("vocab_size").get<int>();
  m.max_seq_len = j.at("max_seq_len").get<int>();
  m.reduction_factor = j.at("reduction_factor").get<int>();
  m.tie_head = j.at("tie_head").get<bool>();
  return m;
}

std::string score_file_name(const std::string& strategy, const std::string& domain,
                            std::uint64_t seed) {
  return strategy + "_" + domain + "_s" + std::to_string(seed) + ".json";
}

}  // namespace

std::filesystem::path corpus_dir(const RunConfig& cfg) { return cfg.output_dir / "corpus"; }
std::filesystem::path base_dir(const RunConfig& cfg) { return cfg.output_dir / "model" / "base"; }
std::filesystem::path adapter_dir(const RunConfig& cfg, const std::string& domain_id) {
  return cfg.output_dir / "model" / "adapters" / domain_id;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

void run_gen_data(const RunConfig& cfg, std::ostream& log) {
  const auto started = Clock::now();
  CorpusSet corpus = cfg.data.synthetic
                         ? generate_synthetic(cfg.data.spec)
                         : ingest_external(cfg.data.files, cfg.data.file_vocab_budget,
                                           cfg.data.file_eval_domains);
  save_corpus(corpus_dir(cfg), corpus);

  // realized train-split type overlap, also written next to the corpus
  log << "domain overlap (train-split token types):\n";
  CsvWriter overlap(corpus_dir(cfg) / "overlap.csv", [&] {
    std::vector<std::string> h = {"domain"};
    for (const auto& d : corpus.domains) h.push_back(d.domain_id);
    return h;
  }());
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%10s", "");
  log << buf;
  for (const auto& d : corpus.domains) {
    std::snprintf(buf, sizeof(buf), "%10s", d.domain_id.c_str());
    log << buf;
  }
  log << "\n";
  for (const auto& a : corpus.domains) {
    std::vector<std::string> row = {a.domain_id};
    std::snprintf(buf, sizeof(buf), "%10s", a.domain_id.c_str());
    log << buf;
    for (const auto& b : corpus.domains) {
      const double o = type_overlap(a, b, "train");
      row.push_back(fmt_double(o));
      std::snprintf(buf, sizeof(buf), "%10.3f", o);
      log << buf;
    }
    log << "\n";
    overlap.row(row);
  }
  log << "corpus written to " << corpus_dir(cfg).string() << " (vocab "
      << corpus.vocab.size() << ", domains " << corpus.domains.size() << ")\n";
  write_run_meta(cfg, "gen-data");
  append_timing(cfg, "gen-data", "total", elapsed_seconds(started));
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

namespace {

ModelConfig resolved_model_config(const RunConfig& cfg, const CorpusSet& corpus) {
  ModelConfig m = cfg.model;
  if (m.vocab_size == 0) m.vocab_size = corpus.vocab.size();
  m.validate();
  return m;
}

}  // namespace

void run_train(const RunConfig& cfg, std::ostream& log, int jobs) {
  const auto started = Clock::now();
  CorpusSet corpus = load_corpus(corpus_dir(cfg));
  const ModelConfig model_cfg = resolved_model_config(cfg, corpus);

  BaseModel base;
  const auto bdir = base_dir(cfg);
  if (std::filesystem::exists(bdir / "manifest.json")) {
    std::ifstream mc(bdir / "model_config.json");
    if (!mc) throw DataError("train: missing " + (bdir / "model_config.json").string());
    json j;
    mc >> j;
    base.config = model_config_from_json(j);
    try {
      base.phi = load_checkpoint(bdir);
    } catch (const SetupError& e) {
      throw DataError(e.what());
    }
    log << "base checkpoint present, reusing " << bdir.string() << "\n";
  } else {
    base = init_base(model_cfg, cfg.init_seed);
    if (cfg.pretrain_epochs > 0) {
      TrainConfig pre = cfg.train;
      pre.epochs = cfg.pretrain_epochs;
      // pretrain on the shared-pool corpus when the archive provides one, so
      // domain-exclusive knowledge enters only through adapters
      std::vector<const DomainCorpus*> train_corpora;
      bool general = false;
      for (const auto& d : corpus.domains) {
        if (d.domain_id == "general") {
          train_corpora = {&d};
          general = true;
          break;
        }
      }
      if (!general)
        for (const auto& id : corpus.training_domain_ids)
          train_corpora.push_back(&corpus.domain(id));
      const auto losses = pretrain_base(base, train_corpora, pre);
      log << "pretrained base on " << (general ? "'general'" : "the training domains") << " for "
          << losses.size() << " epochs, final loss " << fmt_double(losses.back()) << "\n";
    }
    save_checkpoint(bdir, base.phi);
    std::ofstream mc(bdir / "model_config.json", std::ios::trunc);
    mc << model_config_to_json(base.config).dump(2) << "\n";
  }

  struct DomainLog {
    std::vector<double> losses;
  };
  std::vector<DomainLog> logs(corpus.training_domain_ids.size());

  run_tasks(corpus.training_domain_ids.size(), jobs, [&](std::size_t i) {
    const std::string& id = corpus.training_domain_ids[i];
    const auto dir = adapter_dir(cfg, id);
    if (std::filesystem::exists(dir / "manifest.json")) {
      ParamTree theta;
      try {
        theta = load_checkpoint(dir);
      } catch (const SetupError& e) {
        throw DataError(e.what());
      }
      std::ifstream hf(dir / "history.json");
      if (!hf) throw DataError("train: missing " + (dir / "history.json").string());
      json h;
      try {
        hf >> h;
        logs[i].losses = h.at("epoch_losses").get<std::vector<double>>();
      } catch (const json::exception& e) {
        throw DataError("train: corrupted " + (dir / "history.json").string() + ": " + e.what());
      }
      return;
    }
    TrainResult result = train_adapter(base, corpus.domain(id), cfg.train);
    save_checkpoint(dir, result.adapter.theta);
    json h;
    h["epoch_losses"] = result.epoch_losses;
    std::ofstream hf(dir / "history.json", std::ios::trunc);
    hf << h.dump(2) << "\n";
    logs[i].losses = result.epoch_losses;
  });

  // modeled seconds per epoch: packed token count times training cost
  CsvWriter tl(cfg.output_dir / "training_log.csv", {"domain", "epoch", "loss", "seconds"});
  for (std::size_t i = 0; i < corpus.training_domain_ids.size(); ++i) {
    const std::string& id = corpus.training_domain_ids[i];
    const auto chunks = pack_sequences(corpus.domain(id).split("train"), base.config.max_seq_len);
    std::int64_t flops = 0;
    for (const auto& c : chunks)
      flops += train_flops(base.config, static_cast<int>(c.size()) - 1, true);
    const double epoch_seconds = modeled_seconds(flops, cfg.energy);
    for (std::size_t e = 0; e < logs[i].losses.size(); ++e)
      tl.row({id, std::to_string(e + 1), fmt_double(logs[i].losses[e]),
              fmt_double(epoch_seconds)});
    log << "adapter " << id << ": final loss "
        << (logs[i].losses.empty() ? "n/a" : fmt_double(logs[i].losses.back())) << "\n";
  }
  write_run_meta(cfg, "train");
  append_timing(cfg, "train", "total", elapsed_seconds(started));
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

LoadedArtifacts load_artifacts(const RunConfig& cfg) {
  LoadedArtifacts art;
  art.corpus = load_corpus(corpus_dir(cfg));
  const auto bdir = base_dir(cfg);
  if (!std::filesystem::exists(bdir / "manifest.json"))
    throw SetupError("bench: missing base checkpoint " + (bdir / "manifest.json").string());
  std::ifstream mc(bdir / "model_config.json");
  if (!mc) throw SetupError("bench: missing " + (bdir / "model_config.json").string());
  json j;
  mc >> j;
  art.base.config = model_config_from_json(j);
  art.base.phi = load_checkpoint(bdir);
  for (const auto& id : art.corpus.training_domain_ids) {
    const auto dir = adapter_dir(cfg, id);
    if (!std::filesystem::exists(dir / "manifest.json"))
      throw SetupError("bench: missing adapter checkpoint " + (dir / "manifest.json").string());
    AdapterModule adapter;
    adapter.domain_id = id;
    adapter.theta = load_checkpoint(dir);
    art.adapters.push_back(std::move(adapter));
  }
  return art;
}

namespace {

struct BenchContext {
  const RunConfig* cfg = nullptr;
  const LoadedArtifacts* art = nullptr;
  std::vector<const AdapterModule*> adapter_ptrs;

  // per eval domain: packed eval chunks and the bare-base perplexity
  std::map<std::string, std::vector<TokenSeq>> eval_chunks;
  std::map<std::string, double> base_ppl;
  std::map<std::string, std::int64_t> base_eval_flops;     // forward, no adapter
  std::map<std::string, std::int64_t> adapter_eval_flops;  // forward, with adapter

  // member prediction rows per (adapter index, eval domain)
  std::map<std::string, std::vector<std::vector<Tensor>>> member_rows;

  // scores per (strategy, eval domain, seed)
  std::map<std::string, ScoreVector> scores;
  std::map<std::string, std::int64_t> scoring_flops;

  std::mutex mu;
};

std::string score_key(const std::string& strategy, const std::string& domain, std::uint64_t seed) {
  return strategy + "|" + domain + "|" + std::to_string(seed);
}

// Sampled scoring inputs for one (eval domain, seed).
struct ScoreSamples {
  std::map<std::string, std::vector<TokenSeq>> train_dev;
  std::vector<TokenSeq> eval;
};

ScoreSamples draw_samples(const BenchContext& ctx, const std::string& eval_domain,
                          std::uint64_t seed) {
  const GridConfig& grid = ctx.cfg->grid;
  ScoreSamples s;
  for (const auto& id : ctx.art->corpus.training_domain_ids)
    s.train_dev[id] = sample_sequences(ctx.art->corpus.domain(id), "dev", grid.sample_n,
                                       grid.sample_len, seed);
  s.eval = sample_sequences(ctx.art->corpus.domain(eval_domain), "dev", grid.sample_n,
                            grid.sample_len, seed);
  return s;
}

std::int64_t token_count(const std::vector<TokenSeq>& seqs) {
  std::int64_t n = 0;
  for (const auto& s : seqs) n += static_cast<std::int64_t>(s.size());
  return n;
}

// Modeled flops of running one scoring strategy standalone.
std::int64_t modeled_scoring_flops(const BenchContext& ctx, const std::string& strategy,
                                   const ScoreSamples& samples) {
  const ModelConfig& m = ctx.art->base.config;
  const std::int64_t n_adapters = static_cast<std::int64_t>(ctx.adapter_ptrs.size());
  if (strategy == "uniform") return 0;
  if (strategy == "sentsim" || strategy == "tfidf") {
    std::int64_t tokens = token_count(samples.eval);
    for (const auto& [id, seqs] : samples.train_dev) tokens += token_count(seqs);
    std::int64_t flops = 2 * tokens * m.d_model;  // embed or count
    if (strategy == "sentsim") {
      const std::int64_t pairs = static_cast<std::int64_t>(samples.eval.size()) *
                                 static_cast<std::int64_t>(ctx.cfg->grid.sample_n) * n_adapters;
      flops += 2 * pairs * m.d_model;
    }
    return flops;
  }
  // model-based: one forward per sample per adapter
  std::int64_t flops = 0;
  for (const auto& seq : samples.eval) {
    if (seq.size() < 2) continue;
    flops += forward_flops(m, static_cast<int>(seq.size()) - 1, true) * n_adapters;
  }
  return flops;
}

ScoreVector compute_scores(const BenchContext& ctx, const std::string& strategy,
                           const ScoreSamples& samples) {
  const GridConfig& grid = ctx.cfg->grid;
  if (strategy == "uniform") {
    ScoreVector sv;
    sv.strategy = "uniform";
    for (const auto& id : ctx.art->corpus.training_domain_ids) sv.scores.emplace_back(id, 1.0);
    return sv;
  }
  if (strategy == "sentsim") {
    MeanTokenEmbedder embedder(ctx.art->base);
    return score_sentsim(samples.train_dev, samples.eval, embedder);
  }
  if (strategy == "tfidf") return score_tfidf(samples.train_dev, samples.eval);
  if (strategy == "prior")
    return score_prior(ctx.art->base, ctx.adapter_ptrs, samples.eval, grid.prior);
  if (strategy == "entropy")
    return score_entropy(ctx.art->base, ctx.adapter_ptrs, samples.eval, grid.entropy_batch);
  throw ConfigError("bench: unknown strategy '" + strategy + "'");
}

// Member prediction rows for ensemble reuse: probability rows by default,
// logits when mixing in logit space.
std::vector<Tensor> member_prediction_rows(const BenchContext& ctx, const AdapterModule& adapter,
                                           const std::vector<TokenSeq>& chunks) {
  std::vector<Tensor> rows;
  rows.reserve(chunks.size());
  for (const auto& chunk : chunks) {
    std::span<const int> inputs(chunk.data(), chunk.size() - 1);
    Tensor logits = forward(ctx.art->base, &adapter, inputs, nullptr);
    rows.push_back(ctx.cfg->grid.ensemble_probability_space ? softmax<float>(nullptr, logits)
                                                            : logits);
  }
  return rows;
}

double ensemble_ppl_from_rows(const BenchContext& ctx,
                              const std::vector<std::pair<int, double>>& members,
                              const std::string& domain) {
  const auto& rows_by_adapter = ctx.member_rows.at(domain);
  const auto& chunks = ctx.eval_chunks.at(domain);
  std::vector<Tensor> mixed;
  mixed.reserve(chunks.size());
  for (std::size_t c = 0; c < chunks.size(); ++c) {
    Tensor acc = Tensor::zeros(rows_by_adapter[members[0].first][c].shape);
    for (const auto& [idx, w] : members)
      kern::acc_scaled(acc.ptr(), rows_by_adapter[idx][c].ptr(), static_cast<float>(w),
                       acc.numel());
    if (!ctx.cfg->grid.ensemble_probability_space) acc = softmax<float>(nullptr, acc);
    mixed.push_back(std::move(acc));
  }
  return perplexity_from_probs(mixed, chunks);
}

struct Cell {
  std::string strategy;
  Weighting weighting;
  Method method;
  KSpec kspec;
  std::string domain;
  std::uint64_t seed;
};

}  // namespace

std::vector<EvalRecord> run_bench(const RunConfig& cfg, std::ostream& log, int jobs) {
  const auto started = Clock::now();
  BenchContext ctx;
  ctx.cfg = &cfg;
  LoadedArtifacts art = load_artifacts(cfg);
  ctx.art = &art;
  for (const auto& a : art.adapters) ctx.adapter_ptrs.push_back(&a);
  const int n_adapters = static_cast<int>(art.adapters.size());

  for (const auto& domain : cfg.grid.eval_domains) {
    // each eval sequence is scored on its own: stored domain knowledge has to
    // carry the prediction rather than long packed context
    std::vector<TokenSeq> chunks;
    for (const auto& seq : art.corpus.domain(domain).split("eval")) {
      if (seq.size() < 2) continue;
      if (static_cast<int>(seq.size()) > art.base.config.max_seq_len)
        chunks.emplace_back(seq.begin(), seq.begin() + art.base.config.max_seq_len);
      else
        chunks.push_back(seq);
    }
    if (chunks.empty()) throw DataError("bench: eval split too short for '" + domain + "'");
    std::int64_t base_flops = 0, adapter_flops = 0;
    for (const auto& c : chunks) {
      base_flops += forward_flops(art.base.config, static_cast<int>(c.size()) - 1, false);
      adapter_flops += forward_flops(art.base.config, static_cast<int>(c.size()) - 1, true);
    }
    ctx.base_eval_flops[domain] = base_flops;
    ctx.adapter_eval_flops[domain] = adapter_flops;
    ctx.eval_chunks.emplace(domain, std::move(chunks));
  }

  // shared caches: base perplexities, member prediction rows, scores
  {
    std::vector<std::string> domains = cfg.grid.eval_domains;
    run_tasks(domains.size(), jobs, [&](std::size_t i) {
      const std::string& domain = domains[i];
      ComposedModel bare;
      bare.kind = ComposedModel::Kind::kBase;
      bare.base = &art.base;
      const double ppl = perplexity(bare, ctx.eval_chunks.at(domain));
      const bool need_members =
          std::find(cfg.grid.methods.begin(), cfg.grid.methods.end(), "ensemble") !=
          cfg.grid.methods.end();
      std::vector<std::vector<Tensor>> rows(n_adapters);
      if (need_members)
        for (int a = 0; a < n_adapters; ++a)
          rows[a] = member_prediction_rows(ctx, art.adapters[a], ctx.eval_chunks.at(domain));
      std::lock_guard<std::mutex> lock(ctx.mu);
      ctx.base_ppl[domain] = ppl;
      ctx.member_rows[domain] = std::move(rows);
    });
  }
  {
    struct ScoreTask {
      std::string strategy, domain;
      std::uint64_t seed;
    };
    std::vector<ScoreTask> tasks;
    for (const auto& strategy : cfg.grid.strategies)
      for (const auto& domain : cfg.grid.eval_domains)
        for (std::uint64_t seed : cfg.grid.seeds) tasks.push_back({strategy, domain, seed});
    run_tasks(tasks.size(), jobs, [&](std::size_t i) {
      const auto& t = tasks[i];
      const ScoreSamples samples = draw_samples(ctx, t.domain, t.seed);
      ScoreVector sv = compute_scores(ctx, t.strategy, samples);
      const std::int64_t flops = modeled_scoring_flops(ctx, t.strategy, samples);
      std::lock_guard<std::mutex> lock(ctx.mu);
      ctx.scores.emplace(score_key(t.strategy, t.domain, t.seed), std::move(sv));
      ctx.scoring_flops.emplace(score_key(t.strategy, t.domain, t.seed), flops);
    });
  }

  // save score vectors for the composer, metareg, and report commands
  const auto scores_dir = cfg.output_dir / "scores";
  std::filesystem::create_directories(scores_dir);
  for (const auto& strategy : cfg.grid.strategies) {
    for (const auto& domain : cfg.grid.eval_domains) {
      for (std::uint64_t seed : cfg.grid.seeds) {
        const ScoreVector& sv = ctx.scores.at(score_key(strategy, domain, seed));
        WeightVector norm = normalize(sv, sv.domain_ids());
        json j;
        j["strategy"] = strategy;
        j["eval_domain"] = domain;
        j["seed"] = seed;
        json domains = json::array(), raw = json::array(), normalized = json::array();
        for (const auto& [id, s] : sv.scores) {
          domains.push_back(id);
          raw.push_back(s);
        }
        for (const auto& [id, w] : norm.weights) normalized.push_back(w);
        j["domains"] = domains;
        j["raw"] = raw;
        j["normalized"] = normalized;
        std::ofstream out(scores_dir / score_file_name(strategy, domain, seed), std::ios::trunc);
        out << j.dump(2) << "\n";
      }
    }
  }

  // the grid, in canonical order
  std::vector<Cell> cells;
  for (const auto& strategy : cfg.grid.strategies) {
    for (const auto& weighting : cfg.grid.weightings) {
      const Weighting w = weighting_from_string(weighting);
      if (strategy == "uniform" && w == Weighting::kUniformAfterSelection) continue;
      for (const auto& method : cfg.grid.methods) {
        const Method m = method_from_string(method);
        for (const auto& kspec : cfg.grid.k_values) {
          for (const auto& domain : cfg.grid.eval_domains) {
            for (std::uint64_t seed : cfg.grid.seeds)
              cells.push_back({strategy, w, m, kspec, domain, seed});
          }
        }
      }
    }
  }

  std::vector<EvalRecord> records(cells.size());
  run_tasks(cells.size(), jobs, [&](std::size_t i) {
    const Cell& cell = cells[i];
    const ScoreVector& scores = ctx.scores.at(score_key(cell.strategy, cell.domain, cell.seed));
    CompositionPlan plan;
    plan.strategy = cell.strategy;
    plan.k = cell.kspec.k;
    plan.auto_threshold = cell.kspec.auto_threshold;
    plan.weighting = cell.weighting;
    plan.method = cell.method;
    plan.seed = cell.seed;

    const int realized_k =
        plan.uses_auto_k() ? auto_k(scores, plan.auto_threshold) : plan.k;
    if (realized_k > n_adapters)
      throw ConfigError("bench: grid k exceeds the number of training adapters");

    EvalRecord rec;
    rec.strategy = cell.strategy;
    rec.method = to_string(cell.method);
    rec.weighting = to_string(cell.weighting);
    rec.k = realized_k;
    rec.eval_domain = cell.domain;
    rec.seed = cell.seed;

    std::int64_t flops = 0;
    if (realized_k == 0) {
      rec.perplexity = ctx.base_ppl.at(cell.domain);
      flops = ctx.base_eval_flops.at(cell.domain);
    } else {
      flops += ctx.scoring_flops.at(score_key(cell.strategy, cell.domain, cell.seed));
      const std::vector<std::string> selected = select_top_k(scores, realized_k);
      WeightVector weights = cell.weighting == Weighting::kScored ? normalize(scores, selected)
                                                                  : score_uniform(selected);
      if (cell.method == Method::kEnsemble) {
        std::vector<std::pair<int, double>> members;
        for (const auto& [id, w] : weights.weights) {
          for (int a = 0; a < n_adapters; ++a)
            if (art.adapters[a].domain_id == id) members.emplace_back(a, w);
        }
        rec.perplexity = ensemble_ppl_from_rows(ctx, members, cell.domain);
        flops += realized_k * ctx.adapter_eval_flops.at(cell.domain);
      } else {
        std::vector<const AdapterModule*> chosen;
        for (const auto& [id, w] : weights.weights)
          for (int a = 0; a < n_adapters; ++a)
            if (art.adapters[a].domain_id == id) chosen.push_back(&art.adapters[a]);
        ComposedModel merged;
        merged.kind = ComposedModel::Kind::kMerged;
        merged.base = &art.base;
        merged.merged = average_params(chosen, weights);
        merged.merged_k = realized_k;
        rec.perplexity = perplexity(merged, ctx.eval_chunks.at(cell.domain));
        flops += merge_flops(art.base.config, realized_k);
        flops += ctx.adapter_eval_flops.at(cell.domain);
      }
    }
    rec.wall_seconds = modeled_seconds(flops, cfg.energy);
    rec.co2_g = co2_estimate(rec.wall_seconds / 3600.0, cfg.energy);
    records[i] = rec;
  });

  // results.csv
  CsvWriter results(cfg.output_dir / "results.csv",
                    {"strategy", "method", "weighting", "k", "eval_domain", "seed", "perplexity",
                     "wall_seconds", "co2_g"});
  for (const auto& r : records)
    results.row({r.strategy, r.method, r.weighting, std::to_string(r.k), r.eval_domain,
                 std::to_string(r.seed), fmt_double(r.perplexity), fmt_double(r.wall_seconds),
                 fmt_double(r.co2_g)});

  // summary.csv: per (strategy, weighting, k, domain) means/stds per method,
  // Wilcoxon over the (domain, seed) pairing, and scored-minus-uniform deltas
  const auto agg = aggregate(records);
  auto agg_of = [&](const std::string& strategy, const std::string& method,
                    const std::string& weighting, int k,
                    const std::string& domain) -> const Aggregate* {
    EvalRecord probe;
    probe.strategy = strategy;
    probe.method = method;
    probe.weighting = weighting;
    probe.k = k;
    probe.eval_domain = domain;
    auto it = agg.find(cell_key(probe));
    return it == agg.end() ? nullptr : &it->second;
  };

  std::set<std::tuple<std::string, std::string, int>> group_keys;
  for (const auto& r : records) group_keys.insert({r.strategy, r.weighting, r.k});

  CsvWriter summary(cfg.output_dir / "summary.csv",
                    {"strategy", "weighting", "k", "eval_domain", "avg_mean", "avg_std", "ens_mean",
                     "ens_std", "wilcoxon_p_avg_vs_ens", "delta_weighted_avg",
                     "delta_weighted_ens"});
  for (const auto& [strategy, weighting, k] : group_keys) {
    // paired samples over (domain, seed), canonical order
    std::vector<double> avg_ppl, ens_ppl;
    for (const auto& domain : cfg.grid.eval_domains) {
      for (std::uint64_t seed : cfg.grid.seeds) {
        const EvalRecord* ra = nullptr;
        const EvalRecord* re = nullptr;
        for (const auto& r : records) {
          if (r.strategy == strategy && r.weighting == weighting && r.k == k &&
              r.eval_domain == domain && r.seed == seed) {
            if (r.method == "average") ra = &r;
            if (r.method == "ensemble") re = &r;
          }
        }
        if (ra && re) {
          avg_ppl.push_back(ra->perplexity);
          ens_ppl.push_back(re->perplexity);
        }
      }
    }
    std::string p_str;
    if (!avg_ppl.empty()) {
      const WilcoxonResult wr = wilcoxon_signed_rank(avg_ppl, ens_ppl);
      p_str = wr.degenerate ? "" : fmt_double(wr.p_two_sided);
    }
    for (const auto& domain : cfg.grid.eval_domains) {
      const Aggregate* a = agg_of(strategy, "average", weighting, k, domain);
      const Aggregate* e = agg_of(strategy, "ensemble", weighting, k, domain);
      if (!a && !e) continue;
      std::string d_avg, d_ens;
      if (weighting == "scored" && k > 0) {
        const Aggregate* au = agg_of(strategy, "average", "uniform-after-selection", k, domain);
        const Aggregate* eu = agg_of(strategy, "ensemble", "uniform-after-selection", k, domain);
        if (a && au) d_avg = fmt_double(a->mean - au->mean);
        if (e && eu) d_ens = fmt_double(e->mean - eu->mean);
      }
      summary.row({strategy, weighting, std::to_string(k), domain,
                   a ? fmt_double(a->mean) : "", a ? fmt_double(a->stddev) : "",
                   e ? fmt_double(e->mean) : "", e ? fmt_double(e->stddev) : "", p_str, d_avg,
                   d_ens});
    }
  }

  log << "bench: " << records.size() << " records -> " << (cfg.output_dir / "results.csv").string()
      << "\n";
  write_run_meta(cfg, "bench");
  append_timing(cfg, "bench", "total", elapsed_seconds(started));
  return records;
}

// ---------------------------------------------------------------------------
// metareg
// ---------------------------------------------------------------------------

namespace {

struct ResultsData {
  std::vector<EvalRecord> records;
  std::vector<std::string> eval_domains;   // sorted distinct
  std::vector<std::string> training_domains;
};

ResultsData read_results(const RunConfig& cfg, const std::filesystem::path& override_path) {
  const auto path = override_path.empty() ? cfg.output_dir / "results.csv" : override_path;
  CsvTable table = read_csv(path);
  const int c_strategy = table.column("strategy");
  const int c_method = table.column("method");
  const int c_weighting = table.column("weighting");
  const int c_k = table.column("k");
  const int c_domain = table.column("eval_domain");
  const int c_seed = table.column("seed");
  const int c_ppl = table.column("perplexity");
  const int c_wall = table.column("wall_seconds");
  const int c_co2 = table.column("co2_g");

  ResultsData out;
  std::set<std::string> domains;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const long line = table.line_numbers[i];
    EvalRecord r;
    r.strategy = row[c_strategy];
    r.method = row[c_method];
    r.weighting = row[c_weighting];
    r.k = static_cast<int>(parse_int(row[c_k], line));
    r.eval_domain = row[c_domain];
    r.seed = static_cast<std::uint64_t>(parse_int(row[c_seed], line));
    r.perplexity = parse_double(row[c_ppl], line);
    r.wall_seconds = parse_double(row[c_wall], line);
    r.co2_g = parse_double(row[c_co2], line);
    if (r.k < 0 || r.perplexity <= 0.0)
      throw ParseError("results: invalid row in " + path.string(), line);
    domains.insert(r.eval_domain);
    out.records.push_back(std::move(r));
  }
  if (out.records.empty()) throw ParseError("results: no data rows in " + path.string(), 1);
  out.eval_domains.assign(domains.begin(), domains.end());
  return out;
}

// Reconstructs the composition weights of one record from its stored score
// vector; the selection rules are the composer's.
std::map<std::string, double> record_weights(const RunConfig& cfg, const EvalRecord& r,
                                             std::map<std::string, ScoreVector>& cache) {
  const std::string key = score_key(r.strategy, r.eval_domain, r.seed);
  auto it = cache.find(key);
  if (it == cache.end()) {
    const auto path =
        cfg.output_dir / "scores" / score_file_name(r.strategy, r.eval_domain, r.seed);
    std::ifstream in(path);
    if (!in) throw SetupError("metareg: missing score file " + path.string());
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ParseError("metareg: malformed " + path.string() + ": " + e.what());
    }
    ScoreVector sv;
    sv.strategy = r.strategy;
    const auto domains = j.at("domains").get<std::vector<std::string>>();
    const auto raw = j.at("raw").get<std::vector<double>>();
    for (std::size_t i = 0; i < domains.size(); ++i) sv.scores.emplace_back(domains[i], raw[i]);
    it = cache.emplace(key, std::move(sv)).first;
  }
  const std::vector<std::string> selected = select_top_k(it->second, r.k);
  const WeightVector w = r.weighting == "scored" ? normalize(it->second, selected)
                                                 : score_uniform(selected);
  std::map<std::string, double> out;
  for (const auto& [id, v] : w.weights) out[id] = v;
  return out;
}

void write_cv_rows(CsvWriter& out, const std::string& model, double alpha, const CvResult& cv) {
  for (std::size_t f = 0; f < cv.folds.size(); ++f) {
    const auto& fr = cv.folds[f];
    out.row({model, fmt_double(alpha), std::to_string(f),
             fr.pearson ? fmt_double(*fr.pearson) : "", fr.spearman ? fmt_double(*fr.spearman) : "",
             "", fr.flagged ? "1" : "0"});
  }
  out.row({model, fmt_double(alpha), "mean", fmt_double(cv.pearson_mean),
           fmt_double(cv.spearman_mean), "", std::to_string(cv.flagged_folds)});
  out.row({model, fmt_double(alpha), "pooled", fmt_double(cv.pooled_pearson),
           fmt_double(cv.pooled_spearman), fmt_double(cv.pooled_r2), ""});
}

}  // namespace

void run_metareg(const RunConfig& cfg, std::ostream& log,
                 const std::filesystem::path& results_override) {
  const auto started = Clock::now();
  ResultsData data = read_results(cfg, results_override);
  CorpusSet corpus = load_corpus(corpus_dir(cfg));

  // base perplexity per eval domain from the k = 0 rows
  std::map<std::string, double> base_ppls;
  {
    std::map<std::string, std::pair<double, int>> acc;
    for (const auto& r : data.records) {
      if (r.k != 0) continue;
      acc[r.eval_domain].first += r.perplexity;
      acc[r.eval_domain].second += 1;
    }
    for (const auto& domain : data.eval_domains) {
      auto it = acc.find(domain);
      if (it == acc.end())
        throw DataError("metareg: missing k=0 baseline rows for '" + domain + "'");
      base_ppls[domain] = it->second.first / it->second.second;
    }
  }

  // seed-averaged composition rows with reconstructed weights
  std::map<std::string, ScoreVector> score_cache;
  struct CellAcc {
    CompositionRow row;
    std::map<std::string, double> weight_sums;
    double ppl_sum = 0.0;
    int n = 0;
  };
  std::map<std::string, CellAcc> cells;
  for (const auto& r : data.records) {
    if (r.k == 0) continue;
    CellAcc& cell = cells[cell_key(r)];
    if (cell.n == 0) {
      cell.row.strategy = r.strategy;
      cell.row.method = r.method;
      cell.row.weighting = r.weighting;
      cell.row.k = r.k;
      cell.row.eval_domain = r.eval_domain;
    }
    for (const auto& [id, w] : record_weights(cfg, r, score_cache)) cell.weight_sums[id] += w;
    cell.ppl_sum += r.perplexity;
    cell.n += 1;
  }
  if (cells.empty()) throw DataError("metareg: no composition rows (k >= 1) in results");

  std::vector<CompositionRow> rows;
  for (auto& [key, cell] : cells) {
    cell.row.mean_perplexity = cell.ppl_sum / cell.n;
    for (const auto& [id, sum] : cell.weight_sums) cell.row.adapter_weights[id] = sum / cell.n;
    rows.push_back(cell.row);
  }

  static const std::vector<std::string> kStrategies = {"uniform", "sentsim", "tfidf", "prior",
                                                       "entropy"};
  static const std::vector<std::string> kMethods = {"average", "ensemble"};
  FeatureTable table = build_features(rows, base_ppls, corpus.training_domain_ids, kStrategies,
                                      kMethods, data.eval_domains);

  // deterministic column ordering is documented by the features.csv header
  {
    std::vector<std::string> header = table.column_names;
    header.push_back("target");
    header.push_back("row_key");
    CsvWriter fw(cfg.output_dir / "features.csv", header);
    for (int i = 0; i < table.x.rows; ++i) {
      std::vector<std::string> row;
      for (int j = 0; j < table.x.cols; ++j) row.push_back(fmt_double(table.x.at(i, j)));
      row.push_back(fmt_double(table.y[i]));
      row.push_back(table.row_keys[i]);
      fw.row(row);
    }
  }

  if (table.x.rows < cfg.metareg.folds)
    throw ConfigError("metareg: " + std::to_string(table.x.rows) +
                      " composition rows cannot fill " + std::to_string(cfg.metareg.folds) +
                      " folds; lower metareg.folds or widen the grid");

  CsvWriter mout(cfg.output_dir / "metareg.csv",
                 {"model", "alpha", "fold", "pearson", "spearman", "r2", "flagged"});
  CvSpec spec;
  spec.folds = cfg.metareg.folds;
  spec.fold_seed = cfg.metareg.fold_seed;
  spec.continuous_cols = table.continuous_cols;

  CvSpec base_spec = spec;
  base_spec.mean_diff_baseline = true;
  base_spec.domain_onehot_cols = table.domain_onehot_cols;
  const CvResult baseline_cv = cross_validate(table.x, table.y, base_spec);
  write_cv_rows(mout, "mean_diff", 0.0, baseline_cv);

  spec.alpha = 0.0;
  const CvResult linear_cv = cross_validate(table.x, table.y, spec);
  write_cv_rows(mout, "linear", 0.0, linear_cv);

  for (double alpha : cfg.metareg.alphas) {
    spec.alpha = alpha;
    const CvResult cv = cross_validate(table.x, table.y, spec);
    write_cv_rows(mout, "ridge", alpha, cv);
  }

  // coefficient table from the full-data linear fit
  {
    RegressionModel full = fit_ridge_pinv(table.x, table.y, 0.0, true);
    const auto report = coefficient_report(full, table.column_names, 0.1);
    CsvWriter cw(cfg.output_dir / "coefficients.csv", {"feature", "coefficient"});
    for (const auto& entry : report) cw.row({entry.name, fmt_double(entry.value)});
  }

  log << "metareg: " << table.x.rows << " rows, linear spearman(mean) "
      << fmt_double(linear_cv.spearman_mean) << " vs baseline "
      << fmt_double(baseline_cv.spearman_mean) << "\n";
  write_run_meta(cfg, "metareg");
  append_timing(cfg, "metareg", "total", elapsed_seconds(started));
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

void run_report(const RunConfig& cfg, std::ostream& log,
                const std::filesystem::path& results_override) {
  const auto started = Clock::now();
  ResultsData data = read_results(cfg, results_override);
  const auto report_dir = cfg.output_dir / "report";
  std::filesystem::create_directories(report_dir);

  // perplexity vs k, seed-averaged
  {
    const auto agg = aggregate(data.records);
    CsvWriter out(report_dir / "ppl_vs_k.csv",
                  {"strategy", "weighting", "method", "k", "eval_domain", "ppl_mean", "ppl_std"});
    for (const auto& [key, a] : agg) {
      // key: strategy|method|weighting|k|domain
      std::vector<std::string> parts;
      std::string cur;
      for (char c : key) {
        if (c == '|') {
          parts.push_back(cur);
          cur.clear();
        } else {
          cur += c;
        }
      }
      parts.push_back(cur);
      out.row({parts[0], parts[2], parts[1], parts[3], parts[4], fmt_double(a.mean),
               fmt_double(a.stddev)});
    }
  }

  // co2 vs k, seed- and domain-averaged per (strategy, method)
  {
    std::map<std::tuple<std::string, std::string, int>, std::pair<double, int>> acc;
    for (const auto& r : data.records) {
      auto& slot = acc[{r.strategy, r.method, r.k}];
      slot.first += r.co2_g;
      slot.second += 1;
    }
    CsvWriter out(report_dir / "co2_vs_k.csv", {"strategy", "method", "k", "co2_g_mean"});
    for (const auto& [key, slot] : acc)
      out.row({std::get<0>(key), std::get<1>(key), std::to_string(std::get<2>(key)),
               fmt_double(slot.first / slot.second)});
  }

  // weight distributions over all candidates, from the stored score vectors
  std::map<std::string, ScoreVector> score_cache;
  std::vector<std::string> training_domains;
  {
    CorpusSet corpus = load_corpus(corpus_dir(cfg));
    training_domains = corpus.training_domain_ids;
    std::vector<std::string> header = {"strategy", "eval_domain", "seed"};
    for (const auto& d : training_domains) header.push_back("w_" + d);
    CsvWriter out(report_dir / "weights_distribution.csv", header);
    std::set<std::string> strategies;
    std::set<std::uint64_t> seeds;
    for (const auto& r : data.records) {
      strategies.insert(r.strategy);
      seeds.insert(r.seed);
    }
    for (const auto& strategy : strategies) {
      for (const auto& domain : data.eval_domains) {
        for (std::uint64_t seed : seeds) {
          const auto path =
              cfg.output_dir / "scores" / score_file_name(strategy, domain, seed);
          std::ifstream in(path);
          if (!in) continue;  // strategy/seed not part of this run
          json j;
          try {
            in >> j;
          } catch (const json::exception& e) {
            throw ParseError("report: malformed " + path.string() + ": " + e.what());
          }
          const auto domains = j.at("domains").get<std::vector<std::string>>();
          const auto normalized = j.at("normalized").get<std::vector<double>>();
          std::map<std::string, double> w;
          for (std::size_t i = 0; i < domains.size(); ++i) w[domains[i]] = normalized[i];
          std::vector<std::string> row = {strategy, domain, std::to_string(seed)};
          for (const auto& d : training_domains) row.push_back(fmt_double(w.count(d) ? w[d] : 0.0));
          out.row(row);

          ScoreVector sv;
          sv.strategy = strategy;
          const auto raw = j.at("raw").get<std::vector<double>>();
          for (std::size_t i = 0; i < domains.size(); ++i) sv.scores.emplace_back(domains[i], raw[i]);
          score_cache.emplace(score_key(strategy, domain, seed), std::move(sv));
        }
      }
    }
  }

  // auto-k threshold sweep over the corpus-based strategies: fraction of the
  // oracle-best perplexity attained at the automatically chosen k
  {
    std::map<std::tuple<std::string, std::string, std::string, std::uint64_t, int>, double> ppl_at;
    std::set<std::uint64_t> seeds;
    std::set<std::string> methods;
    for (const auto& r : data.records) {
      if (r.weighting != "scored") continue;
      ppl_at[{r.strategy, r.method, r.eval_domain, r.seed, r.k}] = r.perplexity;
      seeds.insert(r.seed);
      methods.insert(r.method);
    }
    CsvWriter out(report_dir / "autok_sweep.csv",
                  {"threshold", "strategy", "method", "fraction_of_optimal", "cells"});
    std::vector<std::string> corpus_strategies;
    for (const auto& s : {"sentsim", "tfidf"})
      if (score_cache.count(score_key(s, data.eval_domains.front(), *seeds.begin())))
        corpus_strategies.push_back(s);
    for (double threshold : cfg.report.autok_thresholds) {
      std::map<std::pair<std::string, std::string>, std::pair<double, int>> acc;
      for (const auto& strategy : corpus_strategies) {
        for (const auto& method : methods) {
          for (const auto& domain : data.eval_domains) {
            for (std::uint64_t seed : seeds) {
              auto sit = score_cache.find(score_key(strategy, domain, seed));
              if (sit == score_cache.end()) continue;
              const int k_hat = auto_k(sit->second, threshold);
              auto pit = ppl_at.find({strategy, method, domain, seed, k_hat});
              if (pit == ppl_at.end()) continue;  // k not covered by the grid
              double best = pit->second;
              for (const auto& [key, p] : ppl_at) {
                if (std::get<0>(key) == strategy && std::get<1>(key) == method &&
                    std::get<2>(key) == domain && std::get<3>(key) == seed && std::get<4>(key) >= 1)
                  best = std::min(best, p);
              }
              auto& slot = acc[{strategy, method}];
              slot.first += best / pit->second;
              slot.second += 1;
            }
          }
        }
      }
      double total_sum = 0.0;
      int total_n = 0;
      for (const auto& [key, slot] : acc) {
        out.row({fmt_double(threshold), key.first, key.second,
                 fmt_double(slot.first / slot.second), std::to_string(slot.second)});
        total_sum += slot.first;
        total_n += slot.second;
      }
      if (total_n > 0)
        out.row({fmt_double(threshold), "all", "all", fmt_double(total_sum / total_n),
                 std::to_string(total_n)});
    }
  }

  log << "report: series written to " << report_dir.string() << "\n";
  write_run_meta(cfg, "report");
  append_timing(cfg, "report", "total", elapsed_seconds(started));
}

}  // namespace modcomp
