#pragma once

#include <filesystem>
#include <iosfwd>

#include "modcomp/config.hpp"
#include "modcomp/evaluator.hpp"

namespace modcomp {

// Command implementations backing the CLI; the acceptance suite calls these
// directly. All outputs land under cfg.output_dir:
//   corpus/            vocab.json, corpus.json, <domain>/{train,dev,eval}.tokens
//   model/base/        base checkpoint
//   model/adapters/<domain>/
//   training_log.csv   (domain, epoch, loss, seconds)
//   results.csv        one row per grid cell
//   summary.csv        per-cell aggregates, Wilcoxon p, weighting deltas
//   scores/            per (strategy, eval domain, seed) score vectors
//   report/            figure data series
//   meta/              measured wall-clock timings and the run timestamp
// Duration columns in CSVs are modeled compute seconds (workmodel.hpp);
// measured times live in meta/timings.csv so identical runs stay
// byte-identical.

void run_gen_data(const RunConfig& cfg, std::ostream& log);
void run_train(const RunConfig& cfg, std::ostream& log, int jobs = 1);
std::vector<EvalRecord> run_bench(const RunConfig& cfg, std::ostream& log, int jobs = 1);
void run_metareg(const RunConfig& cfg, std::ostream& log,
                 const std::filesystem::path& results_override = {});
void run_report(const RunConfig& cfg, std::ostream& log,
                const std::filesystem::path& results_override = {});

// Shared helpers between commands and tests.
std::filesystem::path corpus_dir(const RunConfig& cfg);
std::filesystem::path base_dir(const RunConfig& cfg);
std::filesystem::path adapter_dir(const RunConfig& cfg, const std::string& domain_id);

struct LoadedArtifacts {
  CorpusSet corpus;
  BaseModel base;
  std::vector<AdapterModule> adapters;  // training-domain order
};

// Loads corpus, base, and all training-domain adapters; missing artifacts
// raise SetupError naming the path.
LoadedArtifacts load_artifacts(const RunConfig& cfg);

}  // namespace modcomp
