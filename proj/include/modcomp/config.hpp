#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "modcomp/corpus.hpp"
#include "modcomp/model.hpp"
#include "modcomp/scoring.hpp"
#include "modcomp/trainer.hpp"
#include "modcomp/workmodel.hpp"

namespace modcomp {

// Grid axis entry: a fixed k or a gap threshold for automatic selection.
struct KSpec {
  int k = 0;
  double auto_threshold = 0.0;

  bool is_auto() const { return auto_threshold > 0.0; }
  std::string label() const;
};

struct GridConfig {
  std::vector<std::string> strategies = {"uniform", "sentsim", "tfidf", "prior", "entropy"};
  std::vector<std::string> methods = {"average", "ensemble"};
  std::vector<std::string> weightings = {"scored", "uniform-after-selection"};
  std::vector<KSpec> k_values;
  std::vector<std::uint64_t> seeds = {5, 10, 42, 88};
  std::vector<std::string> eval_domains;
  int sample_n = 100;       // sequences drawn per domain for scoring
  int sample_len = 48;
  int entropy_batch = 10;
  PriorConfig prior;
  bool ensemble_probability_space = true;

  void validate() const;
};

struct MetaregConfig {
  std::vector<double> alphas = {0.0, 0.01, 0.06, 0.17, 0.5, 1.0};
  int folds = 10;
  std::uint64_t fold_seed = 11;
};

struct ReportConfig {
  std::vector<double> autok_thresholds = {0.001, 0.002, 0.003, 0.004, 0.005,
                                          0.006, 0.007, 0.008, 0.009, 0.010};
};

struct DataConfig {
  bool synthetic = true;
  SyntheticSpec spec;
  std::map<std::string, std::filesystem::path> files;
  std::vector<std::string> file_eval_domains;
  int file_vocab_budget = 4096;
};

struct RunConfig {
  DataConfig data;
  ModelConfig model;  // vocab_size 0 resolves from the corpus archive
  std::uint64_t init_seed = 1234;
  int pretrain_epochs = 3;
  TrainConfig train;
  GridConfig grid;
  MetaregConfig metareg;
  ReportConfig report;
  EnergyModel energy;
  std::filesystem::path output_dir = "out";

  void validate() const;
};

// Desk-scale defaults: four synthetic training domains plus two 50/50 mixture
// evaluation domains; every command runs with no arguments.
RunConfig default_config();

RunConfig load_config(const std::filesystem::path& path);
RunConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const RunConfig& cfg);

}  // namespace modcomp
