#include "modcomp/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "modcomp/composer.hpp"

namespace modcomp {

namespace {
using nlohmann::json;

template <class T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

KSpec parse_k(const json& j) {
  KSpec k;
  if (j.is_number_integer()) {
    k.k = j.get<int>();
    if (k.k < 0) throw ConfigError("grid: k must be >= 0");
    return k;
  }
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s.rfind("auto:", 0) == 0) {
      k.auto_threshold = std::stod(s.substr(5));
      if (k.auto_threshold <= 0) throw ConfigError("grid: auto threshold must be positive");
      return k;
    }
  }
  throw ConfigError("grid: k entries must be integers or 'auto:<threshold>'");
}

}  // namespace

std::string KSpec::label() const {
  if (is_auto()) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "auto:%g", auto_threshold);
    return buf;
  }
  return std::to_string(k);
}

void GridConfig::validate() const {
  if (strategies.empty() || methods.empty() || weightings.empty() || k_values.empty() ||
      seeds.empty() || eval_domains.empty())
    throw ConfigError("grid: every axis must be non-empty");
  for (const auto& s : strategies)
    if (s != "uniform" && s != "sentsim" && s != "tfidf" && s != "prior" && s != "entropy")
      throw ConfigError("grid: unknown strategy '" + s + "'");
  for (const auto& m : methods) method_from_string(m);
  for (const auto& w : weightings) weighting_from_string(w);
  if (sample_n < 1 || sample_len < 2 || entropy_batch < 1)
    throw ConfigError("grid: sampling parameters must be positive");
  prior.validate();
}

void RunConfig::validate() const {
  if (data.synthetic) {
    if (data.spec.n_domains < 1) throw ConfigError("data: need at least one domain");
  } else if (data.files.empty()) {
    throw ConfigError("data: file mode needs at least one domain file");
  }
  grid.validate();
  train.validate();
  energy.validate();
  if (pretrain_epochs < 0) throw ConfigError("model: pretrain_epochs must be >= 0");
  if (metareg.folds < 2) throw ConfigError("metareg: need at least two folds");
  if (metareg.alphas.empty()) throw ConfigError("metareg: alpha grid must be non-empty");
  for (double t : report.autok_thresholds)
    if (t <= 0) throw ConfigError("report: auto-k thresholds must be positive");
  // model.validate() runs once vocab_size is resolved from the corpus
  if (model.d_model % model.n_heads != 0)
    throw ConfigError("model config: n_heads must divide d_model");
}

RunConfig default_config() {
  RunConfig cfg;
  cfg.data.spec.n_domains = 4;
  cfg.data.spec.vocab_size = 240;
  cfg.data.spec.shared_fraction = 0.2;
  cfg.data.spec.tokens_per_split = {{"train", 12288}, {"dev", 2048}, {"eval", 2048}};
  cfg.data.spec.zipf_exponent = 1.1;
  cfg.data.spec.seed = 7;
  cfg.data.spec.mixtures = {{"mix-ab", {0, 1}, {0.5, 0.5}}, {"mix-cd", {2, 3}, {0.5, 0.5}}};

  cfg.model.n_layers = 2;
  cfg.model.d_model = 64;
  cfg.model.n_heads = 4;
  cfg.model.vocab_size = 0;
  cfg.model.max_seq_len = 128;
  cfg.model.reduction_factor = 12;
  cfg.model.tie_head = false;

  // Desk-scale optimization: enough signal to demonstrate adaptation within
  // minutes on a CPU. The TrainConfig type defaults keep the reference values.
  cfg.train.epochs = 8;
  cfg.train.lr = 5e-3;
  cfg.train.batch_size = 8;
  cfg.train.seed = 5;

  for (int k = 0; k <= 4; ++k) cfg.grid.k_values.push_back({k, 0.0});
  cfg.grid.eval_domains = {"mix-ab", "mix-cd"};
  return cfg;
}

RunConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig cfg = default_config();
  try {
    if (j.contains("data")) {
      const json& d = j.at("data");
      std::string type = "synthetic";
      maybe(d, "type", type);
      if (type == "synthetic") {
        cfg.data.synthetic = true;
        maybe(d, "n_domains", cfg.data.spec.n_domains);
        maybe(d, "vocab_size", cfg.data.spec.vocab_size);
        maybe(d, "shared_fraction", cfg.data.spec.shared_fraction);
        maybe(d, "zipf_exponent", cfg.data.spec.zipf_exponent);
        maybe(d, "seed", cfg.data.spec.seed);
        if (d.contains("tokens_per_split"))
          cfg.data.spec.tokens_per_split =
              d.at("tokens_per_split").get<std::map<std::string, int>>();
        if (d.contains("mixtures")) {
          cfg.data.spec.mixtures.clear();
          for (const auto& m : d.at("mixtures")) {
            MixtureSpec mix;
            mix.domain_id = m.at("domain_id").get<std::string>();
            mix.components = m.at("components").get<std::vector<int>>();
            mix.weights = m.at("weights").get<std::vector<double>>();
            cfg.data.spec.mixtures.push_back(std::move(mix));
          }
        }
      } else if (type == "files") {
        cfg.data.synthetic = false;
        for (auto it = d.at("files").begin(); it != d.at("files").end(); ++it)
          cfg.data.files[it.key()] = it.value().get<std::string>();
        maybe(d, "eval_domains", cfg.data.file_eval_domains);
        maybe(d, "vocab_size", cfg.data.file_vocab_budget);
      } else {
        throw ConfigError("data: unknown type '" + type + "'");
      }
    }
    if (j.contains("model")) {
      const json& m = j.at("model");
      maybe(m, "n_layers", cfg.model.n_layers);
      maybe(m, "d_model", cfg.model.d_model);
      maybe(m, "n_heads", cfg.model.n_heads);
      maybe(m, "vocab_size", cfg.model.vocab_size);
      maybe(m, "max_seq_len", cfg.model.max_seq_len);
      maybe(m, "reduction_factor", cfg.model.reduction_factor);
      maybe(m, "tie_head", cfg.model.tie_head);
      maybe(m, "init_seed", cfg.init_seed);
      maybe(m, "pretrain_epochs", cfg.pretrain_epochs);
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      maybe(t, "epochs", cfg.train.epochs);
      maybe(t, "lr", cfg.train.lr);
      maybe(t, "weight_decay", cfg.train.weight_decay);
      maybe(t, "beta1", cfg.train.beta1);
      maybe(t, "beta2", cfg.train.beta2);
      maybe(t, "eps", cfg.train.eps);
      maybe(t, "batch_size", cfg.train.batch_size);
      maybe(t, "seed", cfg.train.seed);
    }
    if (j.contains("grid")) {
      const json& g = j.at("grid");
      maybe(g, "strategies", cfg.grid.strategies);
      maybe(g, "methods", cfg.grid.methods);
      maybe(g, "weightings", cfg.grid.weightings);
      if (g.contains("k")) {
        cfg.grid.k_values.clear();
        for (const auto& kj : g.at("k")) cfg.grid.k_values.push_back(parse_k(kj));
      }
      maybe(g, "seeds", cfg.grid.seeds);
      maybe(g, "eval_domains", cfg.grid.eval_domains);
      if (g.contains("score_samples")) {
        const json& s = g.at("score_samples");
        maybe(s, "n", cfg.grid.sample_n);
        maybe(s, "len", cfg.grid.sample_len);
        maybe(s, "entropy_batch", cfg.grid.entropy_batch);
      }
      if (g.contains("prior")) {
        maybe(g.at("prior"), "lambda", cfg.grid.prior.lambda);
        maybe(g.at("prior"), "n_sequences", cfg.grid.prior.n_sequences);
      }
      if (g.contains("ensemble_space")) {
        const std::string space = g.at("ensemble_space").get<std::string>();
        if (space != "probability" && space != "logit")
          throw ConfigError("grid: ensemble_space must be 'probability' or 'logit'");
        cfg.grid.ensemble_probability_space = space == "probability";
      }
    }
    if (j.contains("metareg")) {
      const json& m = j.at("metareg");
      maybe(m, "alphas", cfg.metareg.alphas);
      maybe(m, "folds", cfg.metareg.folds);
      maybe(m, "fold_seed", cfg.metareg.fold_seed);
    }
    if (j.contains("report"))
      maybe(j.at("report"), "autok_thresholds", cfg.report.autok_thresholds);
    if (j.contains("energy")) {
      const json& e = j.at("energy");
      maybe(e, "power_kw", cfg.energy.power_kw);
      maybe(e, "intensity_g_per_kwh", cfg.energy.intensity_g_per_kwh);
      maybe(e, "flops_per_second", cfg.energy.flops_per_second);
    }
    if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return config_from_json_text(text);
}

std::string config_to_json_text(const RunConfig& cfg) {
  json j;
  if (cfg.data.synthetic) {
    json mixtures = json::array();
    for (const auto& m : cfg.data.spec.mixtures)
      mixtures.push_back(
          {{"domain_id", m.domain_id}, {"components", m.components}, {"weights", m.weights}});
    j["data"] = {{"type", "synthetic"},
                 {"n_domains", cfg.data.spec.n_domains},
                 {"vocab_size", cfg.data.spec.vocab_size},
                 {"shared_fraction", cfg.data.spec.shared_fraction},
                 {"tokens_per_split", cfg.data.spec.tokens_per_split},
                 {"zipf_exponent", cfg.data.spec.zipf_exponent},
                 {"seed", cfg.data.spec.seed},
                 {"mixtures", mixtures}};
  } else {
    json files = json::object();
    for (const auto& [id, path] : cfg.data.files) files[id] = path.string();
    j["data"] = {{"type", "files"},
                 {"files", files},
                 {"eval_domains", cfg.data.file_eval_domains},
                 {"vocab_size", cfg.data.file_vocab_budget}};
  }
  j["model"] = {{"n_layers", cfg.model.n_layers},
                {"d_model", cfg.model.d_model},
                {"n_heads", cfg.model.n_heads},
                {"vocab_size", cfg.model.vocab_size},
                {"max_seq_len", cfg.model.max_seq_len},
                {"reduction_factor", cfg.model.reduction_factor},
                {"tie_head", cfg.model.tie_head},
                {"init_seed", cfg.init_seed},
                {"pretrain_epochs", cfg.pretrain_epochs}};
  j["train"] = {{"epochs", cfg.train.epochs},   {"lr", cfg.train.lr},
                {"weight_decay", cfg.train.weight_decay}, {"beta1", cfg.train.beta1},
                {"beta2", cfg.train.beta2},     {"eps", cfg.train.eps},
                {"batch_size", cfg.train.batch_size}, {"seed", cfg.train.seed}};
  json kvals = json::array();
  for (const auto& k : cfg.grid.k_values) {
    if (k.is_auto())
      kvals.push_back(k.label());
    else
      kvals.push_back(k.k);
  }
  j["grid"] = {{"strategies", cfg.grid.strategies},
               {"methods", cfg.grid.methods},
               {"weightings", cfg.grid.weightings},
               {"k", kvals},
               {"seeds", cfg.grid.seeds},
               {"eval_domains", cfg.grid.eval_domains},
               {"score_samples",
                {{"n", cfg.grid.sample_n},
                 {"len", cfg.grid.sample_len},
                 {"entropy_batch", cfg.grid.entropy_batch}}},
               {"prior",
                {{"lambda", cfg.grid.prior.lambda}, {"n_sequences", cfg.grid.prior.n_sequences}}},
               {"ensemble_space", cfg.grid.ensemble_probability_space ? "probability" : "logit"}};
  j["metareg"] = {{"alphas", cfg.metareg.alphas},
                  {"folds", cfg.metareg.folds},
                  {"fold_seed", cfg.metareg.fold_seed}};
  j["report"] = {{"autok_thresholds", cfg.report.autok_thresholds}};
  j["energy"] = {{"power_kw", cfg.energy.power_kw},
                 {"intensity_g_per_kwh", cfg.energy.intensity_g_per_kwh},
                 {"flops_per_second", cfg.energy.flops_per_second}};
  j["output_dir"] = cfg.output_dir.string();
  return j.dump(2) + "\n";
}

}  // namespace modcomp
