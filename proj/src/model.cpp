#include "modcomp/model.hpp"

#include <cstdio>

#include "modcomp/rng.hpp"

namespace modcomp {

namespace names {
std::string layer_prefix(int layer) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "layers.%02d.", layer);
  return buf;
}
}  // namespace names

void ModelConfig::validate() const {
  if (n_layers < 1) throw ConfigError("model config: n_layers must be >= 1");
  if (d_model < 1 || n_heads < 1) throw ConfigError("model config: d_model and n_heads must be >= 1");
  if (d_model % n_heads != 0) throw ConfigError("model config: n_heads must divide d_model");
  if (vocab_size < 2) throw ConfigError("model config: vocab_size must be >= 2");
  if (max_seq_len < 2) throw ConfigError("model config: max_seq_len must be >= 2");
  if (reduction_factor < 1) throw ConfigError("model config: reduction_factor must be >= 1");
  if (bottleneck() < 1) throw ConfigError("model config: adapter bottleneck collapsed to zero");
}

namespace {

Tensor normal_tensor(std::vector<int> shape, double stddev, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  float* p = t.ptr();
  for (std::int64_t i = 0; i < t.numel(); ++i)
    p[i] = static_cast<float>(rng.next_normal() * stddev);
  return t;
}

Tensor const_tensor(std::vector<int> shape, float value) {
  Tensor t = Tensor::zeros(std::move(shape));
  std::fill(t.data->begin(), t.data->end(), value);
  return t;
}

}  // namespace

BaseModel init_base(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  BaseModel base;
  base.config = config;
  Rng rng(derive_seed(seed, "base-init"));
  const int d = config.d_model;
  const int v = config.vocab_size;
  auto& t = base.phi.entries;
  t.emplace("tok_emb.w", normal_tensor({v, d}, 0.02, rng));
  t.emplace("pos_emb.w", normal_tensor({config.max_seq_len, d}, 0.01, rng));
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string p = names::layer_prefix(l);
    t.emplace(p + "ln1.g", const_tensor({d}, 1.0f));
    t.emplace(p + "ln1.b", const_tensor({d}, 0.0f));
    for (const char* w : {"wq", "wk", "wv", "wo"})
      t.emplace(p + "attn." + std::string(w), normal_tensor({d, d}, 0.02, rng));
    for (const char* b : {"bq", "bk", "bv", "bo"})
      t.emplace(p + "attn." + std::string(b), const_tensor({d}, 0.0f));
    t.emplace(p + "ln2.g", const_tensor({d}, 1.0f));
    t.emplace(p + "ln2.b", const_tensor({d}, 0.0f));
    t.emplace(p + "ffn.w1", normal_tensor({d, 4 * d}, 0.02, rng));
    t.emplace(p + "ffn.b1", const_tensor({4 * d}, 0.0f));
    t.emplace(p + "ffn.w2", normal_tensor({4 * d, d}, 0.02, rng));
    t.emplace(p + "ffn.b2", const_tensor({d}, 0.0f));
  }
  t.emplace("final_ln.g", const_tensor({d}, 1.0f));
  t.emplace("final_ln.b", const_tensor({d}, 0.0f));
  if (!config.tie_head) {
    t.emplace("head.w", normal_tensor({d, v}, 0.02, rng));
    t.emplace("head.b", const_tensor({v}, 0.0f));
  }
  return base;
}

AdapterModule init_adapter(const BaseModel& base, const std::string& domain_id) {
  const ModelConfig& cfg = base.config;
  AdapterModule adapter;
  adapter.domain_id = domain_id;
  Rng rng(derive_seed(fnv1a(domain_id), "adapter-init"));
  const int d = cfg.d_model;
  const int b = cfg.bottleneck();
  auto& t = adapter.theta.entries;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = names::layer_prefix(l);
    t.emplace(p + "adapter.down.w", normal_tensor({d, b}, 0.02, rng));
    t.emplace(p + "adapter.down.b", const_tensor({b}, 0.0f));
    t.emplace(p + "adapter.up.w", const_tensor({b, d}, 0.0f));
    t.emplace(p + "adapter.up.b", const_tensor({d}, 0.0f));
  }
  if (!cfg.tie_head) {
    t.emplace("head.w", base.phi.at("head.w").clone());
    t.emplace("head.b", base.phi.at("head.b").clone());
  }
  return adapter;
}

std::vector<std::string> adapter_param_names(const ModelConfig& config) {
  std::vector<std::string> names_out;
  std::map<std::string, int> ordered;
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string p = names::layer_prefix(l);
    for (const char* s : {"adapter.down.w", "adapter.down.b", "adapter.up.w", "adapter.up.b"})
      ordered.emplace(p + s, 0);
  }
  if (!config.tie_head) {
    ordered.emplace("head.w", 0);
    ordered.emplace("head.b", 0);
  }
  for (const auto& [name, unused] : ordered) names_out.push_back(name);
  return names_out;
}

}  // namespace modcomp
