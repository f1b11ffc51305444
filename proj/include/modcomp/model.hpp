#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "modcomp/ops.hpp"
#include "modcomp/param_tree.hpp"

namespace modcomp {

struct ModelConfig {
  int n_layers = 2;
  int d_model = 64;
  int n_heads = 4;
  int vocab_size = 0;
  int max_seq_len = 128;
  int reduction_factor = 12;
  bool tie_head = false;  // true: the head is the embedding table, frozen in the base

  int bottleneck() const { return (d_model + reduction_factor - 1) / reduction_factor; }
  void validate() const;
};

// Frozen shared parameters phi. Adapter training never touches these.
struct BaseModel {
  ModelConfig config;
  ParamTree phi;
};

// Per-domain trainable parameters theta: one bottleneck adapter per layer plus
// the domain head when heads are untied.
struct AdapterModule {
  std::string domain_id;
  ParamTree theta;
};

BaseModel init_base(const ModelConfig& config, std::uint64_t seed);

// Zero-initialized up-projection makes the adapter the identity map; the head
// entry starts as a copy of the base head.
AdapterModule init_adapter(const BaseModel& base, const std::string& domain_id);

// Parameter names of an adapter tree for the given config, in map order.
std::vector<std::string> adapter_param_names(const ModelConfig& config);

namespace names {
std::string layer_prefix(int layer);
}  // namespace names

// Causal next-token logits [T x V]. The adapter tree is applied after each
// feed-forward block; with zero-initialized adapters the result is identical
// to the adapter-free forward.
template <class R>
TensorT<R> model_forward(const ModelConfig& cfg, const ParamTreeT<R>& phi,
                         const ParamTreeT<R>* theta, std::span<const int> tokens,
                         TapeT<R>* tape = nullptr) {
  const int T = static_cast<int>(tokens.size());
  if (T == 0) throw LengthError("model: empty token sequence");
  if (T > cfg.max_seq_len) throw LengthError("model: sequence exceeds max_seq_len");

  std::vector<int> positions(T);
  for (int i = 0; i < T; ++i) positions[i] = i;

  TensorT<R> x = add(tape, embedding(tape, phi.at("tok_emb.w"), tokens),
                     embedding(tape, phi.at("pos_emb.w"), positions));

  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = names::layer_prefix(l);
    TensorT<R> h = layer_norm(tape, x, phi.at(p + "ln1.g"), phi.at(p + "ln1.b"));
    TensorT<R> q = linear(tape, h, phi.at(p + "attn.wq"), phi.at(p + "attn.bq"));
    TensorT<R> k = linear(tape, h, phi.at(p + "attn.wk"), phi.at(p + "attn.bk"));
    TensorT<R> v = linear(tape, h, phi.at(p + "attn.wv"), phi.at(p + "attn.bv"));
    TensorT<R> att = causal_attention(tape, q, k, v, cfg.n_heads);
    TensorT<R> proj = linear(tape, att, phi.at(p + "attn.wo"), phi.at(p + "attn.bo"));
    x = add(tape, x, proj);

    TensorT<R> h2 = layer_norm(tape, x, phi.at(p + "ln2.g"), phi.at(p + "ln2.b"));
    TensorT<R> f = linear(tape, h2, phi.at(p + "ffn.w1"), phi.at(p + "ffn.b1"));
    f = gelu(tape, f);
    f = linear(tape, f, phi.at(p + "ffn.w2"), phi.at(p + "ffn.b2"));
    if (theta) {
      TensorT<R> z = relu(tape, linear(tape, f, theta->at(p + "adapter.down.w"),
                                       theta->at(p + "adapter.down.b")));
      TensorT<R> delta =
          linear(tape, z, theta->at(p + "adapter.up.w"), theta->at(p + "adapter.up.b"));
      f = add(tape, f, delta);
    }
    x = add(tape, x, f);
  }

  x = layer_norm(tape, x, phi.at("final_ln.g"), phi.at("final_ln.b"));

  if (cfg.tie_head) return matmul_nt(tape, x, phi.at("tok_emb.w"));
  const ParamTreeT<R>& head_owner = (theta && theta->contains("head.w")) ? *theta : phi;
  return linear(tape, x, head_owner.at("head.w"), head_owner.at("head.b"));
}

inline Tensor forward(const BaseModel& base, const AdapterModule* adapter,
                      std::span<const int> tokens, Tape* tape = nullptr) {
  return model_forward<float>(base.config, base.phi, adapter ? &adapter->theta : nullptr, tokens,
                              tape);
}

}  // namespace modcomp
