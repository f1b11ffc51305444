#pragma once

#include "modcomp/corpus.hpp"
#include "modcomp/trainer.hpp"

namespace testutil {

// Small two-domain world with a 50/50 mixture, trained just enough for
// composition tests to have distinguishable adapters.
struct TinyWorld {
  modcomp::CorpusSet corpus;
  modcomp::BaseModel base;
  std::vector<modcomp::AdapterModule> adapters;

  std::vector<const modcomp::AdapterModule*> adapter_ptrs() const {
    std::vector<const modcomp::AdapterModule*> out;
    for (const auto& a : adapters) out.push_back(&a);
    return out;
  }
};

inline modcomp::SyntheticSpec tiny_spec(double shared_fraction = 0.2, int n_domains = 2,
                                        bool with_mixture = true) {
  modcomp::SyntheticSpec spec;
  spec.n_domains = n_domains;
  spec.vocab_size = 64 + 8 * n_domains;
  spec.shared_fraction = shared_fraction;
  spec.tokens_per_split = {{"train", 768}, {"dev", 384}, {"eval", 384}};
  spec.seed = 17;
  if (with_mixture) spec.mixtures = {{"mix", {0, 1}, {0.5, 0.5}}};
  return spec;
}

inline TinyWorld make_tiny_world(int train_epochs = 3, double lr = 5e-3) {
  TinyWorld w;
  w.corpus = modcomp::generate_synthetic(tiny_spec());

  modcomp::ModelConfig mc;
  mc.n_layers = 2;
  mc.d_model = 32;
  mc.n_heads = 4;
  mc.vocab_size = w.corpus.vocab.size();
  mc.max_seq_len = 48;
  mc.reduction_factor = 12;
  w.base = modcomp::init_base(mc, 404);

  modcomp::TrainConfig tc;
  tc.epochs = train_epochs;
  tc.lr = lr;
  tc.batch_size = 4;
  tc.seed = 5;
  for (const auto& id : w.corpus.training_domain_ids)
    w.adapters.push_back(modcomp::train_adapter(w.base, w.corpus.domain(id), tc).adapter);
  return w;
}

}  // namespace testutil
