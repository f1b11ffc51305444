#pragma once

#include <cstdint>
#include <vector>

#include "modcomp/corpus.hpp"
#include "modcomp/model.hpp"
#include "modcomp/optimizer.hpp"

namespace modcomp {

struct TrainConfig {
  int epochs = 5;
  double lr = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  int batch_size = 8;
  std::uint64_t seed = 5;

  void validate() const;
  AdamHyper adam() const { return {lr, beta1, beta2, eps, weight_decay}; }
};

struct TrainResult {
  AdapterModule adapter;
  std::vector<double> epoch_losses;  // mean train loss per epoch
};

// Concatenates a split and chunks it to fixed-length blocks for language
// modeling. Blocks shorter than two tokens are dropped.
std::vector<TokenSeq> pack_sequences(const std::vector<TokenSeq>& split, int seq_len);

// Language-model training of one domain adapter; the base parameters receive
// no gradients and are bit-identical afterwards.
TrainResult train_adapter(const BaseModel& base, const DomainCorpus& corpus,
                          const TrainConfig& cfg);

// Brief causal-LM pass over all training domains that updates the base
// parameters in place. Gives the shared model non-trivial structure before
// adapters specialize on top of it.
std::vector<double> pretrain_base(BaseModel& base, const std::vector<const DomainCorpus*>& corpora,
                                  const TrainConfig& cfg);

// Mean token NLL on the dev split, no gradients.
double dev_loss(const BaseModel& base, const AdapterModule* adapter, const DomainCorpus& corpus);

}  // namespace modcomp
