#include "modcomp/trainer.hpp"

#include <algorithm>

#include "modcomp/optimizer.hpp"
#include "modcomp/rng.hpp"

namespace modcomp {

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw ConfigError("train config: epochs and batch_size must be >= 1");
  if (lr <= 0 || weight_decay < 0 || eps <= 0) throw ConfigError("train config: rates must be positive");
  if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
    throw ConfigError("train config: betas must lie in (0, 1)");
}

std::vector<TokenSeq> pack_sequences(const std::vector<TokenSeq>& split, int seq_len) {
  TokenSeq flat;
  for (const auto& seq : split) flat.insert(flat.end(), seq.begin(), seq.end());
  std::vector<TokenSeq> chunks;
  for (std::size_t pos = 0; pos + 2 <= flat.size(); pos += seq_len) {
    const std::size_t end = std::min(flat.size(), pos + static_cast<std::size_t>(seq_len));
    if (end - pos < 2) break;
    chunks.emplace_back(flat.begin() + pos, flat.begin() + end);
  }
  return chunks;
}

namespace {

// One forward/backward over a chunk; returns the chunk's mean token NLL.
// Gradients are scaled by `weight` so accumulating over a batch averages.
double chunk_loss(const ModelConfig& cfg, const ParamTree& phi, const ParamTree* theta,
                  const TokenSeq& chunk, float weight, bool with_grad) {
  std::span<const int> inputs(chunk.data(), chunk.size() - 1);
  std::span<const int> targets(chunk.data() + 1, chunk.size() - 1);
  if (!with_grad) {
    Tensor logits = model_forward<float>(cfg, phi, theta, inputs, nullptr);
    Tensor loss = cross_entropy_mean<float>(nullptr, logits, targets);
    return loss.at(0);
  }
  Tape tape;
  Tensor logits = model_forward<float>(cfg, phi, theta, inputs, &tape);
  Tensor loss = cross_entropy_mean(&tape, logits, targets);
  loss.gptr()[0] = weight;
  tape.backward();
  return loss.at(0);
}

// Shared optimization loop over pre-packed chunks; trainable entries of
// `params` must already carry gradient buffers.
std::vector<double> run_epochs(const ModelConfig& cfg, const ParamTree& phi, ParamTree* theta,
                               ParamTree& params, const std::vector<TokenSeq>& chunks,
                               const TrainConfig& tc, const std::string& stream_tag) {
  AdamHyper hyper = tc.adam();
  auto state = AdamState::init(params);
  ParamTree grad_view = grads_of(params);
  std::vector<double> epoch_losses;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::vector<std::size_t> order(chunks.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(tc.seed, stream_tag + "/epoch" + std::to_string(epoch)));
    rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t pos = 0;
    while (pos < order.size()) {
      const std::size_t batch_end = std::min(order.size(), pos + static_cast<std::size_t>(tc.batch_size));
      const float weight = 1.0f / static_cast<float>(batch_end - pos);
      params.zero_grads();
      for (std::size_t i = pos; i < batch_end; ++i)
        loss_sum += chunk_loss(cfg, phi, theta, chunks[order[i]], weight, true);
      adam_step(params, grad_view, state, hyper, ++step);
      pos = batch_end;
    }
    epoch_losses.push_back(loss_sum / static_cast<double>(chunks.size()));
  }
  return epoch_losses;
}

}  // namespace

TrainResult train_adapter(const BaseModel& base, const DomainCorpus& corpus,
                          const TrainConfig& cfg) {
  cfg.validate();
  const auto& train_split = corpus.split("train");
  if (train_split.empty()) throw DataError("trainer: empty train split for '" + corpus.domain_id + "'");
  std::vector<TokenSeq> chunks = pack_sequences(train_split, base.config.max_seq_len);
  if (chunks.empty()) throw DataError("trainer: train split too short for '" + corpus.domain_id + "'");

  TrainResult result;
  result.adapter = init_adapter(base, corpus.domain_id);
  result.adapter.theta.enable_grads();
  result.epoch_losses = run_epochs(base.config, base.phi, &result.adapter.theta,
                                   result.adapter.theta, chunks, cfg, "adapter/" + corpus.domain_id);
  result.adapter.theta.drop_grads();
  return result;
}

std::vector<double> pretrain_base(BaseModel& base, const std::vector<const DomainCorpus*>& corpora,
                                  const TrainConfig& cfg) {
  cfg.validate();
  std::vector<TokenSeq> chunks;
  for (const DomainCorpus* c : corpora) {
    auto packed = pack_sequences(c->split("train"), base.config.max_seq_len);
    chunks.insert(chunks.end(), packed.begin(), packed.end());
  }
  if (chunks.empty()) throw DataError("trainer: no pretraining data");
  base.phi.enable_grads();
  auto losses = run_epochs(base.config, base.phi, nullptr, base.phi, chunks, cfg, "pretrain");
  base.phi.drop_grads();
  return losses;
}

double dev_loss(const BaseModel& base, const AdapterModule* adapter, const DomainCorpus& corpus) {
  const auto& dev = corpus.split("dev");
  if (dev.empty()) throw DataError("trainer: empty dev split for '" + corpus.domain_id + "'");
  double nll = 0.0;
  std::int64_t positions = 0;
  for (const auto& seq : dev) {
    if (seq.size() < 2) continue;
    TokenSeq line = seq;
    if (static_cast<int>(line.size()) > base.config.max_seq_len)
      line.resize(base.config.max_seq_len);
    const double mean = chunk_loss(base.config, base.phi, adapter ? &adapter->theta : nullptr,
                                   line, 1.0f, false);
    nll += mean * static_cast<double>(line.size() - 1);
    positions += static_cast<std::int64_t>(line.size()) - 1;
  }
  if (positions == 0)
    throw DataError("trainer: dev split too short for '" + corpus.domain_id + "'");
  return nll / static_cast<double>(positions);
}

}  // namespace modcomp
