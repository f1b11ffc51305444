#include "modcomp/workmodel.hpp"

namespace modcomp {

void EnergyModel::validate() const {
  if (power_kw <= 0 || intensity_g_per_kwh <= 0 || flops_per_second <= 0)
    throw ConfigError("energy model: all fields must be positive");
}

std::int64_t forward_flops(const ModelConfig& cfg, int T, bool with_adapter) {
  const std::int64_t d = cfg.d_model;
  const std::int64_t v = cfg.vocab_size;
  const std::int64_t b = cfg.bottleneck();
  // per token: qkv + output projections, attention scores/mix (~T/2 causal
  // context), feed-forward, adapter bottleneck, head
  std::int64_t per_token = 0;
  per_token += cfg.n_layers * (4 * d * d);          // attn projections
  per_token += cfg.n_layers * (2 * (T / 2 + 1) * d);  // scores + weighted sum
  per_token += cfg.n_layers * (8 * d * d);          // ffn (d->4d->d)
  if (with_adapter) per_token += cfg.n_layers * (2 * d * b);
  per_token += d * v;                               // head
  return 2 * per_token * T;  // two flops per MAC
}

std::int64_t merge_flops(const ModelConfig& cfg, int k) {
  const std::int64_t d = cfg.d_model;
  const std::int64_t b = cfg.bottleneck();
  std::int64_t theta = cfg.n_layers * (2 * d * b + b + d);
  if (!cfg.tie_head) theta += static_cast<std::int64_t>(d) * cfg.vocab_size + cfg.vocab_size;
  return 2 * theta * k;
}

std::int64_t train_flops(const ModelConfig& cfg, int T, bool adapter_only) {
  (void)adapter_only;  // backward over the frozen base still runs activations
  return 3 * forward_flops(cfg, T, true);
}

double modeled_seconds(std::int64_t flops, const EnergyModel& energy) {
  return static_cast<double>(flops) / energy.flops_per_second;
}

double co2_estimate(double hours, const EnergyModel& energy) {
  if (hours < 0) throw ArgumentError("co2_estimate: hours must be non-negative");
  energy.validate();
  return hours * energy.power_kw * energy.intensity_g_per_kwh;
}

}  // namespace modcomp
