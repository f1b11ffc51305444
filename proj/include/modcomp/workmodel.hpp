#pragma once

#include <cstdint>

#include "modcomp/model.hpp"

namespace modcomp {

// Deterministic compute accounting. All duration columns in emitted CSVs are
// derived from operation counts through a fixed flops-per-second rate, so
// identical runs produce identical files; measured wall-clock times go to the
// run's timing metadata instead.
struct EnergyModel {
  double power_kw = 0.155;              // CPU profile default
  double intensity_g_per_kwh = 470.0;
  double flops_per_second = 2.0e9;      // converts modeled flops to modeled seconds

  void validate() const;
};

// Multiply-accumulate count (times two for flops) of one forward pass over a
// sequence of length T, optionally including the adapter path.
std::int64_t forward_flops(const ModelConfig& cfg, int T, bool with_adapter);

// Cost of merging k adapters elementwise.
std::int64_t merge_flops(const ModelConfig& cfg, int k);

// Training step cost: forward plus roughly twice that for the backward pass.
std::int64_t train_flops(const ModelConfig& cfg, int T, bool adapter_only);

double modeled_seconds(std::int64_t flops, const EnergyModel& energy);

// Emission estimate: hours x kW x gCO2eq/kWh.
double co2_estimate(double hours, const EnergyModel& energy);

}  // namespace modcomp
