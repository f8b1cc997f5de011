#pragma once

// Central finite-difference verification of the hand-derived backward passes
// of the gated and plain low-rank adapters.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "disel/adapters.hpp"

namespace disel {

struct GradcheckConfig {
  std::size_t instances = 100;  // per layer type
  std::size_t max_dim = 16;     // d_in, d_out and r drawn from [1, max_dim]
  double step = 1e-6;
  double tolerance = 1e-5;
  /// Entries are compared as |a - n| / max(|a|, |n|, abs_floor).
  double abs_floor = 1e-3;
};

void validate(const GradcheckConfig& cfg);

struct BlockReport {
  std::string layer_type;  // "disel" or "lora"
  std::string block;       // dA, dB, dWg, dbg, dx
  std::size_t instances = 0;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<BlockReport> blocks;

  [[nodiscard]] bool passed() const;
};

using DiselBackwardFn = std::function<GradSet(const FrozenLinear&, const DiselAdapter&, const LayerCache&,
                                              const Vector&)>;
using LoraBackwardFn = std::function<GradSet(const FrozenLinear&, const LoraAdapter&, const LayerCache&,
                                             const Vector&)>;

/// Draws random (layer, input, cotangent) instances and compares every
/// gradient block of the scalar objective <cotangent, y> against central
/// differences. The backward passes can be swapped to check that a broken
/// formula is caught.
GradcheckReport run_gradcheck(const GradcheckConfig& cfg, const RngStream& rng,
                              const DiselBackwardFn& disel_bwd = disel_backward,
                              const LoraBackwardFn& lora_bwd = lora_backward);

/// Columns layer_type,block,instances,entries,max_rel_error,passed.
std::string gradcheck_csv(const GradcheckReport& report);

}  // namespace disel
