#pragma once

// Helpers shared by the toy and MLP training loops.

#include <vector>

#include "disel/network.hpp"
#include "disel/optim.hpp"
#include "disel/trainer.hpp"

namespace disel::detail {

/// Optimizer groups over the trainable blocks of `net`, pointing into the
/// gradient buffers of `grads` (which must already be sized by a backward
/// pass). With `base` set, every layer's weight and bias is trainable
/// (pre-training); otherwise only adapters are.
std::vector<ParamGroup> build_groups(Network& net, std::vector<LayerGrad>& grads, const Method& method,
                                     const TrainConfig& cfg, bool base);

/// Learning-rate multiplier for the update with 0-based index `step`.
double lr_scale(const TrainConfig& cfg, std::size_t step);

void apply_update(std::vector<ParamGroup>& groups, AdamWState& state, const TrainConfig& cfg, double scale);

}  // namespace disel::detail
