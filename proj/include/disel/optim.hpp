#pragma once

// Parameter groups, decoupled-weight-decay Adam, plain gradient descent,
// the warmup + cosine learning-rate schedule and global-norm clipping.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "disel/numkit.hpp"

namespace disel {

enum class GroupTag { kAdapter, kGate, kDense };

std::string to_string(GroupTag tag);

/// A trainable array and its gradient buffer. `decay` is cleared for biases,
/// which are excluded from weight decay.
struct ParamRef {
  std::string name;
  std::span<double> value;
  std::span<double> grad;
  bool decay = true;
};

struct ParamGroup {
  GroupTag tag = GroupTag::kAdapter;
  double lr = 0.0;
  double weight_decay = 0.0;
  std::vector<ParamRef> params;
};

/// Gate groups never decay: their weight_decay is forced to zero.
ParamGroup make_group(GroupTag tag, double lr, double weight_decay);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamWState {
  std::size_t step = 0;
  // [group][param] moments, shaped like the parameter.
  std::vector<std::vector<std::vector<double>>> m;
  std::vector<std::vector<std::vector<double>>> v;
};

/// One bias-corrected AdamW update over all groups, with learning rate
/// group.lr * lr_scale. Decoupled decay shrinks parameters by
/// (1 - lr * weight_decay) before the Adam step. Gradients are checked for
/// NaN/Inf before anything is modified; on failure a NumericError names the
/// offending group and nothing changes.
void adamw_step(std::vector<ParamGroup>& groups, AdamWState& state, const AdamWConfig& cfg, double lr_scale);

/// p -= lr * lr_scale * g, with the same decay and finiteness rules.
void sgd_step(std::vector<ParamGroup>& groups, double lr_scale);

/// Linear ramp from 0 to base_lr over warmup_ratio * total_steps, then a
/// half-cosine decay reaching 0 at total_steps.
double cosine_warmup_lr(std::size_t step, std::size_t total_steps, double warmup_ratio, double base_lr);

/// Scales all gradients by max_norm / total when the global L2 norm exceeds
/// max_norm. Returns the norm measured before clipping.
double clip_grad_norm(std::span<const std::span<double>> grads, double max_norm);
double clip_grad_norm(std::vector<ParamGroup>& groups, double max_norm);

}  // namespace disel
