#pragma once

// A stack of adapted linear layers with a fixed nonlinearity between them.
// The toy regression model is a single layer; the retention experiment uses
// a small MLP with adapters on its hidden layers.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "disel/adapters.hpp"

namespace disel {

enum class Activation { kIdentity = 0, kRelu = 1, kTanh = 2 };

Activation parse_activation(std::string_view name);
std::string to_string(Activation act);

struct Network {
  std::vector<AdaptedLayer> layers;
  /// Applied after every layer except the last.
  Activation hidden_activation = Activation::kIdentity;

  [[nodiscard]] std::size_t d_in() const { return layers.front().base.d_in(); }
  [[nodiscard]] std::size_t d_out() const { return layers.back().base.d_out(); }
  /// Indices of layers carrying a gated adapter, in depth order.
  [[nodiscard]] std::vector<std::size_t> gated_layers() const;
};

struct NetworkCache {
  std::vector<LayerCache> layer;  // per layer, populated for low-rank adapters
  std::vector<Vector> input;      // per layer input
  std::vector<Vector> pre;        // per layer output before the activation
};

/// Per-layer gradients. Only the blocks relevant to the layer's adapter are
/// filled; base weight gradients are produced on request (pre-training).
struct LayerGrad {
  GradSet adapter;
  Matrix d_delta;
  Matrix d_w;
  Vector d_bias;
};

void validate(const Network& net);

Vector network_forward(const Network& net, const Vector& x, NetworkCache* cache = nullptr);

/// Backpropagates grad_out through the cached pass. Gradients are written
/// into `grads` (resized to the layer count) and accumulated when
/// `accumulate` is true, so a minibatch can be summed without reallocating.
void network_backward(const Network& net, const NetworkCache& cache, const Vector& grad_out,
                      std::vector<LayerGrad>& grads, bool base_grads, bool accumulate);

/// Copy of `net` with every adapter removed.
Network frozen_copy(const Network& net);

std::uint64_t frozen_hash(const Network& net);

}  // namespace disel
