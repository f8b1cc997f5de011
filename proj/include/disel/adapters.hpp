#pragma once

// Frozen linear layers and the corrections that can be attached to them:
// an unconstrained fixed delta, a low-rank (LoRA) product, and the
// input-gated low-rank product whose rank-one terms are each scaled by
// a sigmoid gate computed from the layer input.
//
// Shapes follow y = W0 x: W0 is d_out x d_in, A is d_out x r, B and Wg are
// r x d_in. The low-rank branch is scaled by alpha / r.

#include <cstddef>
#include <optional>
#include <variant>

#include "disel/numkit.hpp"

namespace disel {

struct FrozenLinear {
  Matrix w0;
  std::optional<Vector> bias;

  [[nodiscard]] std::size_t d_in() const { return static_cast<std::size_t>(w0.cols()); }
  [[nodiscard]] std::size_t d_out() const { return static_cast<std::size_t>(w0.rows()); }
};

/// Input-agnostic unconstrained correction W0 + delta (full fine-tuning).
struct DeltaAdapter {
  Matrix delta;
};

struct LoraAdapter {
  Matrix a;
  Matrix b;
  double alpha = 1.0;

  [[nodiscard]] std::size_t rank() const { return static_cast<std::size_t>(a.cols()); }
  [[nodiscard]] double scale() const { return alpha / static_cast<double>(rank()); }
};

struct DiselAdapter {
  Matrix a;
  Matrix b;
  Matrix wg;
  Vector bg;
  double alpha = 1.0;

  [[nodiscard]] std::size_t rank() const { return static_cast<std::size_t>(a.cols()); }
  [[nodiscard]] double scale() const { return alpha / static_cast<double>(rank()); }
};

/// Intermediates of one forward pass: u = B x, z = Wg x + bg, g = sigmoid(z).
/// For plain LoRA, z is empty and g is all ones.
struct LayerCache {
  Vector x;
  Vector u;
  Vector z;
  Vector g;
};

struct GradSet {
  Matrix d_a;
  Matrix d_b;
  Matrix d_wg;  // empty for LoRA
  Vector d_bg;  // empty for LoRA
  Vector dx;
};

struct ForwardResult {
  Vector y;
  LayerCache cache;
};

struct ParamCount {
  std::size_t lora = 0;
  std::size_t gate = 0;
  [[nodiscard]] std::size_t total() const { return lora + gate; }
};

Vector frozen_forward(const FrozenLinear& layer, const Vector& x);
/// dx only; a frozen layer has no trainable parameters.
Vector frozen_backward(const FrozenLinear& layer, const Vector& grad_y);

ForwardResult disel_forward(const FrozenLinear& layer, const DiselAdapter& adapter, const Vector& x);
GradSet disel_backward(const FrozenLinear& layer, const DiselAdapter& adapter, const LayerCache& cache,
                       const Vector& grad_y);

ForwardResult lora_forward(const FrozenLinear& layer, const LoraAdapter& adapter, const Vector& x);
GradSet lora_backward(const FrozenLinear& layer, const LoraAdapter& adapter, const LayerCache& cache,
                      const Vector& grad_y);

Vector gate_values(const DiselAdapter& adapter, const Vector& x);

/// A Kaiming-uniform (fan_in = d_in), B = 0, Wg Kaiming-uniform (fan_in = d_in),
/// bg = gate_bias_init everywhere.
DiselAdapter init_disel(std::size_t d_in, std::size_t d_out, std::size_t rank, double alpha, double gate_bias_init,
                        RngStream& rng);
LoraAdapter init_lora(std::size_t d_in, std::size_t d_out, std::size_t rank, double alpha, RngStream& rng);

/// W0 + (alpha / r) A B.
Matrix merge_lora(const FrozenLinear& layer, const LoraAdapter& adapter);

ParamCount param_count(const LoraAdapter& adapter);
ParamCount param_count(const DiselAdapter& adapter);
ParamCount param_count(std::size_t d_in, std::size_t d_out, std::size_t rank, bool gated);

using Adapter = std::variant<std::monostate, DeltaAdapter, LoraAdapter, DiselAdapter>;

enum class AdapterKind { kNone = 0, kDelta = 1, kLora = 2, kDisel = 3 };

/// A frozen linear map plus at most one trainable correction.
struct AdaptedLayer {
  FrozenLinear base;
  Adapter adapter;

  [[nodiscard]] AdapterKind kind() const { return static_cast<AdapterKind>(adapter.index()); }
};

/// Effective static weight of a layer. Throws InvalidArgument for gated
/// adapters, whose correction depends on the input and has no static form.
Matrix merged_weight(const AdaptedLayer& layer);

void validate(const AdaptedLayer& layer);

}  // namespace disel
