#include "disel/adapters.hpp"

#include <string>

#include "disel/errors.hpp"

namespace disel {

namespace {

void check_input(const FrozenLinear& layer, const Vector& x, const char* where) {
  if (static_cast<std::size_t>(x.size()) != layer.d_in()) {
    throw InvalidArgument(std::string(where) + ": input has dimension " + std::to_string(x.size()) + ", layer expects " +
                          std::to_string(layer.d_in()));
  }
}

void check_grad(const FrozenLinear& layer, const Vector& grad_y, const char* where) {
  if (static_cast<std::size_t>(grad_y.size()) != layer.d_out()) {
    throw InvalidArgument(std::string(where) + ": output gradient has dimension " + std::to_string(grad_y.size()) +
                          ", layer produces " + std::to_string(layer.d_out()));
  }
}

template <typename AdapterT>
void check_lowrank_shapes(const FrozenLinear& layer, const AdapterT& ad, const char* where) {
  const auto r = static_cast<Eigen::Index>(ad.rank());
  if (r == 0 || ad.a.rows() != layer.w0.rows() || ad.b.rows() != r || ad.b.cols() != layer.w0.cols()) {
    throw InvalidArgument(std::string(where) + ": adapter factors do not match the frozen layer shape");
  }
}

void check_gate_shapes(const FrozenLinear& layer, const DiselAdapter& ad, const char* where) {
  check_lowrank_shapes(layer, ad, where);
  const auto r = static_cast<Eigen::Index>(ad.rank());
  if (ad.wg.rows() != r || ad.wg.cols() != layer.w0.cols() || ad.bg.size() != r) {
    throw InvalidArgument(std::string(where) + ": gate parameters do not match the adapter rank");
  }
}

}  // namespace

Vector frozen_forward(const FrozenLinear& layer, const Vector& x) {
  check_input(layer, x, "frozen_forward");
  Vector y = layer.w0 * x;
  if (layer.bias) y += *layer.bias;
  return y;
}

Vector frozen_backward(const FrozenLinear& layer, const Vector& grad_y) {
  check_grad(layer, grad_y, "frozen_backward");
  return layer.w0.transpose() * grad_y;
}

ForwardResult disel_forward(const FrozenLinear& layer, const DiselAdapter& adapter, const Vector& x) {
  check_input(layer, x, "disel_forward");
  check_gate_shapes(layer, adapter, "disel_forward");
  ForwardResult out;
  out.cache.x = x;
  out.cache.u = adapter.b * x;
  out.cache.z = adapter.wg * x + adapter.bg;
  out.cache.g = sigmoid(out.cache.z);
  const Vector h = out.cache.g.cwiseProduct(out.cache.u);
  out.y = frozen_forward(layer, x);
  out.y.noalias() += adapter.scale() * (adapter.a * h);
  return out;
}

GradSet disel_backward(const FrozenLinear& layer, const DiselAdapter& adapter, const LayerCache& cache,
                       const Vector& grad_y) {
  check_gate_shapes(layer, adapter, "disel_backward");
  check_grad(layer, grad_y, "disel_backward");
  const auto r = static_cast<Eigen::Index>(adapter.rank());
  if (static_cast<std::size_t>(cache.x.size()) != layer.d_in() || cache.u.size() != r || cache.z.size() != r ||
      cache.g.size() != r) {
    throw InvalidArgument("disel_backward: cache shapes do not match the layer");
  }
  // A cache from another parameter state would silently give wrong gradients.
  if (Vector(adapter.b * cache.x) != cache.u || Vector(adapter.wg * cache.x + adapter.bg) != cache.z) {
    throw InvalidArgument("disel_backward: cache is stale for this adapter");
  }

  const double s = adapter.scale();
  const Vector& g = cache.g;
  const Vector h = g.cwiseProduct(cache.u);
  const Vector dh = s * (adapter.a.transpose() * grad_y);
  const Vector du = dh.cwiseProduct(g);
  const Vector dz = dh.cwiseProduct(cache.u).cwiseProduct(g).cwiseProduct((1.0 - g.array()).matrix());

  GradSet out;
  out.d_a = s * grad_y * h.transpose();
  out.d_b = du * cache.x.transpose();
  out.d_wg = dz * cache.x.transpose();
  out.d_bg = dz;
  out.dx = layer.w0.transpose() * grad_y;
  out.dx.noalias() += adapter.b.transpose() * du;
  out.dx.noalias() += adapter.wg.transpose() * dz;
  return out;
}

ForwardResult lora_forward(const FrozenLinear& layer, const LoraAdapter& adapter, const Vector& x) {
  check_input(layer, x, "lora_forward");
  check_lowrank_shapes(layer, adapter, "lora_forward");
  ForwardResult out;
  out.cache.x = x;
  out.cache.u = adapter.b * x;
  out.cache.g = Vector::Ones(static_cast<Eigen::Index>(adapter.rank()));
  out.y = frozen_forward(layer, x);
  out.y.noalias() += adapter.scale() * (adapter.a * out.cache.u);
  return out;
}

GradSet lora_backward(const FrozenLinear& layer, const LoraAdapter& adapter, const LayerCache& cache,
                      const Vector& grad_y) {
  check_lowrank_shapes(layer, adapter, "lora_backward");
  check_grad(layer, grad_y, "lora_backward");
  if (static_cast<std::size_t>(cache.x.size()) != layer.d_in() ||
      cache.u.size() != static_cast<Eigen::Index>(adapter.rank())) {
    throw InvalidArgument("lora_backward: cache shapes do not match the layer");
  }
  if (Vector(adapter.b * cache.x) != cache.u) throw InvalidArgument("lora_backward: cache is stale for this adapter");

  const double s = adapter.scale();
  const Vector dh = s * (adapter.a.transpose() * grad_y);
  GradSet out;
  out.d_a = s * grad_y * cache.u.transpose();
  out.d_b = dh * cache.x.transpose();
  out.dx = layer.w0.transpose() * grad_y;
  out.dx.noalias() += adapter.b.transpose() * dh;
  return out;
}

Vector gate_values(const DiselAdapter& adapter, const Vector& x) {
  if (x.size() != adapter.wg.cols()) {
    throw InvalidArgument("gate_values: input has dimension " + std::to_string(x.size()) + ", gate expects " +
                          std::to_string(adapter.wg.cols()));
  }
  if (adapter.bg.size() != adapter.wg.rows()) throw InvalidArgument("gate_values: gate bias does not match rank");
  return sigmoid(Vector(adapter.wg * x + adapter.bg));
}

DiselAdapter init_disel(std::size_t d_in, std::size_t d_out, std::size_t rank, double alpha, double gate_bias_init,
                        RngStream& rng) {
  if (rank == 0) throw InvalidArgument("init_disel: rank must be >= 1");
  if (d_in == 0 || d_out == 0) throw InvalidArgument("init_disel: layer dimensions must be >= 1");
  RngStream a_rng = rng.derive("lora_a");
  RngStream wg_rng = rng.derive("gate_w");
  DiselAdapter ad;
  ad.a = kaiming_uniform_init(d_out, rank, d_in, a_rng);
  ad.b = Matrix::Zero(static_cast<Eigen::Index>(rank), static_cast<Eigen::Index>(d_in));
  ad.wg = kaiming_uniform_init(rank, d_in, d_in, wg_rng);
  ad.bg = Vector::Constant(static_cast<Eigen::Index>(rank), gate_bias_init);
  ad.alpha = alpha;
  return ad;
}

LoraAdapter init_lora(std::size_t d_in, std::size_t d_out, std::size_t rank, double alpha, RngStream& rng) {
  if (rank == 0) throw InvalidArgument("init_lora: rank must be >= 1");
  if (d_in == 0 || d_out == 0) throw InvalidArgument("init_lora: layer dimensions must be >= 1");
  // Same stream purpose as init_disel so a LoRA and a gated adapter built from
  // one rng start from the same A.
  RngStream a_rng = rng.derive("lora_a");
  LoraAdapter ad;
  ad.a = kaiming_uniform_init(d_out, rank, d_in, a_rng);
  ad.b = Matrix::Zero(static_cast<Eigen::Index>(rank), static_cast<Eigen::Index>(d_in));
  ad.alpha = alpha;
  return ad;
}

Matrix merge_lora(const FrozenLinear& layer, const LoraAdapter& adapter) {
  check_lowrank_shapes(layer, adapter, "merge_lora");
  Matrix w = layer.w0;
  w.noalias() += adapter.scale() * (adapter.a * adapter.b);
  return w;
}

ParamCount param_count(std::size_t d_in, std::size_t d_out, std::size_t rank, bool gated) {
  ParamCount pc;
  pc.lora = rank * (d_in + d_out);
  pc.gate = gated ? rank * d_in + rank : 0;
  return pc;
}

ParamCount param_count(const LoraAdapter& adapter) {
  return param_count(static_cast<std::size_t>(adapter.b.cols()), static_cast<std::size_t>(adapter.a.rows()),
                     adapter.rank(), false);
}

ParamCount param_count(const DiselAdapter& adapter) {
  return param_count(static_cast<std::size_t>(adapter.b.cols()), static_cast<std::size_t>(adapter.a.rows()),
                     adapter.rank(), true);
}

Matrix merged_weight(const AdaptedLayer& layer) {
  switch (layer.kind()) {
    case AdapterKind::kNone:
      return layer.base.w0;
    case AdapterKind::kDelta:
      return layer.base.w0 + std::get<DeltaAdapter>(layer.adapter).delta;
    case AdapterKind::kLora:
      return merge_lora(layer.base, std::get<LoraAdapter>(layer.adapter));
    case AdapterKind::kDisel:
      break;
  }
  throw InvalidArgument("merge: gated adapters have no input-independent merged weight");
}

void validate(const AdaptedLayer& layer) {
  if (layer.base.w0.size() == 0) throw InvalidArgument("layer: empty frozen weight");
  if (layer.base.bias && static_cast<std::size_t>(layer.base.bias->size()) != layer.base.d_out()) {
    throw InvalidArgument("layer: bias length does not match output dimension");
  }
  switch (layer.kind()) {
    case AdapterKind::kNone:
      break;
    case AdapterKind::kDelta: {
      const auto& d = std::get<DeltaAdapter>(layer.adapter).delta;
      if (d.rows() != layer.base.w0.rows() || d.cols() != layer.base.w0.cols()) {
        throw InvalidArgument("layer: delta shape does not match frozen weight");
      }
      break;
    }
    case AdapterKind::kLora:
      check_lowrank_shapes(layer.base, std::get<LoraAdapter>(layer.adapter), "layer");
      break;
    case AdapterKind::kDisel:
      check_gate_shapes(layer.base, std::get<DiselAdapter>(layer.adapter), "layer");
      break;
  }
}

}  // namespace disel
