#include "disel/network.hpp"

#include <cmath>

#include "disel/errors.hpp"

namespace disel {

namespace {

Vector activate(Activation act, const Vector& v) {
  switch (act) {
    case Activation::kIdentity:
      return v;
    case Activation::kRelu:
      return v.cwiseMax(0.0);
    case Activation::kTanh:
      return v.array().tanh().matrix();
  }
  return v;
}

// grad wrt pre-activation given grad wrt post-activation.
Vector activate_backward(Activation act, const Vector& pre, const Vector& grad_post) {
  switch (act) {
    case Activation::kIdentity:
      return grad_post;
    case Activation::kRelu:
      return (pre.array() > 0.0).select(grad_post, 0.0);
    case Activation::kTanh: {
      const Eigen::ArrayXd t = pre.array().tanh();
      return (grad_post.array() * (1.0 - t * t)).matrix();
    }
  }
  return grad_post;
}

template <typename T>
void add_or_assign(T& dst, const T& src, bool accumulate) {
  if (accumulate && dst.size() == src.size()) {
    dst += src;
  } else {
    dst = src;
  }
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "identity" || name == "none") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw InvalidArgument("unknown activation '" + std::string(name) + "'");
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::kIdentity:
      return "identity";
    case Activation::kRelu:
      return "relu";
    case Activation::kTanh:
      return "tanh";
  }
  return "identity";
}

std::vector<std::size_t> Network::gated_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind() == AdapterKind::kDisel) out.push_back(i);
  }
  return out;
}

void validate(const Network& net) {
  if (net.layers.empty()) throw InvalidArgument("network has no layers");
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    validate(net.layers[i]);
    if (i > 0 && net.layers[i].base.d_in() != net.layers[i - 1].base.d_out()) {
      throw InvalidArgument("network: layer " + std::to_string(i) + " input does not match previous output");
    }
  }
}

Vector network_forward(const Network& net, const Vector& x, NetworkCache* cache) {
  const std::size_t n = net.layers.size();
  if (cache) {
    cache->layer.resize(n);
    cache->input.resize(n);
    cache->pre.resize(n);
  }
  Vector h = x;
  for (std::size_t i = 0; i < n; ++i) {
    const AdaptedLayer& layer = net.layers[i];
    Vector y;
    switch (layer.kind()) {
      case AdapterKind::kNone:
        y = frozen_forward(layer.base, h);
        break;
      case AdapterKind::kDelta:
        y = frozen_forward(layer.base, h);
        y.noalias() += std::get<DeltaAdapter>(layer.adapter).delta * h;
        break;
      case AdapterKind::kLora: {
        ForwardResult r = lora_forward(layer.base, std::get<LoraAdapter>(layer.adapter), h);
        y = std::move(r.y);
        if (cache) cache->layer[i] = std::move(r.cache);
        break;
      }
      case AdapterKind::kDisel: {
        ForwardResult r = disel_forward(layer.base, std::get<DiselAdapter>(layer.adapter), h);
        y = std::move(r.y);
        if (cache) cache->layer[i] = std::move(r.cache);
        break;
      }
    }
    if (cache) {
      cache->input[i] = h;
      cache->pre[i] = y;
    }
    h = (i + 1 < n) ? activate(net.hidden_activation, y) : std::move(y);
  }
  return h;
}

void network_backward(const Network& net, const NetworkCache& cache, const Vector& grad_out,
                      std::vector<LayerGrad>& grads, bool base_grads, bool accumulate) {
  const std::size_t n = net.layers.size();
  if (cache.input.size() != n || cache.pre.size() != n) {
    throw InvalidArgument("network_backward: cache does not match network depth");
  }
  if (grads.size() != n) {
    grads.assign(n, LayerGrad{});
    accumulate = false;
  }
  Vector delta = grad_out;
  for (std::size_t k = n; k-- > 0;) {
    const AdaptedLayer& layer = net.layers[k];
    if (k + 1 < n) delta = activate_backward(net.hidden_activation, cache.pre[k], delta);
    const Vector& x = cache.input[k];
    LayerGrad& g = grads[k];
    if (base_grads) {
      add_or_assign(g.d_w, Matrix(delta * x.transpose()), accumulate);
      if (layer.base.bias) add_or_assign(g.d_bias, delta, accumulate);
    }
    Vector dx;
    switch (layer.kind()) {
      case AdapterKind::kNone:
        dx = frozen_backward(layer.base, delta);
        break;
      case AdapterKind::kDelta: {
        const Matrix& d = std::get<DeltaAdapter>(layer.adapter).delta;
        add_or_assign(g.d_delta, Matrix(delta * x.transpose()), accumulate);
        dx = frozen_backward(layer.base, delta);
        dx.noalias() += d.transpose() * delta;
        break;
      }
      case AdapterKind::kLora: {
        GradSet gs = lora_backward(layer.base, std::get<LoraAdapter>(layer.adapter), cache.layer[k], delta);
        add_or_assign(g.adapter.d_a, gs.d_a, accumulate);
        add_or_assign(g.adapter.d_b, gs.d_b, accumulate);
        dx = std::move(gs.dx);
        break;
      }
      case AdapterKind::kDisel: {
        GradSet gs = disel_backward(layer.base, std::get<DiselAdapter>(layer.adapter), cache.layer[k], delta);
        add_or_assign(g.adapter.d_a, gs.d_a, accumulate);
        add_or_assign(g.adapter.d_b, gs.d_b, accumulate);
        add_or_assign(g.adapter.d_wg, gs.d_wg, accumulate);
        add_or_assign(g.adapter.d_bg, gs.d_bg, accumulate);
        dx = std::move(gs.dx);
        break;
      }
    }
    delta = std::move(dx);
  }
}

Network frozen_copy(const Network& net) {
  Network out;
  out.hidden_activation = net.hidden_activation;
  for (const auto& l : net.layers) out.layers.push_back(AdaptedLayer{l.base, std::monostate{}});
  return out;
}

std::uint64_t frozen_hash(const Network& net) {
  std::uint64_t h = 0;
  for (const auto& l : net.layers) {
    h = h * 31 + content_hash(l.base.w0);
    if (l.base.bias) h = h * 31 + content_hash(as_span(*l.base.bias));
  }
  return h;
}

}  // namespace disel
