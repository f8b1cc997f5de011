#include "disel/optim.hpp"

#include <cmath>
#include <numbers>

#include "disel/errors.hpp"

namespace disel {

namespace {

void check_finite_grads(const std::vector<ParamGroup>& groups) {
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    for (const auto& p : groups[gi].params) {
      if (p.grad.size() != p.value.size()) {
        throw InvalidArgument("optimizer: gradient for '" + p.name + "' does not match its parameter");
      }
      for (double g : p.grad) {
        if (!std::isfinite(g)) {
          throw NumericError("optimizer: non-finite gradient in group " + std::to_string(gi) + " (" +
                             to_string(groups[gi].tag) + "), parameter '" + p.name + "'");
        }
      }
    }
  }
}

double effective_decay(const ParamGroup& group, const ParamRef& p) {
  if (group.tag == GroupTag::kGate || !p.decay) return 0.0;
  return group.weight_decay;
}

}  // namespace

std::string to_string(GroupTag tag) {
  switch (tag) {
    case GroupTag::kAdapter:
      return "adapter";
    case GroupTag::kGate:
      return "gate";
    case GroupTag::kDense:
      return "dense";
  }
  return "adapter";
}

ParamGroup make_group(GroupTag tag, double lr, double weight_decay) {
  if (!(lr >= 0.0) || !(weight_decay >= 0.0)) {
    throw InvalidArgument("param group: lr and weight_decay must be >= 0");
  }
  ParamGroup g;
  g.tag = tag;
  g.lr = lr;
  g.weight_decay = tag == GroupTag::kGate ? 0.0 : weight_decay;
  return g;
}

void adamw_step(std::vector<ParamGroup>& groups, AdamWState& state, const AdamWConfig& cfg, double lr_scale) {
  check_finite_grads(groups);
  if (state.step == 0) {
    state.m.assign(groups.size(), {});
    state.v.assign(groups.size(), {});
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      for (const auto& p : groups[gi].params) {
        state.m[gi].emplace_back(p.value.size(), 0.0);
        state.v[gi].emplace_back(p.value.size(), 0.0);
      }
    }
  }
  if (state.m.size() != groups.size()) throw InvalidArgument("adamw: parameter groups changed between steps");
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    if (state.m[gi].size() != groups[gi].params.size()) {
      throw InvalidArgument("adamw: parameter groups changed between steps");
    }
    for (std::size_t pi = 0; pi < groups[gi].params.size(); ++pi) {
      if (state.m[gi][pi].size() != groups[gi].params[pi].value.size()) {
        throw InvalidArgument("adamw: parameter shapes changed between steps");
      }
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    ParamGroup& group = groups[gi];
    const double lr = group.lr * lr_scale;
    for (std::size_t pi = 0; pi < group.params.size(); ++pi) {
      ParamRef& p = group.params[pi];
      const double shrink = 1.0 - lr * effective_decay(group, p);
      auto& m = state.m[gi][pi];
      auto& v = state.v[gi][pi];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        p.value[i] = p.value[i] * shrink - lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
      }
    }
  }
}

void sgd_step(std::vector<ParamGroup>& groups, double lr_scale) {
  check_finite_grads(groups);
  for (auto& group : groups) {
    const double lr = group.lr * lr_scale;
    for (auto& p : group.params) {
      const double shrink = 1.0 - lr * effective_decay(group, p);
      for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = p.value[i] * shrink - lr * p.grad[i];
    }
  }
}

double cosine_warmup_lr(std::size_t step, std::size_t total_steps, double warmup_ratio, double base_lr) {
  if (total_steps == 0) throw InvalidArgument("cosine_warmup_lr: total_steps must be >= 1");
  if (step > total_steps) throw InvalidArgument("cosine_warmup_lr: step beyond total_steps");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
    throw InvalidArgument("cosine_warmup_lr: warmup_ratio must be in [0, 1)");
  }
  const double s = static_cast<double>(step);
  const double total = static_cast<double>(total_steps);
  const double warmup = warmup_ratio * total;
  if (s < warmup) return base_lr * s / warmup;
  const double progress = (s - warmup) / (total - warmup);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_grad_norm(std::span<const std::span<double>> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw InvalidArgument("clip_grad_norm: max_norm must be > 0");
  double sq = 0.0;
  for (auto g : grads) {
    for (double v : g) sq += v * v;
  }
  const double total = std::sqrt(sq);
  if (total > max_norm) {
    const double scale = max_norm / total;
    for (auto g : grads) {
      for (double& v : g) v *= scale;
    }
  }
  return total;
}

double clip_grad_norm(std::vector<ParamGroup>& groups, double max_norm) {
  std::vector<std::span<double>> grads;
  for (auto& g : groups) {
    for (auto& p : g.params) grads.push_back(p.grad);
  }
  return clip_grad_norm(grads, max_norm);
}

}  // namespace disel
