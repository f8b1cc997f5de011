#include <cmath>
#include <sstream>

#include "json.hpp"

#include "disel/errors.hpp"
#include "disel/trainer.hpp"
#include "format.hpp"
#include "train_util.hpp"

namespace disel {

std::string to_string(MethodKind kind) {
  switch (kind) {
    case MethodKind::kFrozen:
      return "frozen";
    case MethodKind::kFullFt:
      return "fullft";
    case MethodKind::kLora:
      return "lora";
    case MethodKind::kDisel:
      return "disel";
  }
  return "frozen";
}

MethodKind parse_method(std::string_view name) {
  if (name == "frozen") return MethodKind::kFrozen;
  if (name == "fullft" || name == "full-ft" || name == "full") return MethodKind::kFullFt;
  if (name == "lora") return MethodKind::kLora;
  if (name == "disel") return MethodKind::kDisel;
  throw InvalidArgument("unknown method '" + std::string(name) + "' (expected frozen, fullft, lora, disel)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adamw"; }
std::string to_string(ScheduleKind kind) { return kind == ScheduleKind::kConstant ? "constant" : "cosine"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adamw") return OptimizerKind::kAdamW;
  throw InvalidArgument("unknown optimizer '" + std::string(name) + "' (expected sgd, adamw)");
}

ScheduleKind parse_schedule(std::string_view name) {
  if (name == "constant") return ScheduleKind::kConstant;
  if (name == "cosine") return ScheduleKind::kCosineWarmup;
  throw InvalidArgument("unknown schedule '" + std::string(name) + "' (expected constant, cosine)");
}

void validate(const TrainConfig& cfg) {
  if (cfg.batch_size == 0) throw InvalidArgument("train config: batch_size must be >= 1");
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw InvalidArgument("train config: lr must be >= 0");
  if (!(cfg.warmup_ratio >= 0.0 && cfg.warmup_ratio < 1.0)) {
    throw InvalidArgument("train config: warmup_ratio must be in [0, 1)");
  }
  if (!(cfg.weight_decay >= 0.0)) throw InvalidArgument("train config: weight_decay must be >= 0");
  if (!(cfg.max_grad_norm >= 0.0)) throw InvalidArgument("train config: max_grad_norm must be >= 0");
  if (cfg.checkpoints == 0) throw InvalidArgument("train config: checkpoints must be >= 1");
  if (cfg.eval_samples < 2 || cfg.monitor_samples == 0) {
    throw InvalidArgument("train config: eval_samples must be >= 2 and monitor_samples >= 1");
  }
  if (!(cfg.noise_std >= 0.0)) throw InvalidArgument("train config: noise_std must be >= 0");
}

std::vector<std::size_t> checkpoint_steps(const TrainConfig& cfg) {
  std::vector<std::size_t> steps{0};
  for (std::size_t k = 1; k <= cfg.checkpoints; ++k) {
    const std::size_t s = (cfg.steps * k) / cfg.checkpoints;
    if (s > steps.back()) steps.push_back(s);
  }
  return steps;
}

void MetricLog::append(const CheckpointRecord& record) {
  if (!records_.empty() && record.step <= records_.back().step) {
    throw InvalidArgument("metric log: checkpoint steps must be strictly increasing");
  }
  records_.push_back(record);
}

namespace {

struct Field {
  const char* name;
  double CheckpointRecord::*member;
};

constexpr Field kFields[] = {
    {"train_loss", &CheckpointRecord::train_loss},
    {"mse_ft", &CheckpointRecord::mse_ft},
    {"mse_ft_se", &CheckpointRecord::mse_ft_se},
    {"mse_pt", &CheckpointRecord::mse_pt},
    {"mse_pt_se", &CheckpointRecord::mse_pt_se},
    {"ft_accuracy", &CheckpointRecord::ft_accuracy},
    {"retention_accuracy", &CheckpointRecord::retention_accuracy},
    {"gate_mean_ft", &CheckpointRecord::gate_mean_ft},
    {"gate_mean_pt", &CheckpointRecord::gate_mean_pt},
    {"lr_adapter", &CheckpointRecord::lr_adapter},
    {"lr_gate", &CheckpointRecord::lr_gate},
};

}  // namespace

std::string MetricLog::to_jsonl() const {
  std::string out;
  for (const auto& r : records_) {
    nlohmann::ordered_json j;
    j["schema"] = kMetricSchema;
    j["method"] = method_;
    j["step"] = r.step;
    for (const auto& f : kFields) {
      const double v = r.*(f.member);
      if (std::isfinite(v)) j[f.name] = v;
    }
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string metrics_csv(const std::vector<MetricLog>& logs, const std::vector<std::string>& labels) {
  std::ostringstream out;
  out << "method,step";
  for (const auto& f : kFields) out << ',' << f.name;
  out << '\n';
  for (std::size_t li = 0; li < logs.size(); ++li) {
    const std::string& label = li < labels.size() ? labels[li] : logs[li].method();
    for (const auto& r : logs[li].records()) {
      out << label << ',' << r.step;
      for (const auto& f : kFields) {
        out << ',';
        const double v = r.*(f.member);
        if (std::isfinite(v)) out << fmt_double(v);
      }
      out << '\n';
    }
  }
  return out.str();
}

namespace detail {

std::vector<ParamGroup> build_groups(Network& net, std::vector<LayerGrad>& grads, const Method& method,
                                     const TrainConfig& cfg, bool base) {
  std::vector<ParamGroup> groups;
  if (base) {
    ParamGroup dense = make_group(GroupTag::kDense, cfg.lr, cfg.weight_decay);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      auto& layer = net.layers[i];
      auto& g = grads[i];
      const std::string id = "layer" + std::to_string(i);
      dense.params.push_back({id + ".w", as_span(layer.base.w0), as_span(g.d_w), true});
      if (layer.base.bias) dense.params.push_back({id + ".bias", as_span(*layer.base.bias), as_span(g.d_bias), false});
    }
    groups.push_back(std::move(dense));
    return groups;
  }

  ParamGroup adapter = make_group(method.kind == MethodKind::kFullFt ? GroupTag::kDense : GroupTag::kAdapter, cfg.lr,
                                  cfg.weight_decay);
  ParamGroup gate = make_group(GroupTag::kGate, cfg.lr * method.gate_lr_ratio, 0.0);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    auto& layer = net.layers[i];
    auto& g = grads[i];
    const std::string id = "layer" + std::to_string(i);
    switch (layer.kind()) {
      case AdapterKind::kNone:
        break;
      case AdapterKind::kDelta:
        adapter.params.push_back({id + ".delta", as_span(std::get<DeltaAdapter>(layer.adapter).delta),
                                  as_span(g.d_delta), true});
        break;
      case AdapterKind::kLora: {
        auto& ad = std::get<LoraAdapter>(layer.adapter);
        adapter.params.push_back({id + ".a", as_span(ad.a), as_span(g.adapter.d_a), true});
        adapter.params.push_back({id + ".b", as_span(ad.b), as_span(g.adapter.d_b), true});
        break;
      }
      case AdapterKind::kDisel: {
        auto& ad = std::get<DiselAdapter>(layer.adapter);
        adapter.params.push_back({id + ".a", as_span(ad.a), as_span(g.adapter.d_a), true});
        adapter.params.push_back({id + ".b", as_span(ad.b), as_span(g.adapter.d_b), true});
        gate.params.push_back({id + ".wg", as_span(ad.wg), as_span(g.adapter.d_wg), false});
        gate.params.push_back({id + ".bg", as_span(ad.bg), as_span(g.adapter.d_bg), false});
        break;
      }
    }
  }
  if (!adapter.params.empty()) groups.push_back(std::move(adapter));
  if (!gate.params.empty()) groups.push_back(std::move(gate));
  return groups;
}

double lr_scale(const TrainConfig& cfg, std::size_t step) {
  if (cfg.schedule == ScheduleKind::kConstant) return 1.0;
  return cosine_warmup_lr(std::min(step, cfg.steps), std::max<std::size_t>(cfg.steps, 1), cfg.warmup_ratio, 1.0);
}

void apply_update(std::vector<ParamGroup>& groups, AdamWState& state, const TrainConfig& cfg, double scale) {
  if (cfg.max_grad_norm > 0.0) clip_grad_norm(groups, cfg.max_grad_norm);
  if (cfg.optimizer == OptimizerKind::kAdamW) {
    adamw_step(groups, state, cfg.adam, scale);
  } else {
    sgd_step(groups, scale);
  }
}

}  // namespace detail

}  // namespace disel
