#include <cmath>
#include <set>

#include "disel/errors.hpp"
#include "disel/trainer.hpp"
#include "train_util.hpp"

namespace disel {

namespace {

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

// Sequential two-pass reduction so results do not depend on thread count.
MeanSe mean_se(const std::vector<double>& v) {
  const auto n = static_cast<double>(v.size());
  double sum = 0.0;
  for (double x : v) sum += x;
  const double mean = sum / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double var = v.size() > 1 ? ss / (n - 1.0) : 0.0;
  return {mean, std::sqrt(var / n)};
}

MeanSe population_mse(const Network& model, const Batch& b) {
  std::vector<double> err(b.size());
  parallel_for(b.size(), [&](std::size_t i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const Vector x = b.x.row(ii).transpose();
    err[i] = (network_forward(model, x) - b.y.row(ii).transpose()).squaredNorm();
  });
  return mean_se(err);
}

double batch_loss(const Network& model, const Batch& b) {
  std::vector<double> err(b.size());
  parallel_for(b.size(), [&](std::size_t i) {
    const auto ii = static_cast<Eigen::Index>(i);
    err[i] = (network_forward(model, Vector(b.x.row(ii).transpose())) - b.y.row(ii).transpose()).squaredNorm();
  });
  double sum = 0.0;
  for (double e : err) sum += e;
  return sum / static_cast<double>(b.size());
}

}  // namespace

double mean_gate(const Network& model, const Matrix& x) {
  const auto gated = model.gated_layers();
  if (gated.empty() || x.rows() == 0) return kNotMeasured;
  const auto rows = static_cast<std::size_t>(x.rows());
  std::vector<double> per_row(rows);
  parallel_for(rows, [&](std::size_t i) {
    NetworkCache cache;
    network_forward(model, Vector(x.row(static_cast<Eigen::Index>(i)).transpose()), &cache);
    double s = 0.0;
    for (std::size_t l : gated) s += cache.layer[l].g.sum();
    per_row[i] = s;
  });
  std::size_t per_sample = 0;
  for (std::size_t l : gated) per_sample += std::get<DiselAdapter>(model.layers[l].adapter).rank();
  double total = 0.0;
  for (double s : per_row) total += s;
  return total / static_cast<double>(rows * per_sample);
}

ToyEvalSet make_toy_eval_set(const MixtureModel& mm, std::size_t n, const RngStream& rng) {
  return {sample_population(mm, Population::kFt, n, rng.derive("eval_ft")),
          sample_population(mm, Population::kPt, n, rng.derive("eval_pt"))};
}

PopulationMse eval_per_population(const Network& model, const ToyEvalSet& eval) {
  const MeanSe ft = population_mse(model, eval.ft);
  const MeanSe pt = population_mse(model, eval.pt);
  PopulationMse out{ft.mean, ft.se, pt.mean, pt.se};
  out.gate_mean_ft = mean_gate(model, eval.ft.x);
  out.gate_mean_pt = mean_gate(model, eval.pt.x);
  return out;
}

PopulationMse eval_per_population(const Network& model, const MixtureModel& mm, std::size_t n,
                                  const RngStream& rng) {
  if (n == 0) throw InvalidArgument("eval_per_population: n must be >= 1");
  return eval_per_population(model, make_toy_eval_set(mm, n, rng));
}

Network make_toy_model(const Method& method, const MixtureModel& mm, const RngStream& rng) {
  validate(mm);
  Network net;
  AdaptedLayer layer{FrozenLinear{mm.w0, std::nullopt}, std::monostate{}};
  const std::size_t d_in = mm.d();
  const std::size_t d_out = mm.d_y();
  RngStream init = rng.derive("adapter");
  switch (method.kind) {
    case MethodKind::kFrozen:
      break;
    case MethodKind::kFullFt:
      layer.adapter = DeltaAdapter{Matrix::Zero(mm.w0.rows(), mm.w0.cols())};
      break;
    case MethodKind::kLora:
      layer.adapter = init_lora(d_in, d_out, method.rank, method.alpha, init);
      break;
    case MethodKind::kDisel:
      layer.adapter = init_disel(d_in, d_out, method.rank, method.alpha, method.gate_bias_init, init);
      break;
  }
  net.layers.push_back(std::move(layer));
  return net;
}

Network true_toy_model(const MixtureModel& mm) {
  Network net;
  net.layers.push_back(AdaptedLayer{FrozenLinear{mm.w0, std::nullopt}, DeltaAdapter{mm.m}});
  return net;
}

TrainResult train_toy(const Method& method, const MixtureModel& mm, const TrainConfig& cfg, const RngStream& rng) {
  validate(cfg);
  validate(mm);
  TrainResult result{make_toy_model(method, mm, rng.derive("init")), MetricLog(method.name())};
  Network& model = result.model;
  const ToyEvalSet eval = make_toy_eval_set(mm, cfg.eval_samples, rng.derive("eval"));
  const Batch monitor = sample_batch(mm, cfg.monitor_samples, rng.derive("monitor"), cfg.noise_std);
  const auto steps = checkpoint_steps(cfg);
  const std::set<std::size_t> checkpoint_at(steps.begin(), steps.end());
  const bool gated = method.kind == MethodKind::kDisel;

  auto record = [&](std::size_t step) {
    CheckpointRecord r;
    r.step = step;
    r.train_loss = batch_loss(model, monitor);
    const PopulationMse m = eval_per_population(model, eval);
    r.mse_ft = m.mse_ft;
    r.mse_ft_se = m.mse_ft_se;
    r.mse_pt = m.mse_pt;
    r.mse_pt_se = m.mse_pt_se;
    r.gate_mean_ft = m.gate_mean_ft;
    r.gate_mean_pt = m.gate_mean_pt;
    if (method.kind != MethodKind::kFrozen) {
      const double s = detail::lr_scale(cfg, step);
      r.lr_adapter = cfg.lr * s;
      if (gated) r.lr_gate = cfg.lr * method.gate_lr_ratio * s;
    }
    if (!std::isfinite(r.train_loss) || !std::isfinite(r.mse_ft) || !std::isfinite(r.mse_pt)) {
      throw TrainingDiverged(method.name() + ": non-finite evaluation at step " + std::to_string(step), step,
                             result.log);
    }
    result.log.append(r);
  };

  record(0);
  if (method.kind == MethodKind::kFrozen) {
    for (std::size_t s : steps) {
      if (s > 0) record(s);
    }
    return result;
  }

  std::vector<LayerGrad> grads;
  AdamWState state;
  const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const Batch batch = sample_batch(mm, cfg.batch_size, rng.derive("train_batch", step), cfg.noise_std);
    double loss = 0.0;
    NetworkCache cache;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const Vector err = network_forward(model, Vector(batch.x.row(ii).transpose()), &cache) -
                         batch.y.row(ii).transpose();
      loss += err.squaredNorm();
      network_backward(model, cache, Vector(2.0 * inv_b * err), grads, false, i > 0);
    }
    loss *= inv_b;
    if (!std::isfinite(loss)) {
      throw TrainingDiverged(method.name() + ": non-finite training loss at step " + std::to_string(step), step,
                             result.log);
    }
    auto groups = detail::build_groups(model, grads, method, cfg, false);
    try {
      detail::apply_update(groups, state, cfg, detail::lr_scale(cfg, step));
    } catch (const NumericError& e) {
      throw TrainingDiverged(method.name() + ": " + e.what(), step, result.log);
    }
    if (checkpoint_at.contains(step + 1)) record(step + 1);
  }
  return result;
}

}  // namespace disel
