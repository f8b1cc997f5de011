#include <cmath>
#include <set>

#include "disel/errors.hpp"
#include "disel/trainer.hpp"
#include "train_util.hpp"

namespace disel {

namespace {

Vector log_softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

void check_labels(const ClassificationSet& data, std::size_t classes) {
  if (static_cast<std::size_t>(data.x.rows()) != data.labels.size()) {
    throw InvalidArgument("classification set: row count does not match label count");
  }
  for (int y : data.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw InvalidArgument("classification set: label out of range for the model head");
    }
  }
}

// Minibatch of row indices drawn uniformly with replacement.
std::vector<std::size_t> draw_rows(std::size_t n, std::size_t batch, RngStream rng) {
  std::vector<std::size_t> rows(batch);
  for (auto& r : rows) r = static_cast<std::size_t>(rng.next_u64() % n);
  return rows;
}

// Accumulates the cross-entropy gradient of one minibatch; returns its mean loss.
double ce_backward(const Network& model, const ClassificationSet& data, const std::vector<std::size_t>& rows,
                   std::vector<LayerGrad>& grads, bool base) {
  NetworkCache cache;
  double loss = 0.0;
  const double inv_b = 1.0 / static_cast<double>(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    const Vector lp = log_softmax(network_forward(model, Vector(data.x.row(r).transpose()), &cache));
    const int y = data.labels[rows[i]];
    loss -= lp[y];
    Vector grad = lp.array().exp().matrix();
    grad[y] -= 1.0;
    network_backward(model, cache, Vector(inv_b * grad), grads, base, i > 0);
  }
  return loss * inv_b;
}

}  // namespace

Network make_mlp(std::size_t d_in, std::size_t n_classes, const MlpSpec& spec, const RngStream& rng) {
  if (d_in == 0 || n_classes < 2 || spec.hidden == 0) {
    throw InvalidArgument("make_mlp: need d_in >= 1, n_classes >= 2 and hidden >= 1");
  }
  Network net;
  net.hidden_activation = spec.activation;
  std::size_t fan_in = d_in;
  for (std::size_t i = 0; i <= spec.hidden_layers; ++i) {
    const std::size_t out = i == spec.hidden_layers ? n_classes : spec.hidden;
    RngStream w_rng = rng.derive("layer", i);
    FrozenLinear base{kaiming_uniform_init(out, fan_in, fan_in, w_rng), Vector::Zero(static_cast<Eigen::Index>(out))};
    net.layers.push_back(AdaptedLayer{std::move(base), std::monostate{}});
    fan_in = out;
  }
  return net;
}

double accuracy(const Network& model, const ClassificationSet& data) {
  check_labels(data, model.d_out());
  const std::size_t n = data.labels.size();
  if (n == 0) throw InvalidArgument("accuracy: empty data set");
  std::vector<char> hit(n);
  parallel_for(n, [&](std::size_t i) {
    const Vector out = network_forward(model, Vector(data.x.row(static_cast<Eigen::Index>(i)).transpose()));
    Eigen::Index arg = 0;
    out.maxCoeff(&arg);
    hit[i] = arg == data.labels[i];
  });
  std::size_t correct = 0;
  for (char h : hit) correct += h;
  return static_cast<double>(correct) / static_cast<double>(n);
}

double cross_entropy(const Network& model, const ClassificationSet& data, std::size_t max_rows) {
  check_labels(data, model.d_out());
  std::size_t n = data.labels.size();
  if (max_rows > 0) n = std::min(n, max_rows);
  if (n == 0) throw InvalidArgument("cross_entropy: empty data set");
  std::vector<double> loss(n);
  parallel_for(n, [&](std::size_t i) {
    const Vector lp = log_softmax(network_forward(model, Vector(data.x.row(static_cast<Eigen::Index>(i)).transpose())));
    loss[i] = -lp[data.labels[i]];
  });
  double sum = 0.0;
  for (double l : loss) sum += l;
  return sum / static_cast<double>(n);
}

void pretrain_mlp(Network& model, const ClassificationTask& task, const TrainConfig& cfg, const RngStream& rng) {
  validate(cfg);
  validate(model);
  check_labels(task.train, model.d_out());
  const std::size_t n = task.train.labels.size();
  if (n == 0) throw InvalidArgument("pretrain_mlp: empty training set");
  const Method dense{MethodKind::kFullFt};
  std::vector<LayerGrad> grads;
  AdamWState state;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto rows = draw_rows(n, cfg.batch_size, rng.derive("pretrain_batch", step));
    const double loss = ce_backward(model, task.train, rows, grads, true);
    if (!std::isfinite(loss)) {
      throw NumericError("pretrain_mlp: non-finite loss at step " + std::to_string(step));
    }
    auto groups = detail::build_groups(model, grads, dense, cfg, true);
    detail::apply_update(groups, state, cfg, detail::lr_scale(cfg, step));
  }
}

Network attach_adapters(const Network& pretrained, const Method& method, const RngStream& rng) {
  validate(pretrained);
  Network net = frozen_copy(pretrained);
  const std::size_t n = net.layers.size();
  for (std::size_t i = 0; i < n; ++i) {
    AdaptedLayer& layer = net.layers[i];
    const bool hidden = i + 1 < n || n == 1;
    RngStream init = rng.derive("adapter", i);
    switch (method.kind) {
      case MethodKind::kFrozen:
        break;
      case MethodKind::kFullFt:
        layer.adapter = DeltaAdapter{Matrix::Zero(layer.base.w0.rows(), layer.base.w0.cols())};
        break;
      case MethodKind::kLora:
        if (hidden) layer.adapter = init_lora(layer.base.d_in(), layer.base.d_out(), method.rank, method.alpha, init);
        break;
      case MethodKind::kDisel:
        if (hidden) {
          layer.adapter = init_disel(layer.base.d_in(), layer.base.d_out(), method.rank, method.alpha,
                                     method.gate_bias_init, init);
        }
        break;
    }
  }
  return net;
}

TrainResult adapt_mlp(const Network& pretrained, const Method& method, const RetentionTasks& tasks,
                      const TrainConfig& cfg, const RngStream& rng) {
  validate(cfg);
  TrainResult result{attach_adapters(pretrained, method, rng.derive("adapters")), MetricLog(method.name())};
  Network& model = result.model;
  const ClassificationSet& train = tasks.finetune.train;
  check_labels(train, model.d_out());
  const std::size_t n = train.labels.size();
  if (n == 0) throw InvalidArgument("adapt_mlp: empty fine-tuning set");
  const auto steps = checkpoint_steps(cfg);
  const std::set<std::size_t> checkpoint_at(steps.begin(), steps.end());
  const bool gated = method.kind == MethodKind::kDisel;

  auto record = [&](std::size_t step) {
    CheckpointRecord r;
    r.step = step;
    r.train_loss = cross_entropy(model, train, cfg.monitor_samples);
    r.ft_accuracy = accuracy(model, tasks.finetune.test);
    r.retention_accuracy = accuracy(model, tasks.pretrain.test);
    r.gate_mean_ft = mean_gate(model, tasks.finetune.test.x);
    r.gate_mean_pt = mean_gate(model, tasks.pretrain.test.x);
    if (method.kind != MethodKind::kFrozen) {
      const double s = detail::lr_scale(cfg, step);
      r.lr_adapter = cfg.lr * s;
      if (gated) r.lr_gate = cfg.lr * method.gate_lr_ratio * s;
    }
    if (!std::isfinite(r.train_loss)) {
      throw TrainingDiverged(method.name() + ": non-finite loss at step " + std::to_string(step), step, result.log);
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

  const RngStream batches = rng.derive("adapt_batches");
  std::vector<LayerGrad> grads;
  AdamWState state;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const double loss = ce_backward(model, train, draw_rows(n, cfg.batch_size, batches.derive(step)), grads, false);
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

RetentionConfig default_retention_config() {
  RetentionConfig cfg;
  cfg.pretrain.steps = 1500;
  cfg.pretrain.batch_size = 64;
  cfg.pretrain.optimizer = OptimizerKind::kAdamW;
  cfg.pretrain.lr = 1e-3;
  cfg.pretrain.weight_decay = 0.01;
  cfg.pretrain.max_grad_norm = 1.0;
  cfg.pretrain.monitor_samples = 2000;

  cfg.adapt = cfg.pretrain;
  cfg.adapt.steps = 1600;
  cfg.adapt.lr = 1e-3;

  Method lora{MethodKind::kLora};
  lora.rank = 4;
  lora.alpha = 8.0;
  Method disel = lora;
  disel.kind = MethodKind::kDisel;
  Method full{MethodKind::kFullFt};
  cfg.methods = {full, lora, disel};
  return cfg;
}

RetentionRun retention_experiment(const RetentionConfig& cfg, const RngStream& rng) {
  if (cfg.methods.empty()) throw InvalidArgument("retention_experiment: no methods configured");
  const RetentionTasks tasks = make_retention_tasks(cfg.tasks, rng.derive("tasks"));
  RetentionRun run;
  run.pretrained = make_mlp(cfg.tasks.d, cfg.tasks.n_classes, cfg.mlp, rng.derive("mlp_init"));
  pretrain_mlp(run.pretrained, tasks.pretrain, cfg.pretrain, rng.derive("pretrain"));
  run.pretrain_accuracy = accuracy(run.pretrained, tasks.pretrain.test);
  run.methods = cfg.methods;
  const RngStream adapt = rng.derive("adapt");
  for (const Method& m : cfg.methods) run.results.push_back(adapt_mlp(run.pretrained, m, tasks, cfg.adapt, adapt));
  return run;
}

}  // namespace disel
