#pragma once

// Training loops for the two desk-scale experiments:
//  - toy regression on the two-population mixture, where full fine-tuning,
//    LoRA and the gated adapter are compared against the closed-form floors;
//  - a small MLP pre-trained on one classification task and then adapted to
//    a second one, tracking accuracy on both at every checkpoint.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "disel/datagen.hpp"
#include "disel/network.hpp"
#include "disel/optim.hpp"

namespace disel {

enum class MethodKind { kFrozen, kFullFt, kLora, kDisel };

std::string to_string(MethodKind kind);
MethodKind parse_method(std::string_view name);

struct Method {
  MethodKind kind = MethodKind::kDisel;
  std::size_t rank = 2;
  double alpha = 2.0;
  double gate_bias_init = -3.0;
  /// Gate learning rate as a multiple of the adapter learning rate.
  double gate_lr_ratio = 5.0;

  [[nodiscard]] std::string name() const { return to_string(kind); }
};

enum class OptimizerKind { kSgd, kAdamW };
enum class ScheduleKind { kConstant, kCosineWarmup };

std::string to_string(OptimizerKind kind);
std::string to_string(ScheduleKind kind);
OptimizerKind parse_optimizer(std::string_view name);
ScheduleKind parse_schedule(std::string_view name);

struct TrainConfig {
  std::size_t steps = 20000;
  std::size_t batch_size = 128;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  double lr = 0.01;
  ScheduleKind schedule = ScheduleKind::kCosineWarmup;
  double warmup_ratio = 0.02;
  double weight_decay = 0.0;
  /// 0 disables clipping.
  double max_grad_norm = 0.0;
  AdamWConfig adam;
  /// Evenly spaced evaluation points after step 0.
  std::size_t checkpoints = 16;
  /// Held-out samples per population (toy) reused at every checkpoint.
  std::size_t eval_samples = 50000;
  /// Fixed batch on which the training objective is reported.
  std::size_t monitor_samples = 4096;
  /// Target noise; the toy model is noiseless by default.
  double noise_std = 0.0;
};

void validate(const TrainConfig& cfg);

/// Steps at which checkpoints are evaluated: 0, then `checkpoints` evenly
/// spaced steps ending at cfg.steps (duplicates removed).
std::vector<std::size_t> checkpoint_steps(const TrainConfig& cfg);

inline constexpr double kNotMeasured = std::numeric_limits<double>::quiet_NaN();

struct CheckpointRecord {
  std::size_t step = 0;
  double train_loss = kNotMeasured;
  double mse_ft = kNotMeasured;
  double mse_ft_se = kNotMeasured;
  double mse_pt = kNotMeasured;
  double mse_pt_se = kNotMeasured;
  double ft_accuracy = kNotMeasured;
  double retention_accuracy = kNotMeasured;
  /// Mean recorded gate value on fine-tuning-domain and other inputs.
  double gate_mean_ft = kNotMeasured;
  double gate_mean_pt = kNotMeasured;
  double lr_adapter = kNotMeasured;
  double lr_gate = kNotMeasured;
};

inline constexpr std::string_view kMetricSchema = "disel.metrics/1";

class MetricLog {
 public:
  MetricLog() = default;
  explicit MetricLog(std::string method) : method_(std::move(method)) {}

  /// Throws InvalidArgument unless record.step exceeds every earlier step.
  void append(const CheckpointRecord& record);

  [[nodiscard]] const std::string& method() const { return method_; }
  [[nodiscard]] const std::vector<CheckpointRecord>& records() const { return records_; }
  [[nodiscard]] const CheckpointRecord& back() const { return records_.back(); }
  [[nodiscard]] bool empty() const { return records_.empty(); }

  /// One JSON object per line; unmeasured fields are omitted.
  [[nodiscard]] std::string to_jsonl() const;

 private:
  std::string method_;
  std::vector<CheckpointRecord> records_;
};

/// CSV summary across logs, one row per checkpoint, with header
/// method,step,train_loss,mse_ft,mse_ft_se,mse_pt,mse_pt_se,ft_accuracy,
/// retention_accuracy,gate_mean_ft,gate_mean_pt,lr_adapter,lr_gate.
/// Unmeasured fields are empty. `labels` optionally overrides the method
/// column per log.
std::string metrics_csv(const std::vector<MetricLog>& logs, const std::vector<std::string>& labels = {});

/// Raised when the loss becomes non-finite. Carries the last good record.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::size_t step, MetricLog log)
      : std::runtime_error(what), step_(step), log_(std::move(log)) {}
  [[nodiscard]] std::size_t step() const { return step_; }
  [[nodiscard]] const MetricLog& log() const { return log_; }

 private:
  std::size_t step_;
  MetricLog log_;
};

// ---------------------------------------------------------------------------
// Toy regression

struct PopulationMse {
  double mse_ft = 0.0;
  double mse_ft_se = 0.0;
  double mse_pt = 0.0;
  double mse_pt_se = 0.0;
  double gate_mean_ft = kNotMeasured;
  double gate_mean_pt = kNotMeasured;
};

/// Held-out inputs from each population, generated once and reused.
struct ToyEvalSet {
  Batch ft;
  Batch pt;
};

ToyEvalSet make_toy_eval_set(const MixtureModel& mm, std::size_t n, const RngStream& rng);

/// Per-population mean of ||model(x) - y||^2 with standard errors, and the
/// mean gate value per population when the model has gated layers.
PopulationMse eval_per_population(const Network& model, const ToyEvalSet& eval);
PopulationMse eval_per_population(const Network& model, const MixtureModel& mm, std::size_t n, const RngStream& rng);

/// Single-layer model on W0 with the method's correction at its zero start.
Network make_toy_model(const Method& method, const MixtureModel& mm, const RngStream& rng);

/// The exact generator W0 + M as a model (zero error on ft and pt draws).
Network true_toy_model(const MixtureModel& mm);

struct TrainResult {
  Network model;
  MetricLog log;
};

/// Minimizes the mixture objective E||model(x) - y||^2 over minibatches.
/// Throws TrainingDiverged on a non-finite loss.
TrainResult train_toy(const Method& method, const MixtureModel& mm, const TrainConfig& cfg, const RngStream& rng);

// ---------------------------------------------------------------------------
// MLP retention experiment

struct MlpSpec {
  std::size_t hidden = 64;
  std::size_t hidden_layers = 2;
  Activation activation = Activation::kTanh;
};

/// Kaiming-uniform weights (fan_in), zero biases. Layers: d_in -> hidden
/// (x hidden_layers) -> n_classes.
Network make_mlp(std::size_t d_in, std::size_t n_classes, const MlpSpec& spec, const RngStream& rng);

double accuracy(const Network& model, const ClassificationSet& data);
double cross_entropy(const Network& model, const ClassificationSet& data, std::size_t max_rows = 0);

/// Mean gate value over every gated layer, rank and row of x; NaN when the
/// model has no gated layer.
double mean_gate(const Network& model, const Matrix& x);

/// Trains every weight and bias on the task (biases excluded from decay).
void pretrain_mlp(Network& model, const ClassificationTask& task, const TrainConfig& cfg, const RngStream& rng);

/// Attaches the method's adapters to the pre-trained network: low-rank
/// methods adapt every hidden layer and leave the head frozen; full
/// fine-tuning trains a delta on every layer.
Network attach_adapters(const Network& pretrained, const Method& method, const RngStream& rng);

/// Adapts on the fine-tuning task only, logging FT accuracy (finetune test
/// split), retention (pretrain test split) and gate means at every checkpoint.
TrainResult adapt_mlp(const Network& pretrained, const Method& method, const RetentionTasks& tasks,
                      const TrainConfig& cfg, const RngStream& rng);

struct RetentionConfig {
  RetentionTaskSpec tasks;
  MlpSpec mlp;
  TrainConfig pretrain;
  TrainConfig adapt;
  std::vector<Method> methods;
};

RetentionConfig default_retention_config();

struct RetentionRun {
  Network pretrained;
  double pretrain_accuracy = 0.0;  // task-1 test accuracy before adaptation
  std::vector<Method> methods;
  std::vector<TrainResult> results;
};

RetentionRun retention_experiment(const RetentionConfig& cfg, const RngStream& rng);

}  // namespace disel
