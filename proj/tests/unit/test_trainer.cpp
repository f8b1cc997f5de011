#include <cmath>

#include "disel/errors.hpp"
#include "disel/oracle.hpp"
#include "disel/trainer.hpp"
#include "doctest.h"
#include "json.hpp"
#include "support.hpp"

using namespace disel;

namespace {

TrainConfig short_toy_config() {
  TrainConfig cfg;
  cfg.steps = 1500;
  cfg.batch_size = 64;
  cfg.checkpoints = 5;
  cfg.eval_samples = 4000;
  cfg.monitor_samples = 512;
  return cfg;
}

Method method(MethodKind kind, std::size_t rank = 2) {
  Method m;
  m.kind = kind;
  m.rank = rank;
  m.alpha = static_cast<double>(rank);
  return m;
}

RetentionTasks small_tasks(std::uint64_t seed) {
  RetentionTaskSpec spec;
  spec.n_train = 600;
  spec.n_test = 400;
  return make_retention_tasks(spec, RngStream(seed));
}

}  // namespace

TEST_CASE("method, optimizer and schedule names round-trip") {
  for (auto k : {MethodKind::kFrozen, MethodKind::kFullFt, MethodKind::kLora, MethodKind::kDisel})
    CHECK(parse_method(to_string(k)) == k);
  CHECK(parse_method("full-ft") == MethodKind::kFullFt);
  CHECK_THROWS_AS(parse_method("adapter"), InvalidArgument);
  CHECK(parse_optimizer(to_string(OptimizerKind::kAdamW)) == OptimizerKind::kAdamW);
  CHECK(parse_schedule(to_string(ScheduleKind::kConstant)) == ScheduleKind::kConstant);
}

TEST_CASE("checkpoint steps start at zero and end at the last step") {
  TrainConfig cfg;
  cfg.steps = 100;
  cfg.checkpoints = 4;
  CHECK(checkpoint_steps(cfg) == std::vector<std::size_t>{0, 25, 50, 75, 100});
  cfg.steps = 3;
  cfg.checkpoints = 10;
  CHECK(checkpoint_steps(cfg) == std::vector<std::size_t>{0, 1, 2, 3});
  cfg.steps = 0;
  CHECK(checkpoint_steps(cfg) == std::vector<std::size_t>{0});
}

TEST_CASE("metric log requires increasing steps and omits unmeasured fields") {
  MetricLog log("lora");
  CheckpointRecord r;
  r.step = 0;
  r.mse_ft = 1.5;
  log.append(r);
  r.step = 10;
  r.mse_pt = 0.25;
  log.append(r);
  CHECK_THROWS_AS(log.append(r), InvalidArgument);

  const std::string jl = log.to_jsonl();
  std::istringstream in(jl);
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(in, line)) rows.push_back(nlohmann::json::parse(line));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0]["schema"] == "disel.metrics/1");
  CHECK(rows[0]["method"] == "lora");
  CHECK(rows[0]["mse_ft"] == 1.5);
  CHECK_FALSE(rows[0].contains("mse_pt"));
  CHECK(rows[1]["mse_pt"] == 0.25);

  const std::string csv = metrics_csv({log}, {"custom"});
  CHECK(csv.rfind("method,step,train_loss,mse_ft,mse_ft_se,mse_pt,mse_pt_se,ft_accuracy,retention_accuracy,"
                  "gate_mean_ft,gate_mean_pt,lr_adapter,lr_gate\n",
                  0) == 0);
  CHECK(csv.find("custom,0,,1.5,,,,,,,,,\n") != std::string::npos);
  CHECK(csv.find("custom,10,,1.5,,0.25,,,,,,,\n") != std::string::npos);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(validate(cfg), InvalidArgument);
  cfg = TrainConfig{};
  cfg.warmup_ratio = 1.0;
  CHECK_THROWS_AS(validate(cfg), InvalidArgument);
  cfg = TrainConfig{};
  cfg.checkpoints = 0;
  CHECK_THROWS_AS(validate(cfg), InvalidArgument);
}

TEST_CASE("toy models start at the frozen map and the true model is exact") {
  const MixtureModel mm = make_toy_instance(ToyInstance{});
  const ToyEvalSet eval = make_toy_eval_set(mm, 500, RngStream(1));
  const PopulationMse frozen = eval_per_population(make_toy_model(method(MethodKind::kFrozen), mm, RngStream(2)), eval);
  for (auto k : {MethodKind::kFullFt, MethodKind::kLora, MethodKind::kDisel}) {
    const Network net = make_toy_model(method(k), mm, RngStream(2));
    const PopulationMse e = eval_per_population(net, eval);
    CHECK(e.mse_ft == frozen.mse_ft);
    CHECK(e.mse_pt == 0.0);
  }
  const PopulationMse exact = eval_per_population(true_toy_model(mm), eval);
  CHECK(exact.mse_ft < 1e-20);
  CHECK(exact.mse_pt > 0.0);  // W0 + M is wrong on pt inputs

  // frozen error on ft is E||M x||^2 = Tr(M S M^T) = 4 x floor
  CHECK(frozen.mse_ft == doctest::Approx(4.0 * fixed_floor_loss(mm)).epsilon(0.05));
}

TEST_CASE("full fine-tuning approaches the fixed optimum") {
  const MixtureModel mm = make_toy_instance(ToyInstance{});
  TrainConfig cfg = short_toy_config();
  cfg.steps = 3000;
  const TrainResult r = train_toy(method(MethodKind::kFullFt), mm, cfg, RngStream(3));
  const Matrix delta = std::get<DeltaAdapter>(r.model.layers[0].adapter).delta;
  const Matrix opt = fixed_optimum(mm.m, second_moment(mm, Population::kFt), second_moment(mm, Population::kPt));
  CHECK(ref::frobenius(delta - opt) / ref::frobenius(opt) < 0.05);
  const double floor = fixed_floor_loss(mm);
  CHECK(r.log.back().mse_ft == doctest::Approx(floor).epsilon(0.1));
  CHECK(r.log.back().mse_pt == doctest::Approx(floor).epsilon(0.1));
  CHECK(r.log.records().front().step == 0);
  CHECK(r.log.back().step == cfg.steps);
}

TEST_CASE("gated training separates the populations where LoRA cannot") {
  const MixtureModel mm = make_toy_instance(ToyInstance{});
  const TrainConfig cfg = short_toy_config();
  const TrainResult lora = train_toy(method(MethodKind::kLora), mm, cfg, RngStream(4));
  const TrainResult gated = train_toy(method(MethodKind::kDisel), mm, cfg, RngStream(4));
  const double floor = fixed_floor_loss(mm);
  CHECK(lora.log.back().mse_pt > 0.5 * floor);
  CHECK(gated.log.back().mse_ft < lora.log.back().mse_ft);
  CHECK(gated.log.back().mse_pt < lora.log.back().mse_pt);
  CHECK(gated.log.back().gate_mean_ft > gated.log.back().gate_mean_pt);
  CHECK(frozen_hash(gated.model) == frozen_hash(make_toy_model(method(MethodKind::kFrozen), mm, RngStream(0))));
}

TEST_CASE("toy training is deterministic") {
  const MixtureModel mm = make_toy_instance(ToyInstance{});
  TrainConfig cfg = short_toy_config();
  cfg.steps = 200;
  const TrainResult a = train_toy(method(MethodKind::kDisel), mm, cfg, RngStream(5));
  const TrainResult b = train_toy(method(MethodKind::kDisel), mm, cfg, RngStream(5));
  CHECK(a.log.to_jsonl() == b.log.to_jsonl());
  const TrainResult c = train_toy(method(MethodKind::kDisel), mm, cfg, RngStream(6));
  CHECK(a.log.to_jsonl() != c.log.to_jsonl());
}

TEST_CASE("divergence is reported with the last good log") {
  const MixtureModel mm = make_toy_instance(ToyInstance{});
  TrainConfig cfg = short_toy_config();
  cfg.lr = 50.0;
  cfg.schedule = ScheduleKind::kConstant;
  try {
    train_toy(method(MethodKind::kFullFt), mm, cfg, RngStream(7));
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.step() < cfg.steps);
    CHECK_FALSE(e.log().empty());
    CHECK(e.log().records().front().step == 0);
  }
}

TEST_CASE("mlp accuracy and cross entropy match direct evaluation") {
  const RetentionTasks tasks = small_tasks(1);
  const Network net = make_mlp(8, 4, MlpSpec{}, RngStream(2));
  REQUIRE(net.layers.size() == 3);
  CHECK(net.layers[0].base.w0.rows() == 64);
  CHECK(net.layers[2].base.w0.rows() == 4);
  const ClassificationSet& data = tasks.pretrain.test;
  int correct = 0;
  double ce = 0.0;
  for (Eigen::Index i = 0; i < data.x.rows(); ++i) {
    const Vector logits = network_forward(net, data.x.row(i).transpose());
    Eigen::Index arg = 0;
    logits.maxCoeff(&arg);
    const int y = data.labels[static_cast<std::size_t>(i)];
    correct += arg == y;
    double z = 0.0;
    for (Eigen::Index k = 0; k < logits.size(); ++k) z += std::exp(logits[k]);
    ce += std::log(z) - logits[y];
  }
  CHECK(accuracy(net, data) == doctest::Approx(correct / static_cast<double>(data.x.rows())));
  CHECK(cross_entropy(net, data) == doctest::Approx(ce / static_cast<double>(data.x.rows())).epsilon(1e-12));
}

TEST_CASE("attached adapters start at the pre-trained function and keep it frozen") {
  const RetentionTasks tasks = small_tasks(3);
  Network net = make_mlp(8, 4, MlpSpec{}, RngStream(4));
  for (auto k : {MethodKind::kFullFt, MethodKind::kLora, MethodKind::kDisel}) {
    Method m = method(k, 4);
    m.alpha = 8.0;
    const Network adapted = attach_adapters(net, m, RngStream(5));
    CHECK(frozen_hash(adapted) == frozen_hash(net));
    if (k != MethodKind::kFullFt) CHECK(adapted.layers.back().kind() == AdapterKind::kNone);
    for (Eigen::Index i = 0; i < 100; ++i) {
      const Vector x = tasks.finetune.test.x.row(i).transpose();
      CHECK((network_forward(adapted, x).array() == network_forward(net, x).array()).all());
    }
  }
  CHECK(attach_adapters(net, method(MethodKind::kDisel), RngStream(5)).gated_layers() ==
        std::vector<std::size_t>{0, 1});
}

TEST_CASE("pre-training learns the first task and adaptation logs every checkpoint") {
  const RetentionTasks tasks = small_tasks(6);
  Network net = make_mlp(8, 4, MlpSpec{}, RngStream(7));
  TrainConfig pre = default_retention_config().pretrain;
  pre.steps = 300;
  pre.monitor_samples = 200;
  pretrain_mlp(net, tasks.pretrain, pre, RngStream(8));
  CHECK(accuracy(net, tasks.pretrain.test) > 0.95);

  TrainConfig ad = default_retention_config().adapt;
  ad.steps = 200;
  ad.checkpoints = 4;
  ad.monitor_samples = 200;
  Method m = method(MethodKind::kDisel, 4);
  m.alpha = 8.0;
  const TrainResult r = adapt_mlp(net, m, tasks, ad, RngStream(9));
  REQUIRE(r.log.records().size() == 5);
  CHECK(r.log.records().front().retention_accuracy == doctest::Approx(accuracy(net, tasks.pretrain.test)));
  for (const auto& rec : r.log.records()) {
    CHECK(std::isfinite(rec.ft_accuracy));
    CHECK(std::isfinite(rec.gate_mean_ft));
  }
  CHECK(r.log.back().ft_accuracy > r.log.records().front().ft_accuracy);
  CHECK(frozen_hash(r.model) == frozen_hash(net));
}

TEST_CASE("default retention config") {
  const RetentionConfig cfg = default_retention_config();
  REQUIRE(cfg.methods.size() == 3);
  CHECK(cfg.methods[2].kind == MethodKind::kDisel);
  CHECK(cfg.adapt.optimizer == OptimizerKind::kAdamW);
  CHECK(cfg.adapt.warmup_ratio == 0.02);
  CHECK(cfg.adapt.weight_decay == 0.01);
  CHECK(cfg.adapt.max_grad_norm == 1.0);
}
