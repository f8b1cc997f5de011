// Acceptance gate. Prints one PASS/FAIL line per criterion and exits nonzero
// if any fails. Tolerances are fixed here and are not configurable.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <variant>

#include <unistd.h>
#include <vector>

#include "disel/adapters.hpp"
#include "disel/datagen.hpp"
#include "disel/diagnostics.hpp"
#include "disel/experiment.hpp"
#include "disel/gradcheck.hpp"
#include "disel/mixture.hpp"
#include "disel/network.hpp"
#include "disel/oracle.hpp"
#include "disel/trainer.hpp"

namespace fs = std::filesystem;
using namespace disel;

namespace {

// Pinned tolerances.
constexpr double kFloorRelTol = 0.10;
constexpr double kDiselFloorFraction = 0.5;
constexpr double kBayesStdErrs = 3.0;
constexpr double kToySeconds = 300.0;
constexpr double kGateMeanFt = 0.8;
constexpr double kGateMeanPt = 0.2;
constexpr double kGateMassFraction = 0.6;
constexpr double kGateHigh = 0.9;
constexpr double kGateLow = 0.1;
constexpr double kEqualMomentTol = 1e-12;
constexpr double kFullFtRelDistance = 0.05;
constexpr double kRealizeTol = 1e-10;
constexpr std::size_t kRealizeInputs = 1000;
constexpr double kGradStep = 1e-6;
constexpr double kGradTol = 1e-5;
constexpr std::size_t kGradInstances = 100;
constexpr double kGradSeconds = 60.0;
constexpr std::size_t kZeroStartInputs = 1000;
constexpr std::size_t kParamTriples = 20;
constexpr double kRetentionTol = 0.02;
constexpr std::uint64_t kRetentionSeeds[] = {0, 1, 2};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool passed = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    passed = passed && ok;
    if (!detail.empty()) detail += "; ";
    detail += (ok ? "" : "!") + what;
  }
};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// Loop form of 1/4 Tr(M S M^T), S = sigma + mu mu^T.
double floor_by_loops(const Matrix& m, const Matrix& sigma, const Vector& mu) {
  const auto d = sigma.rows();
  double tr = 0.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      for (Eigen::Index k = 0; k < d; ++k) tr += m(i, j) * (sigma(j, k) + mu(j) * mu(k)) * m(i, k);
  return 0.25 * tr;
}

std::size_t draw_size(RngStream& rng, std::size_t n) { return 1 + static_cast<std::size_t>(rng.next_u64() % n); }

bool same_bits(const Vector& a, const Vector& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

// ---------------------------------------------------------------------------

struct ToyRun {
  MixtureModel mm;
  std::vector<TrainResult> results;  // fullft, lora, disel
  McEstimate bayes;
  double seconds = 0.0;
};

ToyRun train_toy_reference() {
  const ExperimentConfig cfg = default_config(ExperimentKind::kToyFigure1);
  ToyRun run;
  ToyInstance inst = cfg.toy.instance;
  inst.seed = cfg.seed;
  const RngStream root(cfg.seed);
  const auto t0 = Clock::now();
  run.mm = make_toy_instance(inst);
  run.bayes = bayes_loss_mc(run.mm, cfg.toy.bayes_samples, root.derive("bayes_loss"));
  for (const Method& m : cfg.toy.methods) run.results.push_back(train_toy(m, run.mm, cfg.toy.train, root.derive("train")));
  run.seconds = seconds_since(t0);
  return run;
}

const TrainResult& result_for(const ToyRun& run, MethodKind kind) {
  const auto methods = default_config(ExperimentKind::kToyFigure1).toy.methods;
  for (std::size_t i = 0; i < methods.size(); ++i)
    if (methods[i].kind == kind) return run.results[i];
  throw std::logic_error("method missing from the default toy config");
}

Outcome toy_floors(const ToyRun& run) {
  Outcome o;
  const MixtureModel& mm = run.mm;
  const double floor_ft = floor_by_loops(mm.m, mm.sigma, mm.mu_ft);
  const double floor_pt = floor_by_loops(mm.m, mm.sigma, mm.mu_pt);
  o.require(std::abs(floor_ft - floor_pt) <= 1e-9 * floor_ft, "floor=" + num(floor_ft));
  o.require(mm.d() == 16 && mm.m.rows() == 16, "d=16");
  for (MethodKind k : {MethodKind::kFullFt, MethodKind::kLora}) {
    const CheckpointRecord& r = result_for(run, k).log.back();
    const double gap = std::max(std::abs(r.mse_ft / floor_ft - 1.0), std::abs(r.mse_pt / floor_ft - 1.0));
    o.require(gap <= kFloorRelTol, to_string(k) + " max rel gap=" + num(gap));
  }
  const CheckpointRecord& d = result_for(run, MethodKind::kDisel).log.back();
  const double worst = std::max(d.mse_ft, d.mse_pt);
  o.require(worst < kDiselFloorFraction * floor_ft, "disel max mse/floor=" + num(worst / floor_ft));
  const double mixture = 0.5 * (d.mse_ft + d.mse_pt);
  const double lower = run.bayes.estimate - kBayesStdErrs * run.bayes.std_error;
  o.require(mixture >= lower, "disel mixture mse=" + num(mixture) + " bayes=" + num(run.bayes.estimate) + "+-" +
                                  num(run.bayes.std_error));
  o.require(run.seconds < kToySeconds, "train time=" + num(run.seconds) + "s");
  return o;
}

Outcome toy_gates(const ToyRun& run) {
  Outcome o;
  const Network& model = result_for(run, MethodKind::kDisel).model;
  const RngStream rng(9001);
  const Batch ft = sample_population(run.mm, Population::kFt, 2000, rng.derive("ft"));
  const Batch pt = sample_population(run.mm, Population::kPt, 2000, rng.derive("pt"));
  const auto& adapter = std::get<DiselAdapter>(model.layers[0].adapter);
  auto stats = [&](const Matrix& x, double& mean, double& above, double& below) {
    std::size_t n = 0, hi = 0, lo = 0;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Vector g = gate_values(adapter, x.row(i).transpose());
      for (double v : g) {
        sum += v;
        ++n;
        hi += v > kGateHigh;
        lo += v < kGateLow;
      }
    }
    mean = sum / static_cast<double>(n);
    above = static_cast<double>(hi) / static_cast<double>(n);
    below = static_cast<double>(lo) / static_cast<double>(n);
  };
  double mft, aft, bft, mpt, apt, bpt;
  stats(ft.x, mft, aft, bft);
  stats(pt.x, mpt, apt, bpt);
  o.require(mft > kGateMeanFt, "ft mean=" + num(mft));
  o.require(mpt < kGateMeanPt, "pt mean=" + num(mpt));
  o.require(aft >= kGateMassFraction, "ft above 0.9=" + num(aft));
  o.require(bpt >= kGateMassFraction, "pt below 0.1=" + num(bpt));
  return o;
}

Outcome closed_forms(const ToyRun& run) {
  Outcome o;
  RngStream rng(31);
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    const auto d = static_cast<Eigen::Index>(2 + t);
    Matrix m(d + 1, d), g(d, d);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
    const Matrix s = g * g.transpose() + Matrix::Identity(d, d);
    worst = std::max(worst, (fixed_optimum(m, s, s) - 0.5 * m).cwiseAbs().maxCoeff());
  }
  o.require(worst <= kEqualMomentTol, "equal-moment max err=" + num(worst));

  const MixtureModel& mm = run.mm;
  const Matrix opt = fixed_optimum(mm.m, second_moment(mm, Population::kFt), second_moment(mm, Population::kPt));
  const Matrix& delta = std::get<DeltaAdapter>(result_for(run, MethodKind::kFullFt).model.layers[0].adapter).delta;
  const double dist = (delta - opt).norm() / opt.norm();
  o.require(dist <= kFullFtRelDistance, "trained fullft rel distance=" + num(dist));
  return o;
}

Outcome bayes_realization(const ToyRun& run) {
  Outcome o;
  const MixtureModel& mm = run.mm;
  const BayesGate gate = bayes_gate_params(mm);
  const DiselAdapter adapter = realize_bayes_as_disel(mm, gate, 2);
  const FrozenLinear zero{Matrix::Zero(static_cast<Eigen::Index>(mm.d_y()), static_cast<Eigen::Index>(mm.d())),
                          std::nullopt};
  const MixtureSampler sampler(mm);
  RngStream rng(47);
  double worst = 0.0;
  for (std::size_t i = 0; i < kRealizeInputs; ++i) {
    const Vector x = sampler.draw(sampler.draw_population(rng), rng);
    const Vector got = disel_forward(zero, adapter, x).y;
    worst = std::max(worst, (got - bayes_predict(x, mm, gate)).cwiseAbs().maxCoeff());
  }
  o.require(worst <= kRealizeTol, "max abs err=" + num(worst) + " over " + std::to_string(kRealizeInputs));
  return o;
}

Outcome gradients() {
  Outcome o;
  GradcheckConfig cfg;
  cfg.instances = kGradInstances;
  cfg.step = kGradStep;
  cfg.tolerance = kGradTol;
  const auto t0 = Clock::now();
  const GradcheckReport r = run_gradcheck(cfg, RngStream(0));
  const double secs = seconds_since(t0);
  double worst = 0.0;
  bool enough = true;
  for (const auto& b : r.blocks) {
    worst = std::max(worst, b.max_rel_error);
    enough = enough && b.instances >= kGradInstances;
  }
  o.require(r.blocks.size() == 8 && enough, std::to_string(r.blocks.size()) + " blocks x >=100 instances");
  o.require(worst <= kGradTol, "max rel err=" + num(worst));
  o.require(secs < kGradSeconds, "time=" + num(secs) + "s");
  return o;
}

Outcome zero_start() {
  Outcome o;
  std::size_t compared = 0;
  bool identical = true;

  const MixtureModel mm = make_toy_instance(ToyInstance{});
  const Network frozen = make_toy_model(Method{MethodKind::kFrozen}, mm, RngStream(1));
  const MixtureSampler sampler(mm);
  for (MethodKind k : {MethodKind::kFullFt, MethodKind::kLora, MethodKind::kDisel}) {
    Method m;
    m.kind = k;
    const Network fresh = make_toy_model(m, mm, RngStream(2));
    RngStream rng(3);
    for (std::size_t i = 0; i < kZeroStartInputs; ++i) {
      const Vector x = sampler.draw(sampler.draw_population(rng), rng);
      identical = identical && same_bits(network_forward(frozen, x), network_forward(fresh, x));
      ++compared;
    }
  }

  RetentionConfig rc = default_retention_config();
  const RetentionTasks tasks = make_retention_tasks(rc.tasks, RngStream(4));
  Network pretrained = make_mlp(rc.tasks.d, rc.tasks.n_classes, rc.mlp, RngStream(5));
  rc.pretrain.steps = 200;
  pretrain_mlp(pretrained, tasks.pretrain, rc.pretrain, RngStream(6));
  for (const Method& m : rc.methods) {
    const Network fresh = attach_adapters(pretrained, m, RngStream(7));
    RngStream rng(8);
    for (std::size_t i = 0; i < kZeroStartInputs; ++i) {
      Vector x(static_cast<Eigen::Index>(rc.tasks.d));
      for (double& v : x) v = 4.0 * rng.normal();
      identical = identical && same_bits(network_forward(pretrained, x), network_forward(fresh, x));
      ++compared;
    }
  }
  o.require(identical, std::to_string(compared) + " outputs bit-identical");
  return o;
}

Outcome parameter_counts() {
  Outcome o;
  RngStream rng(12);
  std::size_t matched = 0;
  for (std::size_t t = 0; t < kParamTriples; ++t) {
    const std::size_t dx = draw_size(rng, 64);
    const std::size_t dy = draw_size(rng, 64);
    const std::size_t r = draw_size(rng, std::min(dx, dy));
    const std::size_t expect = r * dy + 2 * r * dx + r;
    RngStream init = rng.derive("init", t);
    const DiselAdapter a = init_disel(dx, dy, r, 1.0, -3.0, init);
    const std::size_t stored = static_cast<std::size_t>(a.a.size() + a.b.size() + a.wg.size() + a.bg.size());
    matched += param_count(dx, dy, r, true).total() == expect && param_count(a).total() == expect && stored == expect;
  }
  o.require(matched == kParamTriples, std::to_string(matched) + "/" + std::to_string(kParamTriples) + " triples");
  return o;
}

Outcome retention() {
  Outcome o;
  const RetentionConfig cfg = default_retention_config();
  for (std::uint64_t seed : kRetentionSeeds) {
    const RetentionRun run = retention_experiment(cfg, RngStream(seed));
    const TrainResult* lora = nullptr;
    const TrainResult* dis = nullptr;
    for (std::size_t i = 0; i < run.methods.size(); ++i) {
      if (run.methods[i].kind == MethodKind::kLora) lora = &run.results[i];
      if (run.methods[i].kind == MethodKind::kDisel) dis = &run.results[i];
    }
    if (!lora || !dis) throw std::logic_error("retention config lacks lora or disel");
    const double gap = std::abs(dis->log.back().ft_accuracy - lora->log.back().ft_accuracy);
    const double drop_d = run.pretrain_accuracy - dis->log.back().retention_accuracy;
    const double drop_l = run.pretrain_accuracy - lora->log.back().retention_accuracy;
    double dev = 0.0;
    for (const auto& r : dis->log.records()) dev = std::max(dev, std::abs(r.retention_accuracy - run.pretrain_accuracy));
    const std::string s = "seed " + std::to_string(seed) + ": ";
    o.require(gap <= kRetentionTol, s + "ft gap=" + num(gap));
    o.require(drop_d < drop_l, s + "drop disel=" + num(drop_d) + " lora=" + num(drop_l));
    o.require(dev <= kRetentionTol, s + "max dev=" + num(dev));
  }
  return o;
}

std::map<std::string, std::string> artifacts(const fs::path& dir) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    m[fs::relative(e.path(), dir).string()] = s.str();
  }
  return m;
}

Outcome determinism(const fs::path& scratch) {
  Outcome o;
  std::vector<ExperimentConfig> configs;
  for (auto k : {ExperimentKind::kToyFigure1, ExperimentKind::kGradcheck, ExperimentKind::kMlpRetention}) {
    ExperimentConfig c = default_config(k);
    c.seed = 7;
    configs.push_back(c);
  }
  ExperimentConfig gates = default_config(ExperimentKind::kGatesReport);
  gates.gates.model = fs::path(DISEL_FIXTURE_DIR) / "gates" / "model.bin";
  gates.gates.domains = {{"ft", fs::path(DISEL_FIXTURE_DIR) / "gates" / "inputs_ft.csv"},
                         {"pt", fs::path(DISEL_FIXTURE_DIR) / "gates" / "inputs_pt.csv"}};
  configs.push_back(gates);
  for (ExperimentConfig& c : configs) {
    c.output_dir = scratch;
    const RunOutput a = run_experiment(c);
    const RunOutput b = run_experiment(c);
    const auto fa = artifacts(a.dir), fb = artifacts(b.dir);
    const bool logs = std::any_of(fa.begin(), fa.end(), [](const auto& kv) {
      return kv.first.ends_with(".csv") || kv.first.ends_with(".jsonl");
    });
    o.require(fa == fb && logs, to_string(c.kind) + " " + std::to_string(fa.size()) + " files");
  }
  return o;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const fs::path scratch = fs::temp_directory_path() / ("disel-acceptance-" + std::to_string(::getpid()));
  fs::create_directories(scratch);

  std::printf("training the toy reference models...\n");
  std::fflush(stdout);
  const ToyRun toy = train_toy_reference();

  const std::vector<Criterion> criteria{
      {1, "toy per-population errors against the fixed and Bayes floors", [&] { return toy_floors(toy); }},
      {2, "toy gates separate the two populations", [&] { return toy_gates(toy); }},
      {3, "fixed-correction optimum in closed form and by training", [&] { return closed_forms(toy); }},
      {4, "Bayes-optimal correction realized exactly by a gated adapter", [&] { return bayes_realization(toy); }},
      {5, "analytic gradients match central differences", gradients},
      {6, "fresh adapters reproduce the frozen model bit for bit", zero_start},
      {7, "parameter count r*d_y + 2*r*d_x + r", parameter_counts},
      {8, "MLP retention: gated adapter forgets less than LoRA", retention},
      {9, "repeated runs produce identical artifacts", [&] { return determinism(scratch); }},
  };

  int failed = 0;
  for (const Criterion& c : criteria) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.passed = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.passed;
    std::printf("%s [%d] %s (%.1fs): %s\n", o.passed ? "PASS" : "FAIL", c.id, c.name, seconds_since(t0),
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::error_code ec;
  fs::remove_all(scratch, ec);
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
