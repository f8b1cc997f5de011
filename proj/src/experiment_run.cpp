#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "disel/checkpoint.hpp"
#include "disel/diagnostics.hpp"
#include "disel/errors.hpp"
#include "disel/experiment.hpp"
#include "disel/oracle.hpp"
#include "format.hpp"
#include "json.hpp"

namespace disel {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

// Writes artifacts into the run directory and remembers them for the manifest.
class Artifacts {
 public:
  explicit Artifacts(fs::path dir) : dir_(std::move(dir)) {}

  [[nodiscard]] const fs::path& dir() const { return dir_; }
  [[nodiscard]] fs::path path(const std::string& name) const { return dir_ / name; }

  void write(const std::string& name, const std::string& content) {
    const fs::path p = path(name);
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + p.string() + "' for writing");
    out << content;
    if (!out) throw IoError("failed writing '" + p.string() + "'");
    names_.push_back(name);
  }

  // For files produced by other writers.
  void add(const std::string& name) { names_.push_back(name); }

  [[nodiscard]] std::string manifest(const ExperimentConfig& cfg) const {
    ordered_json j;
    j["library"] = "disel";
    j["version"] = std::string(library_version());
    j["experiment"] = to_string(cfg.kind);
    j["seed"] = cfg.seed;
    ordered_json files = ordered_json::array();
    for (const std::string& name : names_) {
      std::ifstream in(path(name), std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      const std::string bytes = ss.str();
      char hex[17];
      std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(hash_string(bytes)));
      files.push_back(ordered_json{{"file", name}, {"bytes", bytes.size()}, {"fnv1a64", hex}});
    }
    j["artifacts"] = files;
    return j.dump(2) + "\n";
  }

 private:
  fs::path dir_;
  std::vector<std::string> names_;
};

Check at_most(std::string name, double value, double threshold) {
  return {std::move(name), value, threshold, value <= threshold};
}
Check below(std::string name, double value, double threshold) {
  return {std::move(name), value, threshold, value < threshold};
}
Check above(std::string name, double value, double threshold) {
  return {std::move(name), value, threshold, value > threshold};
}
Check at_least(std::string name, double value, double threshold) {
  return {std::move(name), value, threshold, value >= threshold};
}

ordered_json checks_json(const std::vector<Check>& checks) {
  ordered_json arr = ordered_json::array();
  for (const Check& c : checks) {
    arr.push_back(ordered_json{{"name", c.name}, {"value", c.value}, {"threshold", c.threshold}, {"passed", c.passed}});
  }
  return arr;
}

bool all_passed(const std::vector<Check>& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

void write_divergence(Artifacts& art, const TrainingDiverged& e) {
  ordered_json j;
  j["error"] = e.what();
  j["method"] = e.log().method();
  j["step"] = e.step();
  j["last_records"] = e.log().to_jsonl();
  art.write("diverged.json", j.dump(2) + "\n");
}

const TrainResult* find_result(const std::vector<Method>& methods, const std::vector<TrainResult>& results,
                               MethodKind kind) {
  for (std::size_t i = 0; i < methods.size(); ++i) {
    if (methods[i].kind == kind) return &results[i];
  }
  return nullptr;
}

RunOutput run_toy(const ExperimentConfig& cfg, Artifacts& art) {
  const ToyFigure1Config& tc = cfg.toy;
  ToyInstance inst = tc.instance;
  inst.seed = cfg.seed;
  const RngStream root(cfg.seed);
  const MixtureModel mm = make_toy_instance(inst);
  const double floor = fixed_floor_loss(mm);
  const McEstimate bayes = bayes_loss_mc(mm, tc.bayes_samples, root.derive("bayes_loss"));

  std::vector<TrainResult> results;
  try {
    for (const Method& m : tc.methods) results.push_back(train_toy(m, mm, tc.train, root.derive("train")));
  } catch (const TrainingDiverged& e) {
    write_divergence(art, e);
    throw;
  }

  std::vector<MetricLog> logs;
  ordered_json methods = ordered_json::array();
  std::ostringstream fig;
  fig << "series,mse_ft,mse_ft_se,mse_pt,mse_pt_se\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const MetricLog& log = results[i].log;
    art.write("metrics_" + tc.methods[i].name() + ".jsonl", log.to_jsonl());
    logs.push_back(log);
    const CheckpointRecord& r = log.back();
    fig << tc.methods[i].name() << ',' << fmt_double(r.mse_ft) << ',' << fmt_double(r.mse_ft_se) << ','
        << fmt_double(r.mse_pt) << ',' << fmt_double(r.mse_pt_se) << '\n';
    ordered_json mj{{"name", tc.methods[i].name()},
                    {"mse_ft", r.mse_ft},
                    {"mse_ft_se", r.mse_ft_se},
                    {"mse_pt", r.mse_pt},
                    {"mse_pt_se", r.mse_pt_se},
                    {"mixture_mse", 0.5 * (r.mse_ft + r.mse_pt)}};
    if (std::isfinite(r.gate_mean_ft)) {
      mj["gate_mean_ft"] = r.gate_mean_ft;
      mj["gate_mean_pt"] = r.gate_mean_pt;
    }
    methods.push_back(std::move(mj));
  }
  fig << "fixed_floor," << fmt_double(floor) << ",0," << fmt_double(floor) << ",0\n";
  fig << "bayes_floor," << fmt_double(bayes.estimate) << ',' << fmt_double(bayes.std_error) << ','
      << fmt_double(bayes.estimate) << ',' << fmt_double(bayes.std_error) << '\n';
  art.write("metrics_summary.csv", metrics_csv(logs));
  art.write("figure1a.csv", fig.str());

  std::vector<Check> checks;
  ordered_json results_json;
  results_json["experiment"] = to_string(cfg.kind);
  results_json["seed"] = cfg.seed;
  results_json["fixed_floor"] = floor;
  results_json["bayes_floor"] = ordered_json{{"estimate", bayes.estimate}, {"std_error", bayes.std_error}};
  results_json["methods"] = methods;

  for (MethodKind k : {MethodKind::kFullFt, MethodKind::kLora}) {
    if (const TrainResult* tr = find_result(tc.methods, results, k)) {
      const CheckpointRecord& r = tr->log.back();
      checks.push_back(at_most(to_string(k) + "_ft_rel_gap_to_floor", std::abs(r.mse_ft / floor - 1.0), 0.10));
      checks.push_back(at_most(to_string(k) + "_pt_rel_gap_to_floor", std::abs(r.mse_pt / floor - 1.0), 0.10));
    }
  }
  if (const TrainResult* tr = find_result(tc.methods, results, MethodKind::kFullFt)) {
    const Matrix opt = fixed_optimum(mm.m, second_moment(mm, Population::kFt), second_moment(mm, Population::kPt));
    const Matrix& delta = std::get<DeltaAdapter>(tr->model.layers[0].adapter).delta;
    const double dist = (delta - opt).norm() / opt.norm();
    results_json["fullft_delta_rel_distance"] = dist;
    checks.push_back(at_most("fullft_delta_rel_distance", dist, 0.05));
  }

  const TrainResult* dr = find_result(tc.methods, results, MethodKind::kDisel);
  if (dr) {
    const CheckpointRecord& r = dr->log.back();
    checks.push_back(below("disel_max_mse_over_floor", std::max(r.mse_ft, r.mse_pt) / floor, 0.5));
    const double bayes_lower = bayes.estimate - 3.0 * bayes.std_error;
    checks.push_back(at_least("disel_mixture_mse_minus_bayes_lower", 0.5 * (r.mse_ft + r.mse_pt) - bayes_lower, 0.0));
    for (MethodKind k : {MethodKind::kFullFt, MethodKind::kLora}) {
      if (const TrainResult* other = find_result(tc.methods, results, k)) {
        const CheckpointRecord& o = other->log.back();
        checks.push_back(below("disel_ft_over_" + to_string(k) + "_ft", r.mse_ft / o.mse_ft, 1.0));
        checks.push_back(below("disel_pt_over_" + to_string(k) + "_pt", r.mse_pt / o.mse_pt, 1.0));
      }
    }

    const RngStream gate_rng = root.derive("gate_inputs");
    const Batch ft = sample_population(mm, Population::kFt, tc.gate_samples, gate_rng.derive("ft"));
    const Batch pt = sample_population(mm, Population::kPt, tc.gate_samples, gate_rng.derive("pt"));
    write_batch_csv(ft, art.path("inputs_ft.csv"));
    art.add("inputs_ft.csv");
    write_batch_csv(pt, art.path("inputs_pt.csv"));
    art.add("inputs_pt.csv");
    save_network(dr->model, art.path("model_disel.bin"));
    art.add("model_disel.bin");

    const GateTrace trace = record_gates(dr->model, std::vector<DomainInputs>{{"ft", ft.x}, {"pt", pt.x}});
    art.write("gate_histograms.csv", histograms_csv(depth_band_histograms(trace, tc.bins)));
    const GateSummary summary = gate_summary(trace);
    art.write("gate_summary.csv", summary_csv(summary));
    const double frac_ft = fraction_above(trace, 0, 0.9);
    std::size_t n_pt = 0;
    std::size_t pt_below = 0;
    for (const GateRecord& g : trace.records) {
      if (g.domain != 1) continue;
      ++n_pt;
      if (g.value < 0.1) ++pt_below;
    }
    const double frac_pt_below = static_cast<double>(pt_below) / static_cast<double>(n_pt);
    results_json["gates"] = ordered_json{{"mean_ft", summary.domain_means[0]},
                                         {"mean_pt", summary.domain_means[1]},
                                         {"fraction_ft_above_0.9", frac_ft},
                                         {"fraction_pt_below_0.1", frac_pt_below}};
    checks.push_back(above("gate_mean_ft", summary.domain_means[0], 0.8));
    checks.push_back(below("gate_mean_pt", summary.domain_means[1], 0.2));
    checks.push_back(at_least("gate_fraction_ft_above_0.9", frac_ft, 0.6));
    checks.push_back(at_least("gate_fraction_pt_below_0.1", frac_pt_below, 0.6));
  }

  results_json["checks"] = checks_json(checks);
  results_json["passed"] = all_passed(checks);
  RunOutput out{art.dir(), checks, results_json.dump(2) + "\n"};
  art.write("results.json", out.summary);
  return out;
}

RunOutput run_gradcheck_experiment(const ExperimentConfig& cfg, Artifacts& art) {
  const GradcheckReport report = run_gradcheck(cfg.gradcheck, RngStream(cfg.seed));
  art.write("gradcheck.csv", gradcheck_csv(report));
  std::vector<Check> checks;
  for (const BlockReport& b : report.blocks) {
    checks.push_back(at_most(b.layer_type + "_" + b.block + "_max_rel_error", b.max_rel_error, cfg.gradcheck.tolerance));
  }
  ordered_json j;
  j["experiment"] = to_string(cfg.kind);
  j["seed"] = cfg.seed;
  j["instances_per_layer_type"] = cfg.gradcheck.instances;
  j["checks"] = checks_json(checks);
  j["passed"] = report.passed();
  RunOutput out{art.dir(), checks, j.dump(2) + "\n"};
  art.write("results.json", out.summary);
  return out;
}

RunOutput run_retention(const ExperimentConfig& cfg, Artifacts& art) {
  const MlpRetentionConfig& mc = cfg.retention;
  std::vector<Check> checks;
  ordered_json replicates = ordered_json::array();
  std::ostringstream summary;
  summary << "seed,method,pretrain_accuracy,final_ft_accuracy,final_retention,retention_drop,"
             "max_retention_deviation\n";

  for (std::size_t rep = 0; rep < mc.replicates; ++rep) {
    const std::uint64_t seed = cfg.seed + rep;
    const std::string sub = "seed_" + std::to_string(seed) + "/";
    RetentionRun run;
    try {
      run = retention_experiment(mc.run, RngStream(seed));
    } catch (const TrainingDiverged& e) {
      write_divergence(art, e);
      throw;
    }
    std::vector<MetricLog> logs;
    ordered_json methods = ordered_json::array();
    for (std::size_t i = 0; i < run.results.size(); ++i) {
      const MetricLog& log = run.results[i].log;
      art.write(sub + "metrics_" + run.methods[i].name() + ".jsonl", log.to_jsonl());
      logs.push_back(log);
      double max_dev = 0.0;
      for (const auto& r : log.records()) max_dev = std::max(max_dev, std::abs(r.retention_accuracy - run.pretrain_accuracy));
      const CheckpointRecord& last = log.back();
      const double drop = run.pretrain_accuracy - last.retention_accuracy;
      summary << seed << ',' << run.methods[i].name() << ',' << fmt_double(run.pretrain_accuracy) << ','
              << fmt_double(last.ft_accuracy) << ',' << fmt_double(last.retention_accuracy) << ','
              << fmt_double(drop) << ',' << fmt_double(max_dev) << '\n';
      ordered_json mj{{"name", run.methods[i].name()},
                      {"final_ft_accuracy", last.ft_accuracy},
                      {"final_retention", last.retention_accuracy},
                      {"retention_drop", drop},
                      {"max_retention_deviation", max_dev}};
      if (std::isfinite(last.gate_mean_ft)) {
        mj["gate_mean_finetune"] = last.gate_mean_ft;
        mj["gate_mean_pretrain"] = last.gate_mean_pt;
      }
      methods.push_back(std::move(mj));
    }
    art.write(sub + "metrics_summary.csv", metrics_csv(logs));

    const std::string tag = "seed" + std::to_string(seed) + "_";
    const TrainResult* lora = find_result(run.methods, run.results, MethodKind::kLora);
    const TrainResult* dis = find_result(run.methods, run.results, MethodKind::kDisel);
    if (dis) {
      double max_dev = 0.0;
      for (const auto& r : dis->log.records()) {
        max_dev = std::max(max_dev, std::abs(r.retention_accuracy - run.pretrain_accuracy));
      }
      checks.push_back(at_most(tag + "disel_max_retention_deviation", max_dev, 0.02));
      const CheckpointRecord& last = dis->log.back();
      checks.push_back(above(tag + "disel_gate_finetune_minus_pretrain", last.gate_mean_ft - last.gate_mean_pt, 0.0));

      const RetentionTasks tasks = make_retention_tasks(mc.run.tasks, RngStream(seed).derive("tasks"));
      const GateTrace trace =
          record_gates(dis->model, std::vector<DomainInputs>{{"finetune", tasks.finetune.test.x}, {"pretrain", tasks.pretrain.test.x}});
      art.write(sub + "gate_histograms.csv", histograms_csv(depth_band_histograms(trace, mc.bins)));
      art.write(sub + "gate_summary.csv", summary_csv(gate_summary(trace)));
      save_network(dis->model, art.path(sub + "model_disel.bin"));
      art.add(sub + "model_disel.bin");
    }
    if (dis && lora) {
      const CheckpointRecord& d = dis->log.back();
      const CheckpointRecord& l = lora->log.back();
      checks.push_back(at_most(tag + "ft_accuracy_gap_disel_lora", std::abs(d.ft_accuracy - l.ft_accuracy), 0.02));
      const double drop_d = run.pretrain_accuracy - d.retention_accuracy;
      const double drop_l = run.pretrain_accuracy - l.retention_accuracy;
      checks.push_back(below(tag + "disel_drop_minus_lora_drop", drop_d - drop_l, 0.0));
    }
    replicates.push_back(ordered_json{{"seed", seed}, {"pretrain_accuracy", run.pretrain_accuracy}, {"methods", methods}});
  }
  art.write("retention_summary.csv", summary.str());

  ordered_json j;
  j["experiment"] = to_string(cfg.kind);
  j["seed"] = cfg.seed;
  j["replicates"] = replicates;
  j["checks"] = checks_json(checks);
  j["passed"] = all_passed(checks);
  RunOutput out{art.dir(), checks, j.dump(2) + "\n"};
  art.write("results.json", out.summary);
  return out;
}

struct GatesInputs {
  Network model;
  std::vector<DomainInputs> domains;
  GateTrace trace;
};

// Reads and evaluates everything before the run directory is created, so bad
// inputs leave no half-written run behind.
GatesInputs load_gates_inputs(const GatesReportConfig& gc) {
  GatesInputs in;
  if (!fs::exists(gc.model)) throw IoError("model checkpoint '" + gc.model.string() + "' not found");
  in.model = load_network(gc.model);
  for (const auto& d : gc.domains) in.domains.push_back({d.name, read_inputs_csv(d.csv)});
  in.trace = record_gates(in.model, in.domains);
  return in;
}

RunOutput run_gates(const ExperimentConfig& cfg, const GatesInputs& in, Artifacts& art) {
  const GateTrace& trace = in.trace;
  art.write("gate_histograms.csv", histograms_csv(depth_band_histograms(trace, cfg.gates.bins)));
  const GateSummary summary = gate_summary(trace);
  art.write("gate_summary.csv", summary_csv(summary));
  ordered_json j;
  j["experiment"] = to_string(cfg.kind);
  j["seed"] = cfg.seed;
  j["gated_layers"] = trace.layers;
  ordered_json domains = ordered_json::array();
  for (std::size_t d = 0; d < trace.domains.size(); ++d) {
    ordered_json dj{{"name", trace.domains[d]}, {"samples", in.domains[d].x.rows()}};
    if (std::isfinite(summary.domain_means[d])) dj["mean_gate"] = summary.domain_means[d];
    domains.push_back(std::move(dj));
  }
  j["domains"] = domains;
  j["passed"] = true;
  RunOutput out{art.dir(), {}, j.dump(2) + "\n"};
  art.write("results.json", out.summary);
  return out;
}

}  // namespace

bool RunOutput::passed() const { return all_passed(checks); }

fs::path make_run_dir(const fs::path& output_dir, ExperimentKind kind) {
  std::error_code ec;
  fs::create_directories(output_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + output_dir.string() + "': " + ec.message());
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &utc);
  const std::string base = to_string(kind) + "-" + stamp;
  for (int n = 1; n < 10000; ++n) {
    const fs::path dir = output_dir / (n == 1 ? base : base + "-" + std::to_string(n));
    if (fs::create_directory(dir, ec)) return dir;
    if (ec) throw IoError("cannot create run directory '" + dir.string() + "': " + ec.message());
  }
  throw IoError("too many runs with the same timestamp in '" + output_dir.string() + "'");
}

RunOutput run_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  GatesInputs gates;
  if (cfg.kind == ExperimentKind::kGatesReport) gates = load_gates_inputs(cfg.gates);

  Artifacts art(make_run_dir(cfg.output_dir, cfg.kind));
  art.write("config.json", config_json(cfg));
  RunOutput out;
  switch (cfg.kind) {
    case ExperimentKind::kToyFigure1:
      out = run_toy(cfg, art);
      break;
    case ExperimentKind::kGradcheck:
      out = run_gradcheck_experiment(cfg, art);
      break;
    case ExperimentKind::kMlpRetention:
      out = run_retention(cfg, art);
      break;
    case ExperimentKind::kGatesReport:
      out = run_gates(cfg, gates, art);
      break;
  }
  art.write("manifest.json", art.manifest(cfg));
  return out;
}

}  // namespace disel
