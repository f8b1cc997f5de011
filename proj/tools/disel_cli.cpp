// Experiment runner. Talks to the library only through the C interface.

#include <cstdint>
#include <cstdio>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "disel/disel_c.h"

namespace {

// Process exit codes. Library statuses map onto these one to one.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitCheckFailed = 4;

struct ConfigDeleter {
  void operator()(disel_config* c) const { disel_config_destroy(c); }
};
struct ResultDeleter {
  void operator()(disel_run_result* r) const { disel_run_result_destroy(r); }
};
using ConfigPtr = std::unique_ptr<disel_config, ConfigDeleter>;
using ResultPtr = std::unique_ptr<disel_run_result, ResultDeleter>;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> methods;
  std::string model;
  std::vector<std::string> domains;  // name=path
  bool print_config = false;
  bool quiet = false;
};

class Failure {
 public:
  explicit Failure(disel_status s) : status(s) {}
  disel_status status;
};

void check(disel_status s, const char* what) {
  if (s == DISEL_OK) return;
  std::fprintf(stderr, "disel: %s: %s: %s\n", what, disel_status_name(s), disel_last_error());
  throw Failure(s);
}

int run(const std::string& experiment, const Options& opt) {
  disel_config* raw = nullptr;
  if (opt.config.empty()) {
    check(disel_config_create(experiment.c_str(), &raw), "config");
  } else {
    check(disel_config_load(experiment.c_str(), opt.config.c_str(), &raw), "config");
  }
  ConfigPtr cfg(raw);

  if (opt.seed) check(disel_config_set_seed(cfg.get(), *opt.seed), "--seed");
  if (!opt.out.empty()) check(disel_config_set_output_dir(cfg.get(), opt.out.c_str()), "--out");
  if (!opt.methods.empty()) {
    std::vector<const char*> names;
    for (const auto& m : opt.methods) names.push_back(m.c_str());
    check(disel_config_set_methods(cfg.get(), names.data(), names.size()), "--method");
  }
  if (!opt.model.empty()) check(disel_config_set_gates_model(cfg.get(), opt.model.c_str()), "--model");
  for (const auto& spec : opt.domains) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
      std::fprintf(stderr, "disel: --domain expects NAME=CSV, got '%s'\n", spec.c_str());
      return kExitUsage;
    }
    const std::string name = spec.substr(0, eq);
    const std::string path = spec.substr(eq + 1);
    check(disel_config_add_gates_domain(cfg.get(), name.c_str(), path.c_str()), "--domain");
  }

  if (opt.print_config) {
    char* json = nullptr;
    check(disel_config_to_json(cfg.get(), &json), "config");
    std::printf("%s\n", json);
    disel_string_free(json);
    return kExitOk;
  }

  disel_run_result* res_raw = nullptr;
  check(disel_run(cfg.get(), &res_raw), experiment.c_str());
  ResultPtr res(res_raw);

  const std::size_t n = disel_run_result_check_count(res.get());
  for (std::size_t i = 0; i < n; ++i) {
    const char* name = nullptr;
    double value = 0.0;
    double threshold = 0.0;
    int passed = 0;
    check(disel_run_result_check(res.get(), i, &name, &value, &threshold, &passed), "result");
    if (!opt.quiet || !passed) {
      std::printf("%s %-48s value=%.6g threshold=%.6g\n", passed ? "PASS" : "FAIL", name, value, threshold);
    }
  }
  std::printf("run directory: %s\n", disel_run_result_dir(res.get()));
  return disel_run_result_passed(res.get()) ? kExitOk : kExitCheckFailed;
}

void add_common(CLI::App* sub, Options& opt, bool with_methods) {
  sub->add_option("--config", opt.config, "JSON config overlaying the defaults")->check(CLI::ExistingFile);
  sub->add_option("--seed", opt.seed, "Root seed");
  sub->add_option("--out", opt.out, "Parent directory for the run directory (default: runs)");
  if (with_methods) {
    sub->add_option("--method", opt.methods, "Method to train: frozen, fullft, lora, disel (repeatable)")
        ->take_all();
  }
  sub->add_flag("--print-config", opt.print_config, "Print the expanded config and exit");
  sub->add_flag("-q,--quiet", opt.quiet, "Only print failing checks");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gated low-rank adapter experiments"};
  app.set_version_flag("--version", std::string(disel_version()));
  app.require_subcommand(1);

  Options opt;
  auto* toy = app.add_subcommand("toy-figure1", "Train FullFT, LoRA and DISeL on the two-population toy problem");
  add_common(toy, opt, true);
  auto* gc = app.add_subcommand("gradcheck", "Compare analytic adapter gradients with finite differences");
  add_common(gc, opt, false);
  auto* mlp = app.add_subcommand("mlp-retention", "Sequential two-task MLP retention experiment");
  add_common(mlp, opt, true);
  auto* gates = app.add_subcommand("gates-report", "Gate histograms and summaries for a saved model");
  add_common(gates, opt, false);
  gates->add_option("--model", opt.model, "Model checkpoint");
  gates->add_option("--domain", opt.domains, "Input domain as NAME=CSV (repeatable)")->take_all();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    for (auto* sub : app.get_subcommands()) return run(sub->get_name(), opt);
  } catch (const Failure& f) {
    return static_cast<int>(f.status);
  }
  return kExitUsage;
}
