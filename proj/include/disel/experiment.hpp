#pragma once

// Configuration-driven experiment runs. Each run writes into a fresh
// timestamped directory: the expanded config, a manifest (library version,
// seed, artifact hashes) and the experiment's artifacts.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "disel/datagen.hpp"
#include "disel/gradcheck.hpp"
#include "disel/trainer.hpp"

namespace disel {

std::string_view library_version();

enum class ExperimentKind { kToyFigure1, kGradcheck, kMlpRetention, kGatesReport };

std::string to_string(ExperimentKind kind);
ExperimentKind parse_experiment(std::string_view name);

struct ToyFigure1Config {
  ToyInstance instance;
  TrainConfig train;
  std::vector<Method> methods;
  std::size_t bayes_samples = 400000;
  /// Inputs per population used for the gate trace and exported as CSV.
  std::size_t gate_samples = 2000;
  std::size_t bins = 50;
};

struct MlpRetentionConfig {
  RetentionConfig run;
  /// Replicate i uses seed + i.
  std::size_t replicates = 3;
  std::size_t bins = 50;
};

struct GatesDomain {
  std::string name;
  std::filesystem::path csv;
};

struct GatesReportConfig {
  std::filesystem::path model;
  std::vector<GatesDomain> domains;
  std::size_t bins = 50;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kToyFigure1;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs";
  ToyFigure1Config toy;
  GradcheckConfig gradcheck;
  MlpRetentionConfig retention;
  GatesReportConfig gates;
};

ExperimentConfig default_config(ExperimentKind kind);

/// Overlays a JSON document on the defaults for `kind`. Unknown keys, type
/// mismatches and an "experiment" field naming another kind are
/// InvalidArgument. Relative paths are resolved against `base_dir`.
ExperimentConfig parse_config(ExperimentKind kind, std::string_view json_text,
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(ExperimentKind kind, const std::filesystem::path& path);

/// The expanded config for the run's kind, as pretty-printed JSON.
std::string config_json(const ExperimentConfig& cfg);

/// Replaces the method list (toy and retention runs). Hyperparameters of
/// methods already present are kept; new ones get the defaults.
void set_methods(ExperimentConfig& cfg, const std::vector<std::string>& names);

void validate(const ExperimentConfig& cfg);

struct Check {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool passed = false;
};

struct RunOutput {
  std::filesystem::path dir;
  std::vector<Check> checks;
  std::string summary;  // contents of results.json

  [[nodiscard]] bool passed() const;
};

/// Creates `<output_dir>/<kind>-<UTC timestamp>[-n]`, never reusing an
/// existing directory.
std::filesystem::path make_run_dir(const std::filesystem::path& output_dir, ExperimentKind kind);

/// Runs the experiment. Configuration problems raise InvalidArgument,
/// unreadable inputs IoError, and divergence TrainingDiverged after a
/// diverged.json diagnostic has been written to the run directory.
RunOutput run_experiment(const ExperimentConfig& cfg);

}  // namespace disel
