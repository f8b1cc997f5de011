#pragma once

// Synthetic data: the two-population regression instance used for the
// selective-adaptation toy experiment, and a pair of Gaussian-blob
// classification tasks for the desk-scale retention experiment.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "disel/mixture.hpp"

namespace disel {

struct ToyInstance {
  std::size_t d = 16;
  double mu = 3.0;
  double s2 = 0.25;
  std::size_t target_rank = 2;
  std::size_t lora_rank = 2;
  std::uint64_t seed = 0;
};

void validate(const ToyInstance& cfg);

/// mu_ft = +mu e1, mu_pt = -mu e1, sigma = diag(s2, 1, ..., 1),
/// M = U V with U (d x k), V (k x d) standard Gaussian (k = target_rank),
/// W0 with i.i.d. N(0, 1/d) entries.
MixtureModel make_toy_instance(const ToyInstance& cfg, const RngStream& rng);
/// Same, with the stream derived from cfg.seed.
MixtureModel make_toy_instance(const ToyInstance& cfg);

struct Batch {
  Matrix x;  // n x d
  Matrix y;  // n x d_y
  std::vector<Population> labels;

  [[nodiscard]] std::size_t size() const { return labels.size(); }
};

/// n rows from the symmetric mixture. Row i uses the sub-stream rng.derive(i),
/// so any subset of rows can be regenerated independently. Targets are
/// noiseless unless noise_std > 0.
Batch sample_batch(const MixtureModel& mm, std::size_t n, const RngStream& rng, double noise_std = 0.0);

/// n rows from a single population.
Batch sample_population(const MixtureModel& mm, Population p, std::size_t n, const RngStream& rng);

/// CSV with header "population,x0..x{d-1},y0..y{d_y-1}".
void write_batch_csv(const Batch& batch, const std::filesystem::path& path);
/// Reads the x* columns of a CSV with a header row (as written above).
Matrix read_inputs_csv(const std::filesystem::path& path);

struct ClassificationSet {
  Matrix x;  // n x d
  std::vector<int> labels;
};

struct ClassificationTask {
  std::vector<Vector> centers;  // one per class
  double blob_std = 1.0;
  ClassificationSet train;
  ClassificationSet test;

  [[nodiscard]] std::size_t n_classes() const { return centers.size(); }
};

struct RetentionTaskSpec {
  std::size_t d = 8;
  std::size_t n_classes = 4;
  /// Distance scale in units of blob_std; 0 makes both tasks share one input
  /// distribution.
  double separation = 6.0;
  double blob_std = 1.0;
  std::size_t n_train = 2000;
  std::size_t n_test = 2000;
};

struct RetentionTasks {
  ClassificationTask pretrain;
  ClassificationTask finetune;
};

/// Geometry (c = separation * blob_std, e_i the coordinate axes):
///   pretrain class k centered at c (-e_0 + e_{1+k})
///   finetune class k centered at c (+e_0 + e_{1+((k+1) mod C)})
/// The tasks occupy opposite half-spaces along e_0 and the finetune labels
/// are a cyclic relabeling of the pretrain directions, so an input-agnostic
/// update that fits the finetune task also relabels the pretrain task.
/// Requires d >= n_classes + 1, n_classes >= 2 and separation >= 0.
RetentionTasks make_retention_tasks(const RetentionTaskSpec& spec, const RngStream& rng);

}  // namespace disel
