#include "disel/datagen.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "disel/errors.hpp"
#include "format.hpp"

namespace disel {

void validate(const ToyInstance& cfg) {
  if (cfg.d == 0) throw InvalidArgument("toy instance: d must be >= 1");
  if (!(cfg.s2 > 0.0) || !std::isfinite(cfg.s2)) throw InvalidArgument("toy instance: s2 must be > 0");
  if (!std::isfinite(cfg.mu)) throw InvalidArgument("toy instance: mu must be finite");
  if (cfg.target_rank == 0 || cfg.target_rank > cfg.d) {
    throw InvalidArgument("toy instance: target_rank must be in [1, d]");
  }
  if (cfg.lora_rank == 0) throw InvalidArgument("toy instance: lora_rank must be >= 1");
}

MixtureModel make_toy_instance(const ToyInstance& cfg, const RngStream& rng) {
  validate(cfg);
  const auto d = static_cast<Eigen::Index>(cfg.d);
  MixtureModel mm;
  mm.mu_ft = Vector::Zero(d);
  mm.mu_pt = Vector::Zero(d);
  mm.mu_ft[0] = cfg.mu;
  mm.mu_pt[0] = -cfg.mu;
  mm.sigma = Matrix::Identity(d, d);
  mm.sigma(0, 0) = cfg.s2;
  RngStream u_rng = rng.derive("task_u");
  RngStream v_rng = rng.derive("task_v");
  RngStream w_rng = rng.derive("frozen_w0");
  const Matrix u = gaussian_matrix(cfg.d, cfg.target_rank, 1.0, u_rng);
  const Matrix v = gaussian_matrix(cfg.target_rank, cfg.d, 1.0, v_rng);
  mm.m = u * v;
  mm.w0 = gaussian_matrix(cfg.d, cfg.d, 1.0 / std::sqrt(static_cast<double>(cfg.d)), w_rng);
  return mm;
}

MixtureModel make_toy_instance(const ToyInstance& cfg) {
  return make_toy_instance(cfg, RngStream(cfg.seed).derive("toy_instance"));
}

Batch sample_batch(const MixtureModel& mm, std::size_t n, const RngStream& rng, double noise_std) {
  if (n == 0) throw InvalidArgument("sample_batch: n must be >= 1");
  if (noise_std < 0.0) throw InvalidArgument("sample_batch: noise_std must be >= 0");
  const MixtureSampler sampler(mm);
  Batch b;
  b.x.resize(static_cast<Eigen::Index>(n), mm.mu_ft.size());
  b.y.resize(static_cast<Eigen::Index>(n), mm.m.rows());
  b.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    RngStream row = rng.derive(i);
    const Population p = sampler.draw_population(row);
    const Vector x = sampler.draw(p, row);
    Vector y = target(mm, p, x);
    if (noise_std > 0.0) {
      for (Eigen::Index j = 0; j < y.size(); ++j) y[j] += noise_std * row.normal();
    }
    const auto ii = static_cast<Eigen::Index>(i);
    b.x.row(ii) = x.transpose();
    b.y.row(ii) = y.transpose();
    b.labels[i] = p;
  }
  return b;
}

Batch sample_population(const MixtureModel& mm, Population p, std::size_t n, const RngStream& rng) {
  if (n == 0) throw InvalidArgument("sample_population: n must be >= 1");
  const MixtureSampler sampler(mm);
  Batch b;
  b.x.resize(static_cast<Eigen::Index>(n), mm.mu_ft.size());
  b.y.resize(static_cast<Eigen::Index>(n), mm.m.rows());
  b.labels.assign(n, p);
  for (std::size_t i = 0; i < n; ++i) {
    RngStream row = rng.derive(i);
    const Vector x = sampler.draw(p, row);
    const auto ii = static_cast<Eigen::Index>(i);
    b.x.row(ii) = x.transpose();
    b.y.row(ii) = target(mm, p, x).transpose();
  }
  return b;
}

void write_batch_csv(const Batch& batch, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "population";
  for (Eigen::Index j = 0; j < batch.x.cols(); ++j) out << ",x" << j;
  for (Eigen::Index j = 0; j < batch.y.cols(); ++j) out << ",y" << j;
  out << '\n';
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    out << to_string(batch.labels[i]);
    for (Eigen::Index j = 0; j < batch.x.cols(); ++j) out << ',' << fmt_double(batch.x(ii, j));
    for (Eigen::Index j = 0; j < batch.y.cols(); ++j) out << ',' << fmt_double(batch.y(ii, j));
    out << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Matrix read_inputs_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("'" + path.string() + "' is empty");
  std::vector<std::size_t> x_cols;
  {
    std::stringstream ss(line);
    std::string name;
    std::size_t idx = 0;
    while (std::getline(ss, name, ',')) {
      if (!name.empty() && name[0] == 'x') x_cols.push_back(idx);
      ++idx;
    }
  }
  if (x_cols.empty()) throw IoError("'" + path.string() + "' has no x* columns");
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    std::vector<double> row;
    row.reserve(x_cols.size());
    for (std::size_t c : x_cols) {
      if (c >= fields.size()) throw IoError(path.string() + ":" + std::to_string(line_no) + ": missing column");
      try {
        std::size_t used = 0;
        row.push_back(std::stod(fields[c], &used));
        if (used != fields[c].size()) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw IoError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + fields[c] + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError("'" + path.string() + "' has no data rows");
  Matrix x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(x_cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < x_cols.size(); ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return x;
}

namespace {

ClassificationSet sample_blobs(const std::vector<Vector>& centers, double blob_std, std::size_t n,
                               const RngStream& rng) {
  const auto d = centers.front().size();
  ClassificationSet set;
  set.x.resize(static_cast<Eigen::Index>(n), d);
  set.labels.resize(n);
  const auto classes = static_cast<double>(centers.size());
  for (std::size_t i = 0; i < n; ++i) {
    RngStream row = rng.derive(i);
    const int label = std::min(static_cast<int>(row.uniform() * classes), static_cast<int>(centers.size()) - 1);
    set.labels[i] = label;
    for (Eigen::Index j = 0; j < d; ++j) {
      set.x(static_cast<Eigen::Index>(i), j) = centers[static_cast<std::size_t>(label)][j] + blob_std * row.normal();
    }
  }
  return set;
}

}  // namespace

RetentionTasks make_retention_tasks(const RetentionTaskSpec& spec, const RngStream& rng) {
  if (spec.n_classes < 2) throw InvalidArgument("retention tasks: n_classes must be >= 2");
  if (spec.d < spec.n_classes + 1) throw InvalidArgument("retention tasks: d must be >= n_classes + 1");
  // Zero is allowed: both tasks then share one input distribution.
  if (!(spec.separation >= 0.0) || !std::isfinite(spec.separation)) {
    throw InvalidArgument("retention tasks: separation must be >= 0");
  }
  if (!(spec.blob_std > 0.0)) throw InvalidArgument("retention tasks: blob_std must be > 0");
  if (spec.n_train == 0 || spec.n_test == 0) throw InvalidArgument("retention tasks: split sizes must be >= 1");

  const auto d = static_cast<Eigen::Index>(spec.d);
  const double c = spec.separation * spec.blob_std;
  const std::size_t k_classes = spec.n_classes;
  RetentionTasks out;
  for (std::size_t k = 0; k < k_classes; ++k) {
    Vector pre = Vector::Zero(d);
    pre[0] = -c;
    pre[static_cast<Eigen::Index>(1 + k)] = c;
    out.pretrain.centers.push_back(pre);

    Vector fin = Vector::Zero(d);
    fin[0] = c;
    fin[static_cast<Eigen::Index>(1 + (k + 1) % k_classes)] = c;
    out.finetune.centers.push_back(fin);
  }
  out.pretrain.blob_std = spec.blob_std;
  out.finetune.blob_std = spec.blob_std;
  out.pretrain.train = sample_blobs(out.pretrain.centers, spec.blob_std, spec.n_train, rng.derive("pretrain_train"));
  out.pretrain.test = sample_blobs(out.pretrain.centers, spec.blob_std, spec.n_test, rng.derive("pretrain_test"));
  out.finetune.train = sample_blobs(out.finetune.centers, spec.blob_std, spec.n_train, rng.derive("finetune_train"));
  out.finetune.test = sample_blobs(out.finetune.centers, spec.blob_std, spec.n_test, rng.derive("finetune_test"));
  return out;
}

}  // namespace disel
