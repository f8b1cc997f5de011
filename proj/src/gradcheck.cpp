#include "disel/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "disel/errors.hpp"
#include "format.hpp"

namespace disel {

namespace {

struct Instance {
  FrozenLinear base;
  Matrix a, b, wg;
  Vector bg;
  double alpha = 1.0;
  Vector x;
  Vector cot;
};

std::size_t draw_dim(RngStream& rng, std::size_t max_dim) {
  return 1 + static_cast<std::size_t>(rng.next_u64() % max_dim);
}

Instance draw_instance(const GradcheckConfig& cfg, RngStream rng) {
  const std::size_t d_in = draw_dim(rng, cfg.max_dim);
  const std::size_t d_out = draw_dim(rng, cfg.max_dim);
  const std::size_t r = draw_dim(rng, cfg.max_dim);
  const double in_scale = 1.0 / std::sqrt(static_cast<double>(d_in));
  Instance in;
  in.base.w0 = gaussian_matrix(d_out, d_in, in_scale, rng);
  if (rng.uniform() < 0.5) in.base.bias = gaussian_vector(d_out, 1.0, rng);
  in.a = gaussian_matrix(d_out, r, 1.0, rng);
  in.b = gaussian_matrix(r, d_in, in_scale, rng);
  in.wg = gaussian_matrix(r, d_in, 2.0 * in_scale, rng);
  in.bg = gaussian_vector(r, 1.0, rng);
  in.alpha = rng.uniform(0.5, 4.0);
  in.x = gaussian_vector(d_in, 1.0, rng);
  in.cot = gaussian_vector(d_out, 1.0, rng);
  return in;
}

struct Block {
  const char* name;
  Matrix* value;       // perturbed in place
  const Matrix* grad;  // analytic, same shape
};

class Tracker {
 public:
  Tracker(const char* layer_type, std::vector<const char*> blocks) {
    for (const char* b : blocks) reports_.push_back(BlockReport{layer_type, b});
  }

  void add(std::size_t block, double analytic, double numeric, double floor) {
    const double err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
    BlockReport& r = reports_[block];
    r.max_rel_error = std::max(r.max_rel_error, std::isnan(err) ? HUGE_VAL : err);
    ++r.entries;
  }

  void finish_instance() {
    for (auto& r : reports_) ++r.instances;
  }

  std::vector<BlockReport> done(double tol) {
    for (auto& r : reports_) r.passed = r.max_rel_error <= tol && r.entries > 0;
    return reports_;
  }

 private:
  std::vector<BlockReport> reports_;
};

// Compares analytic gradients against central differences of f for every
// entry of every block; f reads the (perturbed) block values.
template <typename F>
void compare(Tracker& t, std::vector<Block> blocks, const F& f, const GradcheckConfig& cfg) {
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    Matrix& v = *blocks[bi].value;
    const Matrix& g = *blocks[bi].grad;
    if (g.rows() != v.rows() || g.cols() != v.cols()) {
      throw NumericError(std::string("gradcheck: analytic ") + blocks[bi].name + " has the wrong shape");
    }
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      double& p = v.data()[i];
      const double saved = p;
      p = saved + cfg.step;
      const double up = f();
      p = saved - cfg.step;
      const double down = f();
      p = saved;
      t.add(bi, g.data()[i], (up - down) / (2.0 * cfg.step), cfg.abs_floor);
    }
  }
  t.finish_instance();
}

Matrix column(const Vector& v) { return Matrix(v); }

}  // namespace

void validate(const GradcheckConfig& cfg) {
  if (cfg.instances == 0) throw InvalidArgument("gradcheck: instances must be >= 1");
  if (cfg.max_dim == 0) throw InvalidArgument("gradcheck: max_dim must be >= 1");
  if (!(cfg.step > 0.0) || !(cfg.tolerance > 0.0) || !(cfg.abs_floor > 0.0)) {
    throw InvalidArgument("gradcheck: step, tolerance and abs_floor must be > 0");
  }
}

bool GradcheckReport::passed() const {
  return !blocks.empty() && std::all_of(blocks.begin(), blocks.end(), [](const BlockReport& b) { return b.passed; });
}

GradcheckReport run_gradcheck(const GradcheckConfig& cfg, const RngStream& rng, const DiselBackwardFn& disel_bwd,
                              const LoraBackwardFn& lora_bwd) {
  validate(cfg);
  GradcheckReport report;

  Tracker dt("disel", {"dA", "dB", "dWg", "dbg", "dx"});
  const RngStream disel_rng = rng.derive("gradcheck_disel");
  for (std::size_t k = 0; k < cfg.instances; ++k) {
    Instance in = draw_instance(cfg, disel_rng.derive(k));
    DiselAdapter ad{in.a, in.b, in.wg, in.bg, in.alpha};
    const ForwardResult fr = disel_forward(in.base, ad, in.x);
    const GradSet gs = disel_bwd(in.base, ad, fr.cache, in.cot);
    Matrix bg = column(ad.bg);
    Matrix x = column(in.x);
    const Matrix d_bg = column(gs.d_bg);
    const Matrix dx = column(gs.dx);
    auto f = [&] {
      ad.bg = bg;
      return in.cot.dot(disel_forward(in.base, ad, Vector(x)).y);
    };
    compare(dt, {{"dA", &ad.a, &gs.d_a}, {"dB", &ad.b, &gs.d_b}, {"dWg", &ad.wg, &gs.d_wg}, {"dbg", &bg, &d_bg},
                 {"dx", &x, &dx}},
            f, cfg);
  }

  Tracker lt("lora", {"dA", "dB", "dx"});
  const RngStream lora_rng = rng.derive("gradcheck_lora");
  for (std::size_t k = 0; k < cfg.instances; ++k) {
    Instance in = draw_instance(cfg, lora_rng.derive(k));
    LoraAdapter ad{in.a, in.b, in.alpha};
    const ForwardResult fr = lora_forward(in.base, ad, in.x);
    const GradSet gs = lora_bwd(in.base, ad, fr.cache, in.cot);
    Matrix x = column(in.x);
    const Matrix dx = column(gs.dx);
    auto f = [&] { return in.cot.dot(lora_forward(in.base, ad, Vector(x)).y); };
    compare(lt, {{"dA", &ad.a, &gs.d_a}, {"dB", &ad.b, &gs.d_b}, {"dx", &x, &dx}}, f, cfg);
  }

  for (auto& b : dt.done(cfg.tolerance)) report.blocks.push_back(std::move(b));
  for (auto& b : lt.done(cfg.tolerance)) report.blocks.push_back(std::move(b));
  return report;
}

std::string gradcheck_csv(const GradcheckReport& report) {
  std::ostringstream out;
  out << "layer_type,block,instances,entries,max_rel_error,passed\n";
  for (const auto& b : report.blocks) {
    out << b.layer_type << ',' << b.block << ',' << b.instances << ',' << b.entries << ','
        << fmt_double(b.max_rel_error) << ',' << (b.passed ? "true" : "false") << '\n';
  }
  return out.str();
}

}  // namespace disel
