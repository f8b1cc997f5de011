#include "disel/disel_c.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "disel/checkpoint.hpp"
#include "disel/errors.hpp"
#include "disel/experiment.hpp"
#include "disel/oracle.hpp"

struct disel_config {
  disel::ExperimentConfig cfg;
};

struct disel_run_result {
  disel::RunOutput out;
  std::string dir;
};

struct disel_layer {
  disel::AdaptedLayer layer;
};

namespace {

thread_local std::string t_last_error;

disel_status fail(disel_status s, const std::string& msg) {
  t_last_error = msg;
  return s;
}

// Maps library exceptions onto status codes.
template <typename F>
disel_status guarded(F&& f) {
  t_last_error.clear();
  try {
    f();
    return DISEL_OK;
  } catch (const disel::TrainingDiverged& e) {
    return fail(DISEL_ERR_NUMERIC, e.what());
  } catch (const disel::NumericError& e) {
    return fail(DISEL_ERR_NUMERIC, e.what());
  } catch (const disel::IoError& e) {
    return fail(DISEL_ERR_IO, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(DISEL_ERR_IO, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(DISEL_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::bad_alloc&) {
    return fail(DISEL_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(DISEL_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(DISEL_ERR_INTERNAL, "unknown error");
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw disel::InvalidArgument(what);
}

char* dup_string(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

disel::Matrix from_rows(const double* data, std::size_t rows, std::size_t cols) {
  disel::Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  std::memcpy(m.data(), data, rows * cols * sizeof(double));
  return m;
}

disel::Vector from_array(const double* data, std::size_t n) {
  disel::Vector v(static_cast<Eigen::Index>(n));
  std::memcpy(v.data(), data, n * sizeof(double));
  return v;
}

disel::Network as_network(const disel::AdaptedLayer& layer) {
  disel::Network net;
  net.layers.push_back(layer);
  return net;
}

}  // namespace

extern "C" {

const char* disel_version(void) { return DISEL_VERSION_STRING; }

const char* disel_last_error(void) { return t_last_error.c_str(); }

const char* disel_status_name(disel_status status) {
  switch (status) {
    case DISEL_OK:
      return "ok";
    case DISEL_ERR_INTERNAL:
      return "internal error";
    case DISEL_ERR_INVALID_ARGUMENT:
      return "invalid argument";
    case DISEL_ERR_NUMERIC:
      return "numeric failure";
    case DISEL_ERR_CHECK_FAILED:
      return "check failed";
    case DISEL_ERR_IO:
      return "i/o error";
  }
  return "unknown status";
}

void disel_string_free(char* s) { std::free(s); }

disel_status disel_config_create(const char* experiment, disel_config** out) {
  return guarded([&] {
    require(experiment && out, "disel_config_create: null argument");
    *out = new disel_config{disel::default_config(disel::parse_experiment(experiment))};
  });
}

disel_status disel_config_load(const char* experiment, const char* path, disel_config** out) {
  return guarded([&] {
    require(experiment && path && out, "disel_config_load: null argument");
    *out = new disel_config{disel::load_config(disel::parse_experiment(experiment), path)};
  });
}

disel_status disel_config_parse(const char* experiment, const char* json_text, disel_config** out) {
  return guarded([&] {
    require(experiment && json_text && out, "disel_config_parse: null argument");
    *out = new disel_config{disel::parse_config(disel::parse_experiment(experiment), json_text)};
  });
}

disel_status disel_config_set_seed(disel_config* cfg, uint64_t seed) {
  return guarded([&] {
    require(cfg, "disel_config_set_seed: null config");
    cfg->cfg.seed = seed;
  });
}

disel_status disel_config_set_output_dir(disel_config* cfg, const char* dir) {
  return guarded([&] {
    require(cfg && dir && *dir, "disel_config_set_output_dir: null config or empty directory");
    cfg->cfg.output_dir = dir;
  });
}

disel_status disel_config_set_methods(disel_config* cfg, const char* const* names, size_t count) {
  return guarded([&] {
    require(cfg && (names || count == 0), "disel_config_set_methods: null argument");
    std::vector<std::string> list;
    for (size_t i = 0; i < count; ++i) {
      require(names[i], "disel_config_set_methods: null method name");
      list.emplace_back(names[i]);
    }
    disel::set_methods(cfg->cfg, list);
  });
}

disel_status disel_config_set_gates_model(disel_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg && path && *path, "disel_config_set_gates_model: null config or empty path");
    require(cfg->cfg.kind == disel::ExperimentKind::kGatesReport, "a model path applies to gates-report only");
    cfg->cfg.gates.model = path;
  });
}

disel_status disel_config_add_gates_domain(disel_config* cfg, const char* name, const char* csv_path) {
  return guarded([&] {
    require(cfg && name && csv_path && *csv_path, "disel_config_add_gates_domain: null argument");
    require(cfg->cfg.kind == disel::ExperimentKind::kGatesReport, "domains apply to gates-report only");
    cfg->cfg.gates.domains.push_back({name, csv_path});
  });
}

disel_status disel_config_to_json(const disel_config* cfg, char** out) {
  return guarded([&] {
    require(cfg && out, "disel_config_to_json: null argument");
    *out = dup_string(disel::config_json(cfg->cfg));
  });
}

void disel_config_destroy(disel_config* cfg) { delete cfg; }

disel_status disel_run(const disel_config* cfg, disel_run_result** out) {
  return guarded([&] {
    require(cfg && out, "disel_run: null argument");
    *out = nullptr;
    disel::RunOutput r = disel::run_experiment(cfg->cfg);
    std::string dir = r.dir.string();
    *out = new disel_run_result{std::move(r), std::move(dir)};
  });
}

const char* disel_run_result_dir(const disel_run_result* res) { return res ? res->dir.c_str() : ""; }

int disel_run_result_passed(const disel_run_result* res) { return res && res->out.passed() ? 1 : 0; }

const char* disel_run_result_summary(const disel_run_result* res) { return res ? res->out.summary.c_str() : ""; }

size_t disel_run_result_check_count(const disel_run_result* res) { return res ? res->out.checks.size() : 0; }

disel_status disel_run_result_check(const disel_run_result* res, size_t index, const char** name, double* value,
                                    double* threshold, int* passed) {
  return guarded([&] {
    require(res, "disel_run_result_check: null result");
    require(index < res->out.checks.size(), "disel_run_result_check: index out of range");
    const disel::Check& c = res->out.checks[index];
    if (name) *name = c.name.c_str();
    if (value) *value = c.value;
    if (threshold) *threshold = c.threshold;
    if (passed) *passed = c.passed ? 1 : 0;
  });
}

void disel_run_result_destroy(disel_run_result* res) { delete res; }

disel_status disel_layer_create(const double* w0, const double* bias, size_t d_in, size_t d_out, disel_layer** out) {
  return guarded([&] {
    require(w0 && out, "disel_layer_create: null argument");
    require(d_in > 0 && d_out > 0, "disel_layer_create: dimensions must be >= 1");
    disel::FrozenLinear base{from_rows(w0, d_out, d_in), std::nullopt};
    if (bias) base.bias = from_array(bias, d_out);
    *out = new disel_layer{disel::AdaptedLayer{std::move(base), std::monostate{}}};
  });
}

disel_status disel_layer_attach_disel(disel_layer* layer, size_t rank, double alpha, double gate_bias_init,
                                      uint64_t seed) {
  return guarded([&] {
    require(layer, "disel_layer_attach_disel: null layer");
    disel::RngStream rng(seed);
    const auto& b = layer->layer.base;
    layer->layer.adapter = disel::init_disel(b.d_in(), b.d_out(), rank, alpha, gate_bias_init, rng);
  });
}

disel_status disel_layer_attach_lora(disel_layer* layer, size_t rank, double alpha, uint64_t seed) {
  return guarded([&] {
    require(layer, "disel_layer_attach_lora: null layer");
    disel::RngStream rng(seed);
    const auto& b = layer->layer.base;
    layer->layer.adapter = disel::init_lora(b.d_in(), b.d_out(), rank, alpha, rng);
  });
}

disel_status disel_layer_set_disel(disel_layer* layer, size_t rank, double alpha, const double* a, const double* b,
                                   const double* wg, const double* bg) {
  return guarded([&] {
    require(layer && a && b && wg && bg, "disel_layer_set_disel: null argument");
    require(rank > 0, "disel_layer_set_disel: rank must be >= 1");
    const auto& base = layer->layer.base;
    disel::DiselAdapter ad{from_rows(a, base.d_out(), rank), from_rows(b, rank, base.d_in()),
                           from_rows(wg, rank, base.d_in()), from_array(bg, rank), alpha};
    disel::AdaptedLayer next{base, std::move(ad)};
    disel::validate(next);
    layer->layer = std::move(next);
  });
}

disel_status disel_layer_dims(const disel_layer* layer, size_t* d_in, size_t* d_out, size_t* rank) {
  return guarded([&] {
    require(layer, "disel_layer_dims: null layer");
    if (d_in) *d_in = layer->layer.base.d_in();
    if (d_out) *d_out = layer->layer.base.d_out();
    if (rank) {
      *rank = 0;
      if (const auto* l = std::get_if<disel::LoraAdapter>(&layer->layer.adapter)) *rank = l->rank();
      if (const auto* d = std::get_if<disel::DiselAdapter>(&layer->layer.adapter)) *rank = d->rank();
    }
  });
}

disel_status disel_layer_forward(const disel_layer* layer, const double* x, double* y) {
  return guarded([&] {
    require(layer && x && y, "disel_layer_forward: null argument");
    const disel::Network net = as_network(layer->layer);
    const disel::Vector out = disel::network_forward(net, from_array(x, layer->layer.base.d_in()));
    std::memcpy(y, out.data(), static_cast<std::size_t>(out.size()) * sizeof(double));
  });
}

disel_status disel_layer_gate_values(const disel_layer* layer, const double* x, double* gates) {
  return guarded([&] {
    require(layer && x && gates, "disel_layer_gate_values: null argument");
    const auto* ad = std::get_if<disel::DiselAdapter>(&layer->layer.adapter);
    require(ad != nullptr, "disel_layer_gate_values: layer has no gated adapter");
    const disel::Vector g = disel::gate_values(*ad, from_array(x, layer->layer.base.d_in()));
    std::memcpy(gates, g.data(), static_cast<std::size_t>(g.size()) * sizeof(double));
  });
}

disel_status disel_layer_param_count(const disel_layer* layer, size_t* lora, size_t* gate) {
  return guarded([&] {
    require(layer, "disel_layer_param_count: null layer");
    disel::ParamCount pc;
    if (const auto* l = std::get_if<disel::LoraAdapter>(&layer->layer.adapter)) pc = disel::param_count(*l);
    if (const auto* d = std::get_if<disel::DiselAdapter>(&layer->layer.adapter)) pc = disel::param_count(*d);
    if (lora) *lora = pc.lora;
    if (gate) *gate = pc.gate;
  });
}

disel_status disel_layer_merge(const disel_layer* layer, double* out) {
  return guarded([&] {
    require(layer && out, "disel_layer_merge: null argument");
    const disel::Matrix w = disel::merged_weight(layer->layer);
    std::memcpy(out, w.data(), static_cast<std::size_t>(w.size()) * sizeof(double));
  });
}

disel_status disel_layer_save(const disel_layer* layer, const char* path) {
  return guarded([&] {
    require(layer && path, "disel_layer_save: null argument");
    disel::save_network(as_network(layer->layer), path);
  });
}

disel_status disel_layer_load(const char* path, disel_layer** out) {
  return guarded([&] {
    require(path && out, "disel_layer_load: null argument");
    disel::Network net = disel::load_network(path);
    if (net.layers.size() != 1) throw disel::InvalidArgument("disel_layer_load: checkpoint holds more than one layer");
    *out = new disel_layer{std::move(net.layers.front())};
  });
}

void disel_layer_destroy(disel_layer* layer) { delete layer; }

disel_status disel_bayes_gate(const double* mu_ft, const double* mu_pt, const double* sigma, size_t d, double* wg,
                              double* bg) {
  return guarded([&] {
    require(mu_ft && mu_pt && sigma && wg && bg && d > 0, "disel_bayes_gate: null argument or d = 0");
    disel::MixtureModel mm;
    mm.mu_ft = from_array(mu_ft, d);
    mm.mu_pt = from_array(mu_pt, d);
    mm.sigma = from_rows(sigma, d, d);
    mm.m = disel::Matrix::Zero(1, static_cast<Eigen::Index>(d));
    mm.w0 = disel::Matrix::Zero(1, static_cast<Eigen::Index>(d));
    disel::validate(mm);
    const disel::BayesGate g = disel::bayes_gate_params(mm);
    std::memcpy(wg, g.wg.data(), d * sizeof(double));
    *bg = g.bg;
  });
}

disel_status disel_fixed_floor(const double* m, size_t d_y, size_t d, const double* second_moment, double* out) {
  return guarded([&] {
    require(m && second_moment && out && d > 0 && d_y > 0, "disel_fixed_floor: null argument or zero dimension");
    *out = disel::fixed_floor_loss(from_rows(m, d_y, d), from_rows(second_moment, d, d));
  });
}

}  // extern "C"
