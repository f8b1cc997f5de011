#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "disel/errors.hpp"
#include "disel/experiment.hpp"
#include "json.hpp"

namespace disel {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Strict reader over one JSON object: every key must be consumed.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw InvalidArgument(where_ + ": expected an object");
  }

  const json* find(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void real(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(key, "a number");
      out = v->get<double>();
    }
  }

  void count(const char* key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (v->is_number_unsigned()) {
        out = v->get<std::size_t>();
      } else if (v->is_number_integer() && v->get<std::int64_t>() >= 0) {
        out = static_cast<std::size_t>(v->get<std::int64_t>());
      } else {
        fail(key, "a non-negative integer");
      }
    }
  }

  void text(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(key, "a string");
      out = v->get<std::string>();
    }
  }

  [[nodiscard]] std::string path(const char* key) const { return where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.contains(it.key())) throw InvalidArgument(where_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  [[noreturn]] void fail(const char* key, const char* what) const {
    throw InvalidArgument(where_ + "." + key + ": expected " + what);
  }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

Method default_method(MethodKind kind, std::size_t rank, double alpha) {
  Method m;
  m.kind = kind;
  m.rank = rank;
  m.alpha = alpha;
  return m;
}

Method toy_method(MethodKind kind, const ToyInstance& inst) {
  return default_method(kind, inst.lora_rank, static_cast<double>(inst.lora_rank));
}

Method retention_method(MethodKind kind) { return default_method(kind, 4, 8.0); }

// Entries are either a bare name or an object; unspecified hyperparameters
// come from `defaults`.
Method read_method(const json& j, const std::string& where, const Method& defaults) {
  Method m = defaults;
  if (j.is_string()) {
    m.kind = parse_method(j.get<std::string>());
    return m;
  }
  ObjectReader r(j, where);
  std::string name;
  r.text("name", name);
  if (name.empty()) throw InvalidArgument(where + ": method needs a name");
  m.kind = parse_method(name);
  r.count("rank", m.rank);
  r.real("alpha", m.alpha);
  r.real("gate_bias_init", m.gate_bias_init);
  r.real("gate_lr_ratio", m.gate_lr_ratio);
  r.finish();
  return m;
}

std::vector<Method> read_methods(const json& j, const std::string& where, const Method& defaults) {
  if (!j.is_array()) throw InvalidArgument(where + ": expected an array");
  std::vector<Method> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.push_back(read_method(j[i], where + "[" + std::to_string(i) + "]", defaults));
  }
  return out;
}

void read_train(const json& j, const std::string& where, TrainConfig& t) {
  ObjectReader r(j, where);
  r.count("steps", t.steps);
  r.count("batch_size", t.batch_size);
  std::string opt = to_string(t.optimizer);
  r.text("optimizer", opt);
  t.optimizer = parse_optimizer(opt);
  r.real("lr", t.lr);
  std::string sched = to_string(t.schedule);
  r.text("schedule", sched);
  t.schedule = parse_schedule(sched);
  r.real("warmup_ratio", t.warmup_ratio);
  r.real("weight_decay", t.weight_decay);
  r.real("max_grad_norm", t.max_grad_norm);
  if (const json* a = r.find("adam")) {
    ObjectReader ar(*a, r.path("adam"));
    ar.real("beta1", t.adam.beta1);
    ar.real("beta2", t.adam.beta2);
    ar.real("eps", t.adam.eps);
    ar.finish();
  }
  r.count("checkpoints", t.checkpoints);
  r.count("eval_samples", t.eval_samples);
  r.count("monitor_samples", t.monitor_samples);
  r.real("noise_std", t.noise_std);
  r.finish();
}

ordered_json train_json(const TrainConfig& t) {
  ordered_json j;
  j["steps"] = t.steps;
  j["batch_size"] = t.batch_size;
  j["optimizer"] = to_string(t.optimizer);
  j["lr"] = t.lr;
  j["schedule"] = to_string(t.schedule);
  j["warmup_ratio"] = t.warmup_ratio;
  j["weight_decay"] = t.weight_decay;
  j["max_grad_norm"] = t.max_grad_norm;
  j["adam"] = ordered_json{{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}};
  j["checkpoints"] = t.checkpoints;
  j["eval_samples"] = t.eval_samples;
  j["monitor_samples"] = t.monitor_samples;
  j["noise_std"] = t.noise_std;
  return j;
}

ordered_json methods_json(const std::vector<Method>& methods) {
  ordered_json arr = ordered_json::array();
  for (const Method& m : methods) {
    ordered_json j;
    j["name"] = m.name();
    j["rank"] = m.rank;
    j["alpha"] = m.alpha;
    j["gate_bias_init"] = m.gate_bias_init;
    j["gate_lr_ratio"] = m.gate_lr_ratio;
    arr.push_back(std::move(j));
  }
  return arr;
}

void validate_methods(const std::vector<Method>& methods, const char* where) {
  if (methods.empty()) throw InvalidArgument(std::string(where) + ": at least one method is required");
  std::set<MethodKind> seen;
  for (const Method& m : methods) {
    if (!seen.insert(m.kind).second) {
      throw InvalidArgument(std::string(where) + ": method '" + m.name() + "' listed twice");
    }
    if (m.rank == 0) throw InvalidArgument(std::string(where) + ": rank must be >= 1");
    if (!(m.alpha > 0.0)) throw InvalidArgument(std::string(where) + ": alpha must be > 0");
    if (!(m.gate_lr_ratio >= 0.0)) throw InvalidArgument(std::string(where) + ": gate_lr_ratio must be >= 0");
    if (!std::isfinite(m.gate_bias_init)) throw InvalidArgument(std::string(where) + ": gate_bias_init must be finite");
  }
}

}  // namespace

std::string_view library_version() { return DISEL_VERSION_STRING; }

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kToyFigure1:
      return "toy-figure1";
    case ExperimentKind::kGradcheck:
      return "gradcheck";
    case ExperimentKind::kMlpRetention:
      return "mlp-retention";
    case ExperimentKind::kGatesReport:
      return "gates-report";
  }
  return "toy-figure1";
}

ExperimentKind parse_experiment(std::string_view name) {
  for (auto k : {ExperimentKind::kToyFigure1, ExperimentKind::kGradcheck, ExperimentKind::kMlpRetention,
                 ExperimentKind::kGatesReport}) {
    if (name == to_string(k)) return k;
  }
  throw InvalidArgument("unknown experiment '" + std::string(name) +
                        "' (expected toy-figure1, gradcheck, mlp-retention, gates-report)");
}

ExperimentConfig default_config(ExperimentKind kind) {
  ExperimentConfig cfg;
  cfg.kind = kind;
  const ToyInstance& inst = cfg.toy.instance;
  cfg.toy.methods = {toy_method(MethodKind::kFullFt, inst), toy_method(MethodKind::kLora, inst),
                     toy_method(MethodKind::kDisel, inst)};
  cfg.retention.run = default_retention_config();
  return cfg;
}

ExperimentConfig parse_config(ExperimentKind kind, std::string_view json_text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw InvalidArgument(std::string("config: not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg = default_config(kind);
  ObjectReader r(doc, "config");
  std::string exp = to_string(kind);
  r.text("experiment", exp);
  if (parse_experiment(exp) != kind) {
    throw InvalidArgument("config: file is for '" + exp + "', not '" + to_string(kind) + "'");
  }
  if (const json* s = r.find("seed")) {
    if (!s->is_number_unsigned() && !(s->is_number_integer() && s->get<std::int64_t>() >= 0)) {
      throw InvalidArgument("config.seed: expected a non-negative integer");
    }
    cfg.seed = s->get<std::uint64_t>();
  }
  std::string out = cfg.output_dir.string();
  r.text("output_dir", out);
  cfg.output_dir = resolve(out, base_dir);

  if (const json* t = r.find("toy")) {
    ObjectReader tr(*t, "config.toy");
    if (const json* inst = tr.find("instance")) {
      ObjectReader ir(*inst, "config.toy.instance");
      ir.count("d", cfg.toy.instance.d);
      ir.real("mu", cfg.toy.instance.mu);
      ir.real("s2", cfg.toy.instance.s2);
      ir.count("target_rank", cfg.toy.instance.target_rank);
      ir.count("lora_rank", cfg.toy.instance.lora_rank);
      ir.finish();
    }
    if (const json* train = tr.find("train")) read_train(*train, "config.toy.train", cfg.toy.train);
    if (const json* m = tr.find("methods")) {
      cfg.toy.methods = read_methods(*m, "config.toy.methods", toy_method(MethodKind::kDisel, cfg.toy.instance));
    } else {
      for (Method& m : cfg.toy.methods) {
        m.rank = cfg.toy.instance.lora_rank;
        m.alpha = static_cast<double>(m.rank);
      }
    }
    tr.count("bayes_samples", cfg.toy.bayes_samples);
    tr.count("gate_samples", cfg.toy.gate_samples);
    tr.count("bins", cfg.toy.bins);
    tr.finish();
  }

  if (const json* g = r.find("gradcheck")) {
    ObjectReader gr(*g, "config.gradcheck");
    gr.count("instances", cfg.gradcheck.instances);
    gr.count("max_dim", cfg.gradcheck.max_dim);
    gr.real("step", cfg.gradcheck.step);
    gr.real("tolerance", cfg.gradcheck.tolerance);
    gr.real("abs_floor", cfg.gradcheck.abs_floor);
    gr.finish();
  }

  if (const json* m = r.find("retention")) {
    ObjectReader mr(*m, "config.retention");
    RetentionConfig& rc = cfg.retention.run;
    if (const json* t = mr.find("tasks")) {
      ObjectReader tr(*t, "config.retention.tasks");
      tr.count("d", rc.tasks.d);
      tr.count("n_classes", rc.tasks.n_classes);
      tr.real("separation", rc.tasks.separation);
      tr.real("blob_std", rc.tasks.blob_std);
      tr.count("n_train", rc.tasks.n_train);
      tr.count("n_test", rc.tasks.n_test);
      tr.finish();
    }
    if (const json* mlp = mr.find("mlp")) {
      ObjectReader lr(*mlp, "config.retention.mlp");
      lr.count("hidden", rc.mlp.hidden);
      lr.count("hidden_layers", rc.mlp.hidden_layers);
      std::string act = to_string(rc.mlp.activation);
      lr.text("activation", act);
      rc.mlp.activation = parse_activation(act);
      lr.finish();
    }
    if (const json* p = mr.find("pretrain")) read_train(*p, "config.retention.pretrain", rc.pretrain);
    if (const json* a = mr.find("adapt")) read_train(*a, "config.retention.adapt", rc.adapt);
    if (const json* ms = mr.find("methods")) {
      rc.methods = read_methods(*ms, "config.retention.methods", retention_method(MethodKind::kDisel));
    }
    mr.count("replicates", cfg.retention.replicates);
    mr.count("bins", cfg.retention.bins);
    mr.finish();
  }

  if (const json* g = r.find("gates")) {
    ObjectReader gr(*g, "config.gates");
    std::string model;
    gr.text("model", model);
    cfg.gates.model = resolve(model, base_dir);
    if (const json* ds = gr.find("domains")) {
      if (!ds->is_array()) throw InvalidArgument("config.gates.domains: expected an array");
      cfg.gates.domains.clear();
      for (std::size_t i = 0; i < ds->size(); ++i) {
        ObjectReader dr((*ds)[i], "config.gates.domains[" + std::to_string(i) + "]");
        GatesDomain d;
        std::string csv;
        dr.text("name", d.name);
        dr.text("csv", csv);
        dr.finish();
        d.csv = resolve(csv, base_dir);
        cfg.gates.domains.push_back(std::move(d));
      }
    }
    gr.count("bins", cfg.gates.bins);
    gr.finish();
  }
  r.finish();
  return cfg;
}

ExperimentConfig load_config(ExperimentKind kind, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(kind, ss.str(), path.parent_path());
}

std::string config_json(const ExperimentConfig& cfg) {
  ordered_json j;
  j["experiment"] = to_string(cfg.kind);
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir.generic_string();
  switch (cfg.kind) {
    case ExperimentKind::kToyFigure1: {
      const auto& t = cfg.toy;
      ordered_json inst{{"d", t.instance.d},
                        {"mu", t.instance.mu},
                        {"s2", t.instance.s2},
                        {"target_rank", t.instance.target_rank},
                        {"lora_rank", t.instance.lora_rank}};
      j["toy"] = ordered_json{{"instance", inst},
                              {"train", train_json(t.train)},
                              {"methods", methods_json(t.methods)},
                              {"bayes_samples", t.bayes_samples},
                              {"gate_samples", t.gate_samples},
                              {"bins", t.bins}};
      break;
    }
    case ExperimentKind::kGradcheck: {
      const auto& g = cfg.gradcheck;
      j["gradcheck"] = ordered_json{{"instances", g.instances},
                                    {"max_dim", g.max_dim},
                                    {"step", g.step},
                                    {"tolerance", g.tolerance},
                                    {"abs_floor", g.abs_floor}};
      break;
    }
    case ExperimentKind::kMlpRetention: {
      const auto& rc = cfg.retention.run;
      ordered_json tasks{{"d", rc.tasks.d},
                         {"n_classes", rc.tasks.n_classes},
                         {"separation", rc.tasks.separation},
                         {"blob_std", rc.tasks.blob_std},
                         {"n_train", rc.tasks.n_train},
                         {"n_test", rc.tasks.n_test}};
      ordered_json mlp{{"hidden", rc.mlp.hidden},
                       {"hidden_layers", rc.mlp.hidden_layers},
                       {"activation", to_string(rc.mlp.activation)}};
      j["retention"] = ordered_json{{"tasks", tasks},
                                    {"mlp", mlp},
                                    {"pretrain", train_json(rc.pretrain)},
                                    {"adapt", train_json(rc.adapt)},
                                    {"methods", methods_json(rc.methods)},
                                    {"replicates", cfg.retention.replicates},
                                    {"bins", cfg.retention.bins}};
      break;
    }
    case ExperimentKind::kGatesReport: {
      ordered_json domains = ordered_json::array();
      for (const auto& d : cfg.gates.domains) {
        domains.push_back(ordered_json{{"name", d.name}, {"csv", d.csv.generic_string()}});
      }
      j["gates"] = ordered_json{
          {"model", cfg.gates.model.generic_string()}, {"domains", domains}, {"bins", cfg.gates.bins}};
      break;
    }
  }
  return j.dump(2) + "\n";
}

void set_methods(ExperimentConfig& cfg, const std::vector<std::string>& names) {
  if (names.empty()) return;
  auto replace = [&](std::vector<Method>& list, auto make) {
    std::vector<Method> out;
    for (const std::string& n : names) {
      const MethodKind kind = parse_method(n);
      const auto it = std::find_if(list.begin(), list.end(), [&](const Method& m) { return m.kind == kind; });
      out.push_back(it != list.end() ? *it : make(kind));
    }
    list = std::move(out);
  };
  switch (cfg.kind) {
    case ExperimentKind::kToyFigure1:
      replace(cfg.toy.methods, [&](MethodKind k) { return toy_method(k, cfg.toy.instance); });
      break;
    case ExperimentKind::kMlpRetention:
      replace(cfg.retention.run.methods, retention_method);
      break;
    default:
      throw InvalidArgument("--method applies only to toy-figure1 and mlp-retention");
  }
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.output_dir.empty()) throw InvalidArgument("config: output_dir must not be empty");
  switch (cfg.kind) {
    case ExperimentKind::kToyFigure1: {
      const auto& t = cfg.toy;
      validate(t.instance);
      validate(t.train);
      validate_methods(t.methods, "config.toy.methods");
      if (t.bayes_samples < 2) throw InvalidArgument("config.toy.bayes_samples must be >= 2");
      if (t.gate_samples == 0) throw InvalidArgument("config.toy.gate_samples must be >= 1");
      if (t.bins < 2) throw InvalidArgument("config.toy.bins must be >= 2");
      break;
    }
    case ExperimentKind::kGradcheck:
      validate(cfg.gradcheck);
      break;
    case ExperimentKind::kMlpRetention: {
      const auto& rc = cfg.retention.run;
      validate(rc.pretrain);
      validate(rc.adapt);
      validate_methods(rc.methods, "config.retention.methods");
      if (rc.tasks.n_classes < 2 || rc.tasks.d < rc.tasks.n_classes + 1) {
        throw InvalidArgument("config.retention.tasks: need n_classes >= 2 and d >= n_classes + 1");
      }
      if (!(rc.tasks.separation >= 0.0) || !(rc.tasks.blob_std > 0.0)) {
        throw InvalidArgument("config.retention.tasks: separation must be >= 0 and blob_std > 0");
      }
      if (rc.tasks.n_train == 0 || rc.tasks.n_test == 0) {
        throw InvalidArgument("config.retention.tasks: n_train and n_test must be >= 1");
      }
      if (rc.mlp.hidden == 0 || rc.mlp.hidden_layers == 0) {
        throw InvalidArgument("config.retention.mlp: hidden and hidden_layers must be >= 1");
      }
      if (cfg.retention.replicates == 0) throw InvalidArgument("config.retention.replicates must be >= 1");
      if (cfg.retention.bins < 2) throw InvalidArgument("config.retention.bins must be >= 2");
      break;
    }
    case ExperimentKind::kGatesReport: {
      const auto& g = cfg.gates;
      if (g.model.empty()) throw InvalidArgument("config.gates.model is required");
      if (g.domains.empty()) throw InvalidArgument("config.gates.domains: at least one domain is required");
      std::set<std::string> names;
      for (const auto& d : g.domains) {
        if (d.name.empty() || d.csv.empty()) throw InvalidArgument("config.gates.domains: name and csv are required");
        if (d.name.find_first_of(",\n\"") != std::string::npos) {
          throw InvalidArgument("config.gates.domains: name '" + d.name + "' contains a CSV delimiter");
        }
        if (!names.insert(d.name).second) throw InvalidArgument("config.gates.domains: duplicate name '" + d.name + "'");
      }
      if (g.bins < 2) throw InvalidArgument("config.gates.bins must be >= 2");
      break;
    }
  }
}

}  // namespace disel
