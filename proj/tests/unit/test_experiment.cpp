#include "disel/errors.hpp"
#include "disel/experiment.hpp"
#include "doctest.h"
#include "json.hpp"
#include "support.hpp"

using namespace disel;

TEST_CASE("experiment names round-trip") {
  for (auto k : {ExperimentKind::kToyFigure1, ExperimentKind::kGradcheck, ExperimentKind::kMlpRetention,
                 ExperimentKind::kGatesReport})
    CHECK(parse_experiment(to_string(k)) == k);
  CHECK_THROWS_AS(parse_experiment("figure2"), InvalidArgument);
}

TEST_CASE("defaults carry the documented training settings") {
  const ExperimentConfig toy = default_config(ExperimentKind::kToyFigure1);
  REQUIRE(toy.toy.methods.size() == 3);
  CHECK(toy.toy.methods[1].kind == MethodKind::kLora);
  CHECK(toy.toy.methods[1].rank == 2);
  CHECK(toy.toy.instance.d == 16);
  CHECK(toy.toy.train.warmup_ratio == 0.02);
  CHECK(toy.toy.train.adam.beta1 == 0.9);
  CHECK(toy.toy.train.adam.beta2 == 0.999);

  const ExperimentConfig mlp = default_config(ExperimentKind::kMlpRetention);
  CHECK(mlp.retention.replicates == 3);
  CHECK(mlp.retention.run.adapt.max_grad_norm == 1.0);
  CHECK(mlp.retention.run.adapt.weight_decay == 0.01);
  CHECK_NOTHROW(validate(toy));
  CHECK_NOTHROW(validate(mlp));
  CHECK_NOTHROW(validate(default_config(ExperimentKind::kGradcheck)));
}

TEST_CASE("expanded config parses back to the same config") {
  for (auto k : {ExperimentKind::kToyFigure1, ExperimentKind::kGradcheck, ExperimentKind::kMlpRetention}) {
    ExperimentConfig cfg = default_config(k);
    cfg.seed = 123456789012345ULL;
    const std::string text = config_json(cfg);
    const ExperimentConfig back = parse_config(k, text);
    CHECK(config_json(back) == text);
    CHECK(back.seed == cfg.seed);
  }
}

TEST_CASE("overrides touch only the named fields") {
  const ExperimentConfig cfg = parse_config(ExperimentKind::kToyFigure1, R"({
    "seed": 9,
    "toy": {
      "train": {"steps": 50, "lr": 0.5},
      "methods": ["lora", {"name": "disel", "rank": 3, "gate_lr_ratio": 2}]
    }
  })");
  CHECK(cfg.seed == 9);
  CHECK(cfg.toy.train.steps == 50);
  CHECK(cfg.toy.train.lr == 0.5);
  CHECK(cfg.toy.train.batch_size == default_config(ExperimentKind::kToyFigure1).toy.train.batch_size);
  REQUIRE(cfg.toy.methods.size() == 2);
  CHECK(cfg.toy.methods[1].rank == 3);
  CHECK(cfg.toy.methods[1].gate_lr_ratio == 2.0);
}

TEST_CASE("config errors are invalid arguments") {
  const auto kind = ExperimentKind::kToyFigure1;
  CHECK_THROWS_AS(parse_config(kind, "{"), InvalidArgument);
  CHECK_THROWS_AS(parse_config(kind, R"({"sede": 1})"), InvalidArgument);
  CHECK_THROWS_AS(parse_config(kind, R"({"toy": {"train": {"steps": -1}}})"), InvalidArgument);
  CHECK_THROWS_AS(parse_config(kind, R"({"toy": {"train": {"lr": "fast"}}})"), InvalidArgument);
  CHECK_THROWS_AS(parse_config(kind, R"({"experiment": "gradcheck"})"), InvalidArgument);
  CHECK_THROWS_AS(validate(parse_config(kind, R"({"toy": {"methods": ["lora", "lora"]}})")), InvalidArgument);
  CHECK_THROWS_AS(validate(parse_config(kind, R"({"toy": {"methods": [{"name": "disel", "rank": 0}]}})")),
                  InvalidArgument);
  CHECK_THROWS_AS(load_config(kind, "/nonexistent/config.json"), IoError);

  ExperimentConfig g = default_config(ExperimentKind::kGatesReport);
  g.gates.model = "m.bin";
  CHECK_THROWS_AS(validate(g), InvalidArgument);  // no domains
  g.gates.domains = {{"a,b", "x.csv"}};
  CHECK_THROWS_AS(validate(g), InvalidArgument);
  g.gates.domains = {{"a", "x.csv"}, {"a", "y.csv"}};
  CHECK_THROWS_AS(validate(g), InvalidArgument);
}

TEST_CASE("method list overrides keep hyperparameters of known methods") {
  ExperimentConfig cfg = default_config(ExperimentKind::kToyFigure1);
  cfg.toy.methods[2].gate_bias_init = -7.0;
  set_methods(cfg, {"disel", "frozen"});
  REQUIRE(cfg.toy.methods.size() == 2);
  CHECK(cfg.toy.methods[0].gate_bias_init == -7.0);
  CHECK(cfg.toy.methods[1].kind == MethodKind::kFrozen);
  CHECK_THROWS_AS(set_methods(cfg, {"nope"}), InvalidArgument);
  ExperimentConfig gc = default_config(ExperimentKind::kGradcheck);
  CHECK_THROWS_AS(set_methods(gc, {"lora"}), InvalidArgument);
}

TEST_CASE("gates paths resolve against the config file directory") {
  ref::TempDir dir("cfg");
  std::ofstream(dir.path() / "c.json") << R"({"gates": {"model": "m.bin", "domains": [{"name": "a", "csv": "in/a.csv"}]}})";
  const ExperimentConfig cfg = load_config(ExperimentKind::kGatesReport, dir.path() / "c.json");
  CHECK(cfg.gates.model == dir.path() / "m.bin");
  CHECK(cfg.gates.domains.at(0).csv == dir.path() / "in" / "a.csv");
}

TEST_CASE("run directories are never reused") {
  ref::TempDir dir("runs");
  const auto a = make_run_dir(dir.path(), ExperimentKind::kGradcheck);
  const auto b = make_run_dir(dir.path(), ExperimentKind::kGradcheck);
  CHECK(a != b);
  CHECK(std::filesystem::is_directory(a));
  CHECK(a.filename().string().rfind("gradcheck-", 0) == 0);
}

TEST_CASE("a gradcheck run writes config, manifest and report") {
  ref::TempDir dir("run");
  ExperimentConfig cfg = default_config(ExperimentKind::kGradcheck);
  cfg.output_dir = dir.path();
  cfg.seed = 5;
  const RunOutput out = run_experiment(cfg);
  CHECK(out.passed());
  CHECK(out.checks.size() == 8);
  for (const char* f : {"config.json", "manifest.json", "gradcheck.csv", "results.json"})
    CHECK(std::filesystem::exists(out.dir / f));
  const auto manifest = nlohmann::json::parse(ref::slurp(out.dir / "manifest.json"));
  CHECK(manifest["seed"] == 5);
  CHECK(manifest["version"] == std::string(library_version()));
  CHECK(manifest["artifacts"].size() == 3);
  const auto summary = nlohmann::json::parse(out.summary);
  CHECK(summary["passed"] == true);
}

TEST_CASE("gates runs fail before creating a directory when the model is missing") {
  ref::TempDir dir("gates");
  ExperimentConfig cfg = default_config(ExperimentKind::kGatesReport);
  cfg.output_dir = dir.path() / "out";
  cfg.gates.model = dir.path() / "missing.bin";
  cfg.gates.domains = {{"a", dir.path() / "a.csv"}};
  CHECK_THROWS_AS(run_experiment(cfg), IoError);
  CHECK_FALSE(std::filesystem::exists(cfg.output_dir));
}
