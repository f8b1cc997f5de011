#include <algorithm>
#include <cmath>

#include "disel/diagnostics.hpp"
#include "disel/errors.hpp"
#include "disel/gradcheck.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace disel;

namespace {

GateTrace hand_trace() {
  // two gated layers (3 and 7), one rank each, domains a and b
  GateTrace t;
  t.domains = {"a", "b"};
  t.layers = {3, 7};
  const double a_vals[] = {0.05, 0.15, 0.95, 0.96};
  const double b_vals[] = {0.5, 0.51};
  std::size_t s = 0;
  for (double v : a_vals) t.records.push_back({3, 0, s++, 0, v});
  for (double v : b_vals) t.records.push_back({3, 0, s++, 1, v});
  t.records.push_back({7, 0, 0, 0, 1.0 - 1e-17});  // rounds to the top bin
  t.records.push_back({7, 0, 1, 0, 0.0});
  return t;
}

Network gated_stack(std::size_t n_layers, std::uint64_t seed) {
  RngStream rng(seed);
  Network net;
  net.hidden_activation = Activation::kTanh;
  for (std::size_t l = 0; l < n_layers; ++l) {
    RngStream init = rng.derive("init", l);
    DiselAdapter ad = init_disel(3, 3, 2, 2.0, 0.0, init);
    net.layers.push_back({FrozenLinear{ref::random_matrix(3, 3, rng), std::nullopt}, ad});
  }
  return net;
}

}  // namespace

TEST_CASE("band sizes give the remainder to earlier bands") {
  CHECK(band_sizes(1) == std::vector<std::size_t>{1, 0, 0});
  CHECK(band_sizes(2) == std::vector<std::size_t>{1, 1, 0});
  CHECK(band_sizes(3) == std::vector<std::size_t>{1, 1, 1});
  CHECK(band_sizes(4) == std::vector<std::size_t>{2, 1, 1});
  CHECK(band_sizes(32) == std::vector<std::size_t>{11, 11, 10});
}

TEST_CASE("histograms count each gate value once and normalize per domain") {
  const HistogramSet h = depth_band_histograms(hand_trace(), 10);
  REQUIRE(h.bands.size() == 2);
  CHECK(h.bands[0].band == "early");
  CHECK(h.bands[1].band == "mid");
  const auto& a = h.bands[0].normalized[0];
  CHECK(a[0] == 0.25);
  CHECK(a[1] == 0.25);
  CHECK(a[9] == 0.5);
  const auto& b = h.bands[0].normalized[1];
  CHECK(b[5] == 1.0);
  CHECK(h.bands[1].normalized[0][9] == 0.5);
  CHECK(h.bands[1].normalized[0][0] == 0.5);
  CHECK(h.bands[1].normalized[1].empty());
  for (const auto& band : h.bands)
    for (const auto& row : band.normalized) {
      double s = 0;
      for (double v : row) s += v;
      if (!row.empty()) CHECK(s == doctest::Approx(1.0));
    }
  CHECK_THROWS_AS(depth_band_histograms(hand_trace(), 1), InvalidArgument);
  CHECK_THROWS_AS(depth_band_histograms(GateTrace{}, 10), InvalidArgument);
}

TEST_CASE("histogram csv layout") {
  const std::string csv = histograms_csv(depth_band_histograms(hand_trace(), 4));
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "band,domain,bin_left,bin_right,normalized_count");
  std::getline(in, line);
  CHECK(line == "early,a,0,0.25,0.5");
  std::getline(in, line);
  CHECK(line == "early,a,0.25,0.5,0");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  // early: a and b, mid: a only (b has no records there)
  CHECK(rows + 2 == 4 * 3);
}

TEST_CASE("summary uses population statistics per layer, rank and domain") {
  const GateSummary s = gate_summary(hand_trace());
  REQUIRE(s.stats.size() == 2);
  const GateStat& first = s.stats[0];
  CHECK(first.layer == 3);
  CHECK(first.count == 6);
  const double vals[] = {0.05, 0.15, 0.95, 0.96, 0.5, 0.51};
  double mean = 0;
  for (double v : vals) mean += v / 6;
  double var = 0;
  for (double v : vals) var += (v - mean) * (v - mean) / 6;
  CHECK(first.mean == doctest::Approx(mean));
  CHECK(first.std == doctest::Approx(std::sqrt(var)));
  CHECK(first.domain_counts == std::vector<std::size_t>{4, 2});
  CHECK(first.domain_stds[1] == doctest::Approx(0.005));
  CHECK(std::isnan(s.stats[1].domain_means[1]));
  CHECK(s.domain_means[1] == doctest::Approx(0.505));

  const std::string csv = summary_csv(s);
  CHECK(csv.rfind("layer,rank,domain,count,mean,std\n3,0,all,6,", 0) == 0);
  CHECK(csv.find("7,0,b,") == std::string::npos);
  CHECK(csv.find("7,0,a,2,0.5,0.5\n") != std::string::npos);
}

TEST_CASE("fraction above is strict") {
  const GateTrace t = hand_trace();
  CHECK(fraction_above(t, 1, 0.5) == 0.5);
  CHECK(fraction_above(t, 0, 0.9) == 0.5);
  GateTrace empty_b = t;
  empty_b.records.erase(std::remove_if(empty_b.records.begin(), empty_b.records.end(),
                                       [](const GateRecord& r) { return r.domain == 1; }),
                        empty_b.records.end());
  CHECK_THROWS_AS(fraction_above(empty_b, 1, 0.5), InvalidArgument);
}

TEST_CASE("recorded gates match per-layer forward values") {
  const Network net = gated_stack(4, 1);
  RngStream rng(2);
  std::vector<DomainInputs> inputs{{"x", ref::random_matrix(5, 3, rng)}, {"y", ref::random_matrix(3, 3, rng)}};
  const GateTrace t = record_gates(net, inputs);
  CHECK(t.layers == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(t.records.size() == 8 * 4 * 2);
  for (const GateRecord& r : t.records) {
    const Matrix& x = r.domain == 0 ? inputs[0].x : inputs[1].x;
    const auto row = static_cast<Eigen::Index>(r.domain == 0 ? r.sample : r.sample - 5);
    NetworkCache cache;
    network_forward(net, x.row(row).transpose(), &cache);
    CHECK(r.value == cache.layer[r.layer].g[static_cast<Eigen::Index>(r.rank)]);
  }
  const HistogramSet h = depth_band_histograms(t);
  CHECK(h.bands.size() == 3);
  CHECK(h.bands[0].layers == std::vector<std::size_t>{0, 1});
  CHECK(h.bins == kDefaultBins);

  Network plain = net;
  for (auto& l : plain.layers) l.adapter = std::monostate{};
  CHECK_THROWS_AS(record_gates(plain, inputs), InvalidArgument);
  std::vector<DomainInputs> wide{{"w", Matrix::Zero(2, 4)}};
  CHECK_THROWS_AS(record_gates(net, wide), InvalidArgument);
}

TEST_CASE("gradient suite passes and enumerates every block") {
  const GradcheckReport r = run_gradcheck(GradcheckConfig{}, RngStream(3));
  CHECK(r.passed());
  std::vector<std::string> names;
  for (const auto& b : r.blocks) {
    names.push_back(b.layer_type + ":" + b.block);
    CHECK(b.instances >= 100);
    CHECK(b.max_rel_error <= 1e-5);
  }
  CHECK(names == std::vector<std::string>{"disel:dA", "disel:dB", "disel:dWg", "disel:dbg", "disel:dx", "lora:dA",
                                          "lora:dB", "lora:dx"});
  const std::string csv = gradcheck_csv(r);
  CHECK(csv.rfind("layer_type,block,instances,entries,max_rel_error,passed\n", 0) == 0);
}

TEST_CASE("a corrupted gate weight gradient is caught") {
  const DiselBackwardFn broken = [](const FrozenLinear& l, const DiselAdapter& a, const LayerCache& c,
                                    const Vector& gy) {
    GradSet g = disel_backward(l, a, c, gy);
    g.d_wg *= 1.001;
    return g;
  };
  const GradcheckReport r = run_gradcheck(GradcheckConfig{}, RngStream(3), broken);
  CHECK_FALSE(r.passed());
  for (const auto& b : r.blocks) CHECK(b.passed == (b.block != "dWg" || b.layer_type != "disel"));

  const DiselBackwardFn negated_bg = [](const FrozenLinear& l, const DiselAdapter& a, const LayerCache& c,
                                           const Vector& gy) {
    GradSet g = disel_backward(l, a, c, gy);
    g.d_bg = -g.d_bg;
    return g;
  };
  CHECK_FALSE(run_gradcheck(GradcheckConfig{}, RngStream(4), negated_bg).passed());
}

TEST_CASE("gradcheck config validation") {
  GradcheckConfig c;
  c.instances = 0;
  CHECK_THROWS_AS(validate(c), InvalidArgument);
  c = GradcheckConfig{};
  c.step = 0.0;
  CHECK_THROWS_AS(validate(c), InvalidArgument);
}
