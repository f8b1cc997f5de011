#include "disel/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "disel/errors.hpp"
#include "format.hpp"

namespace disel {

namespace {

constexpr const char* kBandNames[] = {"early", "mid", "late"};

std::size_t bin_of(double v, std::size_t bins) {
  const auto b = static_cast<std::size_t>(std::floor(v * static_cast<double>(bins)));
  return std::min(b, bins - 1);
}

struct Moments {
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  m.count = v.size();
  if (v.empty()) {
    m.mean = m.std = std::numeric_limits<double>::quiet_NaN();
    return m;
  }
  double sum = 0.0;
  for (double x : v) sum += x;
  m.mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(v.size()));
  return m;
}

}  // namespace

GateTrace record_gates(const Network& model, const std::vector<DomainInputs>& inputs) {
  validate(model);
  GateTrace trace;
  trace.layers = model.gated_layers();
  if (trace.layers.empty()) throw InvalidArgument("record_gates: model has no gated adapter");
  std::size_t per_sample = 0;
  for (std::size_t l : trace.layers) per_sample += std::get<DiselAdapter>(model.layers[l].adapter).rank();

  std::size_t sample = 0;
  for (std::size_t di = 0; di < inputs.size(); ++di) {
    const DomainInputs& dom = inputs[di];
    if (dom.x.rows() > 0 && static_cast<std::size_t>(dom.x.cols()) != model.d_in()) {
      throw InvalidArgument("record_gates: inputs for domain '" + dom.name + "' have the wrong width");
    }
    trace.domains.push_back(dom.name);
    const auto n = static_cast<std::size_t>(dom.x.rows());
    std::vector<GateRecord> block(n * per_sample);
    parallel_for(n, [&](std::size_t i) {
      NetworkCache cache;
      network_forward(model, Vector(dom.x.row(static_cast<Eigen::Index>(i)).transpose()), &cache);
      std::size_t k = i * per_sample;
      for (std::size_t l : trace.layers) {
        const Vector& g = cache.layer[l].g;
        for (Eigen::Index r = 0; r < g.size(); ++r) {
          block[k++] = GateRecord{l, static_cast<std::size_t>(r), sample + i, di, g[r]};
        }
      }
    });
    trace.records.insert(trace.records.end(), block.begin(), block.end());
    sample += n;
  }
  return trace;
}

GateTrace record_gates(const Network& model, const Batch& batch) {
  std::vector<DomainInputs> inputs{{"ft", {}}, {"pt", {}}};
  std::vector<Eigen::Index> rows[2];
  for (std::size_t i = 0; i < batch.size(); ++i) {
    rows[batch.labels[i] == Population::kFt ? 0 : 1].push_back(static_cast<Eigen::Index>(i));
  }
  for (int p = 0; p < 2; ++p) {
    inputs[p].x.resize(static_cast<Eigen::Index>(rows[p].size()), batch.x.cols());
    for (std::size_t i = 0; i < rows[p].size(); ++i) {
      inputs[p].x.row(static_cast<Eigen::Index>(i)) = batch.x.row(rows[p][i]);
    }
  }
  return record_gates(model, inputs);
}

std::vector<std::size_t> band_sizes(std::size_t n_layers) {
  std::vector<std::size_t> sizes(3, n_layers / 3);
  for (std::size_t b = 0; b < n_layers % 3; ++b) ++sizes[b];
  return sizes;
}

HistogramSet depth_band_histograms(const GateTrace& trace, std::size_t bins) {
  if (trace.records.empty()) throw InvalidArgument("depth_band_histograms: empty trace");
  if (bins < 2) throw InvalidArgument("depth_band_histograms: bins must be >= 2");
  HistogramSet set;
  set.bins = bins;
  set.domains = trace.domains;

  std::map<std::size_t, std::size_t> band_of;
  const auto sizes = band_sizes(trace.layers.size());
  std::size_t next = 0;
  for (std::size_t b = 0; b < 3; ++b) {
    if (sizes[b] == 0) continue;
    BandHistogram h;
    h.band = kBandNames[b];
    for (std::size_t k = 0; k < sizes[b]; ++k) {
      h.layers.push_back(trace.layers[next]);
      band_of[trace.layers[next]] = set.bands.size();
      ++next;
    }
    h.normalized.assign(trace.domains.size(), std::vector<double>(bins, 0.0));
    set.bands.push_back(std::move(h));
  }

  std::vector<std::vector<std::size_t>> totals(set.bands.size(), std::vector<std::size_t>(trace.domains.size(), 0));
  for (const GateRecord& r : trace.records) {
    const auto it = band_of.find(r.layer);
    if (it == band_of.end() || r.domain >= trace.domains.size()) {
      throw InvalidArgument("depth_band_histograms: record refers to an unknown layer or domain");
    }
    set.bands[it->second].normalized[r.domain][bin_of(r.value, bins)] += 1.0;
    ++totals[it->second][r.domain];
  }
  for (std::size_t b = 0; b < set.bands.size(); ++b) {
    for (std::size_t d = 0; d < trace.domains.size(); ++d) {
      auto& h = set.bands[b].normalized[d];
      if (totals[b][d] == 0) {
        h.clear();
        continue;
      }
      const auto n = static_cast<double>(totals[b][d]);
      for (double& c : h) c /= n;
    }
  }
  return set;
}

std::string histograms_csv(const HistogramSet& set) {
  std::ostringstream out;
  out << "band,domain,bin_left,bin_right,normalized_count\n";
  const auto bins = static_cast<double>(set.bins);
  for (const auto& band : set.bands) {
    for (std::size_t d = 0; d < set.domains.size(); ++d) {
      const auto& h = band.normalized[d];
      for (std::size_t k = 0; k < h.size(); ++k) {
        out << band.band << ',' << set.domains[d] << ',' << fmt_double(static_cast<double>(k) / bins) << ','
            << fmt_double(static_cast<double>(k + 1) / bins) << ',' << fmt_double(h[k]) << '\n';
      }
    }
  }
  return out.str();
}

GateSummary gate_summary(const GateTrace& trace) {
  if (trace.records.empty()) throw InvalidArgument("gate_summary: empty trace");
  const std::size_t nd = trace.domains.size();
  // [layer, rank] -> [domain] -> values, in trace order.
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::vector<double>>> values;
  std::vector<double> dsum(nd, 0.0);
  std::vector<std::size_t> dcount(nd, 0);
  for (const GateRecord& r : trace.records) {
    if (r.domain >= nd) throw InvalidArgument("gate_summary: record refers to an unknown domain");
    auto& per_domain = values[{r.layer, r.rank}];
    if (per_domain.empty()) per_domain.resize(nd);
    per_domain[r.domain].push_back(r.value);
    dsum[r.domain] += r.value;
    ++dcount[r.domain];
  }

  GateSummary out;
  out.domains = trace.domains;
  for (const auto& [key, per_domain] : values) {
    GateStat s;
    s.layer = key.first;
    s.rank = key.second;
    std::vector<double> pooled;
    for (const auto& v : per_domain) {
      pooled.insert(pooled.end(), v.begin(), v.end());
      const Moments m = moments(v);
      s.domain_counts.push_back(m.count);
      s.domain_means.push_back(m.mean);
      s.domain_stds.push_back(m.std);
    }
    const Moments all = moments(pooled);
    s.count = all.count;
    s.mean = all.mean;
    s.std = all.std;
    out.stats.push_back(std::move(s));
  }
  for (std::size_t d = 0; d < nd; ++d) {
    out.domain_means.push_back(dcount[d] ? dsum[d] / static_cast<double>(dcount[d])
                                         : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

std::string summary_csv(const GateSummary& summary) {
  std::ostringstream out;
  out << "layer,rank,domain,count,mean,std\n";
  for (const GateStat& s : summary.stats) {
    out << s.layer << ',' << s.rank << ",all," << s.count << ',' << fmt_double(s.mean) << ',' << fmt_double(s.std)
        << '\n';
    for (std::size_t d = 0; d < summary.domains.size(); ++d) {
      if (s.domain_counts[d] == 0) continue;
      out << s.layer << ',' << s.rank << ',' << summary.domains[d] << ',' << s.domain_counts[d] << ','
          << fmt_double(s.domain_means[d]) << ',' << fmt_double(s.domain_stds[d]) << '\n';
    }
  }
  return out.str();
}

double fraction_above(const GateTrace& trace, std::size_t domain, double threshold) {
  std::size_t n = 0;
  std::size_t above = 0;
  for (const GateRecord& r : trace.records) {
    if (r.domain != domain) continue;
    ++n;
    if (r.value > threshold) ++above;
  }
  if (n == 0) throw InvalidArgument("fraction_above: domain has no records");
  return static_cast<double>(above) / static_cast<double>(n);
}

}  // namespace disel
