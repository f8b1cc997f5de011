#pragma once

// Gate-activation recording and aggregation: per-sample traces, histograms
// over early/mid/late depth bands and per-(layer, rank) statistics.

#include <cstddef>
#include <string>
#include <vector>

#include "disel/datagen.hpp"
#include "disel/network.hpp"

namespace disel {

struct GateRecord {
  std::size_t layer = 0;   // index into the network's layer list
  std::size_t rank = 0;
  std::size_t sample = 0;  // unique across domains
  std::size_t domain = 0;  // index into GateTrace::domains
  double value = 0.0;
};

struct GateTrace {
  std::vector<std::string> domains;
  std::vector<std::size_t> layers;  // gated layers in depth order
  std::vector<GateRecord> records;
};

/// Inputs carrying a caller-chosen domain label.
struct DomainInputs {
  std::string name;
  Matrix x;  // n x d_in
};

/// One record per (gated layer, rank, sample). Samples are numbered
/// consecutively over the domains in order. Throws InvalidArgument when the
/// model has no gated layer or a domain's inputs have the wrong width.
GateTrace record_gates(const Network& model, const std::vector<DomainInputs>& inputs);
/// Domains "ft" and "pt" taken from the batch labels (in that order).
GateTrace record_gates(const Network& model, const Batch& batch);

struct BandHistogram {
  std::string band;                 // early, mid or late
  std::vector<std::size_t> layers;  // network layer indices in the band
  // [domain][bin], each row summing to 1; empty when the domain has no
  // records in this band.
  std::vector<std::vector<double>> normalized;
};

struct HistogramSet {
  std::size_t bins = 0;
  std::vector<std::string> domains;
  std::vector<BandHistogram> bands;  // only non-empty bands
};

inline constexpr std::size_t kDefaultBins = 50;

/// Splits the gated layers into three contiguous bands (the remainder goes
/// to the earlier bands) and histograms each band's gate values per domain
/// over [0, 1] with uniform bins; every recorded gate carries equal weight.
/// Throws InvalidArgument when the trace is empty or bins < 2.
HistogramSet depth_band_histograms(const GateTrace& trace, std::size_t bins = kDefaultBins);

/// Layer counts per band for n gated layers.
std::vector<std::size_t> band_sizes(std::size_t n_layers);

/// Columns band,domain,bin_left,bin_right,normalized_count.
std::string histograms_csv(const HistogramSet& set);

struct GateStat {
  std::size_t layer = 0;
  std::size_t rank = 0;
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;                  // population standard deviation
  // Per domain; NaN mean and std when a domain has no records.
  std::vector<std::size_t> domain_counts;
  std::vector<double> domain_means;
  std::vector<double> domain_stds;
};

struct GateSummary {
  std::vector<std::string> domains;
  std::vector<GateStat> stats;       // ordered by (layer, rank)
  std::vector<double> domain_means;  // over all layers and ranks
};

GateSummary gate_summary(const GateTrace& trace);

/// Columns layer,rank,domain,count,mean,std. Each (layer, rank) has a row
/// with domain "all" pooling every domain, then one row per non-empty domain.
std::string summary_csv(const GateSummary& summary);

/// Fraction of a domain's gate values strictly above `threshold`.
double fraction_above(const GateTrace& trace, std::size_t domain, double threshold);

}  // namespace disel
