#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowpert/sampler_mc.hpp"

namespace flowpert {

/// Cumulative mean: out[n] = mean(energies[0..n]).
std::vector<double> running_mean_energy(std::span<const double> energies);
std::vector<double> running_mean_energy(const ChainTrace& trace);

struct EnergyHistogram {
  std::vector<double> edges;  // n_bins + 1, strictly increasing
  std::vector<std::size_t> counts;
  std::size_t underflow = 0;
  std::size_t overflow = 0;
  bool normalized = false;

  std::size_t total() const;
  /// counts / (total * bin width), including out-of-range samples in the total.
  std::vector<double> density() const;
};

/// Fixed-width bins over [lo, hi); hi itself goes into the last bin.
EnergyHistogram histogram(std::span<const double> values, std::size_t n_bins, double lo, double hi);

/// Integrated autocorrelation time with Geyer's initial positive sequence
/// truncation. Autocovariances come from an FFT of the zero-padded series.
double integrated_autocorr_time(std::span<const double> series);

/// n / tau, clamped to [1, n]. Requires at least 10 points.
double ess(std::span<const double> series);

struct MeanEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  double ess = 0.0;
  double iat = 0.0;
};

MeanEstimate mean_with_error(std::span<const double> series);

/// Mean and standard error of i.i.d. values.
MeanEstimate iid_mean(std::span<const double> values);

/// First index at which the running mean enters oracle +- band and stays
/// there for `hold` consecutive points.
std::optional<std::size_t> convergence_step(std::span<const double> running_mean, double oracle, double band,
                                            std::size_t hold = 500);

/// Fraction of samples assigned to each mixture component.
std::vector<double> mode_occupancy(const GmmSpec& spec, std::span<const Vec> samples);

struct CostRow {
  std::string method;
  std::size_t dim = 0;
  double median_seconds = 0.0;
  double ratio_vs_fp = 0.0;
};

struct NamedKernel {
  std::string name;
  const ChainKernel* kernel;
  McConfig config;
};

/// Median wall-clock seconds per MC step for each kernel at one dimension,
/// after `warmup` untimed steps. ratio_vs_fp is relative to the row named "fp".
std::vector<CostRow> benchmark_step_cost(std::span<const NamedKernel> kernels, std::size_t dim, std::size_t reps,
                                         std::size_t warmup, std::uint64_t seed);

void write_histogram_csv(const EnergyHistogram& h, const std::string& path);
void write_running_mean_csv(std::span<const double> running_mean, const std::string& path,
                            std::size_t first_step = 0);
void write_cost_csv(std::span<const CostRow> rows, const std::string& path);

}  // namespace flowpert
