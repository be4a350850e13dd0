#include "flowpert/diagnostics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>

#include <fftw3.h>

#include "flowpert/errors.hpp"

namespace flowpert {

namespace {
// FFTW planning is not thread-safe.
std::mutex fftw_plan_mutex;
}  // namespace

std::vector<double> running_mean_energy(std::span<const double> energies) {
  if (energies.empty()) throw ArgumentError("running_mean_energy: empty trace");
  std::vector<double> out(energies.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < energies.size(); ++i) {
    sum += energies[i];
    out[i] = sum / static_cast<double>(i + 1);
  }
  return out;
}

std::vector<double> running_mean_energy(const ChainTrace& trace) {
  std::vector<double> e;
  e.reserve(trace.steps.size());
  for (const auto& r : trace.steps) e.push_back(r.energy);
  return running_mean_energy(e);
}

std::size_t EnergyHistogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0}) + underflow + overflow;
}

std::vector<double> EnergyHistogram::density() const {
  std::vector<double> d(counts.size(), 0.0);
  const double n = static_cast<double>(total());
  if (n == 0.0) return d;
  for (std::size_t b = 0; b < counts.size(); ++b) {
    d[b] = static_cast<double>(counts[b]) / (n * (edges[b + 1] - edges[b]));
  }
  return d;
}

EnergyHistogram histogram(std::span<const double> values, std::size_t n_bins, double lo, double hi) {
  if (n_bins == 0) throw ArgumentError("histogram: n_bins must be >= 1");
  if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi)) throw ArgumentError("histogram: invalid range");
  EnergyHistogram h;
  h.edges.resize(n_bins + 1);
  const double width = (hi - lo) / static_cast<double>(n_bins);
  for (std::size_t b = 0; b <= n_bins; ++b) h.edges[b] = lo + width * static_cast<double>(b);
  h.edges.back() = hi;
  h.counts.assign(n_bins, 0);
  for (double v : values) {
    if (v < lo || std::isnan(v)) {
      ++h.underflow;
    } else if (v > hi) {
      ++h.overflow;
    } else {
      auto b = static_cast<std::size_t>((v - lo) / width);
      h.counts[std::min(b, n_bins - 1)] += 1;
    }
  }
  return h;
}

double integrated_autocorr_time(std::span<const double> series) {
  const std::size_t n = series.size();
  if (n < 10) throw ArgumentError("integrated_autocorr_time: series must have at least 10 points");
  const double mean = std::accumulate(series.begin(), series.end(), 0.0) / static_cast<double>(n);

  std::size_t m = 1;
  while (m < 2 * n) m <<= 1;
  std::vector<double> buf(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) buf[i] = series[i] - mean;
  std::vector<std::complex<double>> spec(m / 2 + 1);
  fftw_plan fwd;
  fftw_plan inv;
  {
    std::lock_guard lock(fftw_plan_mutex);
    fwd = fftw_plan_dft_r2c_1d(static_cast<int>(m), buf.data(), reinterpret_cast<fftw_complex*>(spec.data()),
                               FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(static_cast<int>(m), reinterpret_cast<fftw_complex*>(spec.data()), buf.data(),
                               FFTW_ESTIMATE);
  }
  fftw_execute(fwd);
  for (auto& c : spec) c = std::norm(c);
  fftw_execute(inv);
  {
    std::lock_guard lock(fftw_plan_mutex);
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
  }
  const double c0 = buf[0];
  if (!(c0 > 1e-300 * static_cast<double>(m) * static_cast<double>(n))) {
    // Constant series: every sample is the same, one effective draw.
    return static_cast<double>(n);
  }
  auto rho = [&](std::size_t lag) { return buf[lag] / c0; };

  // Geyer: sum consecutive pairs while positive, enforcing monotone decrease.
  double tau = -1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    double pair = rho(2 * k) + rho(2 * k + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, prev_pair);
    tau += 2.0 * pair;
    prev_pair = pair;
  }
  return std::clamp(tau, 1.0 / static_cast<double>(n), static_cast<double>(n));
}

double ess(std::span<const double> series) {
  const double n = static_cast<double>(series.size());
  const double tau = integrated_autocorr_time(series);
  return std::clamp(n / tau, 1.0, n);
}

MeanEstimate mean_with_error(std::span<const double> series) {
  MeanEstimate out;
  const std::size_t n = series.size();
  if (n < 10) throw ArgumentError("mean_with_error: series must have at least 10 points");
  out.mean = std::accumulate(series.begin(), series.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double v : series) var += (v - out.mean) * (v - out.mean);
  var /= static_cast<double>(n - 1);
  out.iat = integrated_autocorr_time(series);
  out.ess = std::clamp(static_cast<double>(n) / out.iat, 1.0, static_cast<double>(n));
  out.std_error = std::sqrt(var / out.ess);
  return out;
}

MeanEstimate iid_mean(std::span<const double> values) {
  MeanEstimate out;
  const std::size_t n = values.size();
  if (n < 2) throw ArgumentError("iid_mean: need at least two values");
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double v : values) var += (v - out.mean) * (v - out.mean);
  var /= static_cast<double>(n - 1);
  out.std_error = std::sqrt(var / static_cast<double>(n));
  out.ess = static_cast<double>(n);
  out.iat = 1.0;
  return out;
}

std::optional<std::size_t> convergence_step(std::span<const double> running_mean, double oracle, double band,
                                            std::size_t hold) {
  std::size_t run = 0;
  for (std::size_t i = 0; i < running_mean.size(); ++i) {
    if (std::abs(running_mean[i] - oracle) <= band) {
      if (++run >= hold) return i + 1 - hold;
    } else {
      run = 0;
    }
  }
  return std::nullopt;
}

std::vector<double> mode_occupancy(const GmmSpec& spec, std::span<const Vec> samples) {
  std::vector<double> occ(spec.k(), 0.0);
  if (samples.empty()) return occ;
  for (const auto& x : samples) occ[mode_assign(spec, x)] += 1.0;
  for (double& o : occ) o /= static_cast<double>(samples.size());
  return occ;
}

std::vector<CostRow> benchmark_step_cost(std::span<const NamedKernel> kernels, std::size_t dim, std::size_t reps,
                                         std::size_t warmup, std::uint64_t seed) {
  if (reps == 0) throw ArgumentError("benchmark_step_cost: reps must be >= 1");
  std::vector<CostRow> rows;
  for (const auto& nk : kernels) {
    ChainState state = init_chain(*nk.kernel, Rng::derive(seed, "bench", rows.size()));
    for (std::size_t i = 0; i < warmup; ++i) nk.kernel->step(state, nk.config);
    std::vector<double> times(reps);
    for (auto& t : times) {
      const auto t0 = std::chrono::steady_clock::now();
      nk.kernel->step(state, nk.config);
      t = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    std::nth_element(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(reps / 2), times.end());
    rows.push_back({nk.name, dim, times[reps / 2], 0.0});
  }
  double fp = 0.0;
  for (const auto& r : rows) {
    if (r.method == "fp") fp = r.median_seconds;
  }
  for (auto& r : rows) r.ratio_vs_fp = fp > 0.0 ? r.median_seconds / fp : 0.0;
  return rows;
}

void write_histogram_csv(const EnergyHistogram& h, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  out << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) out << h.edges[b] << ',' << h.edges[b + 1] << ',' << h.counts[b] << '\n';
}

void write_running_mean_csv(std::span<const double> running_mean, const std::string& path, std::size_t first_step) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  out << "step,mean_energy\n";
  for (std::size_t i = 0; i < running_mean.size(); ++i) out << first_step + i << ',' << running_mean[i] << '\n';
}

void write_cost_csv(std::span<const CostRow> rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  out << "method,dim,median_s,ratio_vs_fp\n";
  for (const auto& r : rows) out << r.method << ',' << r.dim << ',' << r.median_seconds << ',' << r.ratio_vs_fp << '\n';
}

}  // namespace flowpert
