#include "flowpert/batch.hpp"

#include <exception>

#include "flowpert/errors.hpp"

#ifdef FLOWPERT_HAVE_OPENMP
#include <omp.h>
#endif

namespace flowpert::batch {

namespace {

// Runs body(i) for i in [0, n) across threads; the first exception thrown by
// any item is rethrown on the calling thread.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
  std::exception_ptr error;
#ifdef FLOWPERT_HAVE_OPENMP
#pragma omp parallel for schedule(dynamic, 1)
#endif
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
#ifdef FLOWPERT_HAVE_OPENMP
#pragma omp critical(flowpert_batch_error)
#endif
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

void check_pairs(std::size_t a, std::size_t b) {
  if (a != b) throw ArgumentError("batch: z and eps batches differ in size");
}

}  // namespace

int max_threads() {
#ifdef FLOWPERT_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef FLOWPERT_HAVE_OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

std::vector<Vec> forward_serial(const FlowMap& flow, std::span<const Vec> zs) {
  std::vector<Vec> out(zs.size());
  for (std::size_t i = 0; i < zs.size(); ++i) out[i] = flow.forward(zs[i]);
  return out;
}

std::vector<Vec> forward_parallel(const FlowMap& flow, std::span<const Vec> zs) {
  std::vector<Vec> out(zs.size());
  parallel_for(zs.size(), [&](std::size_t i) { out[i] = flow.forward(zs[i]); });
  return out;
}

std::vector<double> energies_serial(const Target& target, std::span<const Vec> xs) {
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = target.energy(xs[i]);
  return out;
}

std::vector<double> energies_parallel(const Target& target, std::span<const Vec> xs) {
  std::vector<double> out(xs.size());
  parallel_for(xs.size(), [&](std::size_t i) { out[i] = target.energy(xs[i]); });
  return out;
}

std::vector<TrainingSample> training_samples_serial(const FlowMap& base, double sigma_f, std::span<const Vec> zs,
                                                    std::span<const Vec> epss) {
  check_pairs(zs.size(), epss.size());
  std::vector<TrainingSample> out(zs.size());
  for (std::size_t i = 0; i < zs.size(); ++i) out[i] = make_training_sample(base, sigma_f, zs[i], epss[i]);
  return out;
}

std::vector<TrainingSample> training_samples_parallel(const FlowMap& base, double sigma_f, std::span<const Vec> zs,
                                                      std::span<const Vec> epss) {
  check_pairs(zs.size(), epss.size());
  std::vector<TrainingSample> out(zs.size());
  parallel_for(zs.size(), [&](std::size_t i) { out[i] = make_training_sample(base, sigma_f, zs[i], epss[i]); });
  return out;
}

std::vector<TrajectoryRecord> trajectories_serial(const PerturbedFlow& pf, const Target& target,
                                                  const GaussianPrior& prior, std::span<const Vec> zs,
                                                  std::span<const Vec> epss) {
  check_pairs(zs.size(), epss.size());
  std::vector<TrajectoryRecord> out(zs.size());
  for (std::size_t i = 0; i < zs.size(); ++i) out[i] = make_trajectory(pf, target, prior, zs[i], epss[i]);
  return out;
}

std::vector<TrajectoryRecord> trajectories_parallel(const PerturbedFlow& pf, const Target& target,
                                                    const GaussianPrior& prior, std::span<const Vec> zs,
                                                    std::span<const Vec> epss) {
  check_pairs(zs.size(), epss.size());
  std::vector<TrajectoryRecord> out(zs.size());
  parallel_for(zs.size(), [&](std::size_t i) { out[i] = make_trajectory(pf, target, prior, zs[i], epss[i]); });
  return out;
}

std::vector<std::pair<Vec, double>> log_det_serial(const OdeFlow& flow, std::span<const Vec> zs, DivergenceMode mode) {
  std::vector<std::pair<Vec, double>> out(zs.size());
  for (std::size_t i = 0; i < zs.size(); ++i) out[i] = integrate_with_divergence(flow, zs[i], mode);
  return out;
}

std::vector<std::pair<Vec, double>> log_det_parallel(const OdeFlow& flow, std::span<const Vec> zs,
                                                     DivergenceMode mode) {
  std::vector<std::pair<Vec, double>> out(zs.size());
  parallel_for(zs.size(), [&](std::size_t i) { out[i] = integrate_with_divergence(flow, zs[i], mode); });
  return out;
}

namespace {

ChainRun run_one(const McConfig& config, const ChainKernel& kernel, const Rng& rng, const SinkFactory& sinks,
                 std::size_t i) {
  ChainRun run;
  run.state = init_chain(kernel, rng);
  run.trace = run_chain(config, kernel, run.state, sinks ? sinks(i) : nullptr);
  return run;
}

}  // namespace

std::vector<ChainRun> chains_serial(const McConfig& config, const ChainKernel& kernel, std::span<const Rng> rngs,
                                    const SinkFactory& sinks) {
  std::vector<ChainRun> out(rngs.size());
  for (std::size_t i = 0; i < rngs.size(); ++i) out[i] = run_one(config, kernel, rngs[i], sinks, i);
  return out;
}

std::vector<ChainRun> chains_parallel(const McConfig& config, const ChainKernel& kernel, std::span<const Rng> rngs,
                                      const SinkFactory& sinks) {
  std::vector<ChainRun> out(rngs.size());
  parallel_for(rngs.size(), [&](std::size_t i) { out[i] = run_one(config, kernel, rngs[i], sinks, i); });
  return out;
}

}  // namespace flowpert::batch
