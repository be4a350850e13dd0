#pragma once

#include <functional>
#include <span>
#include <vector>

#include "flowpert/flow_map.hpp"
#include "flowpert/ode_flow.hpp"
#include "flowpert/perturbation.hpp"
#include "flowpert/sampler_mc.hpp"
#include "flowpert/sigma_b.hpp"

namespace flowpert::batch {

// Data-parallel kernels over independent trajectories. Each *_parallel
// kernel distributes items across OpenMP threads and writes item i to slot i,
// so its output is bit-identical to the *_serial reference regardless of the
// thread count. Random draws always happen before the kernel, on the caller's
// stream.

/// Number of worker threads the parallel kernels use (1 without OpenMP).
int max_threads();
void set_threads(int n);

std::vector<Vec> forward_serial(const FlowMap& flow, std::span<const Vec> zs);
std::vector<Vec> forward_parallel(const FlowMap& flow, std::span<const Vec> zs);

std::vector<double> energies_serial(const Target& target, std::span<const Vec> xs);
std::vector<double> energies_parallel(const Target& target, std::span<const Vec> xs);

std::vector<TrainingSample> training_samples_serial(const FlowMap& base, double sigma_f, std::span<const Vec> zs,
                                                    std::span<const Vec> epss);
std::vector<TrainingSample> training_samples_parallel(const FlowMap& base, double sigma_f, std::span<const Vec> zs,
                                                      std::span<const Vec> epss);

std::vector<TrajectoryRecord> trajectories_serial(const PerturbedFlow& pf, const Target& target,
                                                  const GaussianPrior& prior, std::span<const Vec> zs,
                                                  std::span<const Vec> epss);
std::vector<TrajectoryRecord> trajectories_parallel(const PerturbedFlow& pf, const Target& target,
                                                    const GaussianPrior& prior, std::span<const Vec> zs,
                                                    std::span<const Vec> epss);

/// Divergence-integrated log-det of the ODE flow for many latents.
std::vector<std::pair<Vec, double>> log_det_serial(const OdeFlow& flow, std::span<const Vec> zs,
                                                   DivergenceMode mode = DivergenceMode::analytic);
std::vector<std::pair<Vec, double>> log_det_parallel(const OdeFlow& flow, std::span<const Vec> zs,
                                                     DivergenceMode mode = DivergenceMode::analytic);

struct ChainRun {
  ChainState state;
  ChainTrace trace;
};

/// Optional per-chain trace sink; may return nullptr.
using SinkFactory = std::function<TraceSink*(std::size_t chain)>;

/// Independent chains, one per RNG stream. Chains share only the immutable kernel.
std::vector<ChainRun> chains_serial(const McConfig& config, const ChainKernel& kernel, std::span<const Rng> rngs,
                                    const SinkFactory& sinks = {});
std::vector<ChainRun> chains_parallel(const McConfig& config, const ChainKernel& kernel, std::span<const Rng> rngs,
                                      const SinkFactory& sinks = {});

}  // namespace flowpert::batch
