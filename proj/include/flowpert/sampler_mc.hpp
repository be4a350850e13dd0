#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "flowpert/ode_flow.hpp"
#include "flowpert/perturbation.hpp"
#include "flowpert/reference_flows.hpp"
#include "flowpert/rng.hpp"

namespace flowpert {

enum class Method { fp, bfjacob, hutch, direct };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

struct McConfig {
  std::size_t k_update = 5;
  std::size_t n_steps = 1000;
  std::size_t thinning = 1;
  std::size_t burn_in = 100;
  Method method = Method::fp;
  std::size_t hutch_probes = 0;
  bool fixed_probes = false;
  /// Draw one index set and use it for both z and eps.
  bool shared_indices = false;
  DivergenceMode divergence = DivergenceMode::analytic;

  void validate(std::size_t dim) const;
};

/// Metropolis chain over trajectories. For deterministic methods the record's
/// eps/eps_back are empty and delta_s is the (estimated) Jacobian log-det.
struct ChainState {
  TrajectoryRecord current;
  Rng rng;
  Method method = Method::fp;
  std::size_t step = 0;
  std::size_t accepts = 0;
  std::size_t rejects = 0;
  std::size_t nonfinite_rejects = 0;

  double accept_rate() const {
    const std::size_t n = accepts + rejects;
    return n == 0 ? 0.0 : static_cast<double>(accepts) / static_cast<double>(n);
  }
};

nlohmann::json checkpoint_to_json(const ChainState& state);
ChainState checkpoint_from_json(const nlohmann::json& j);

/// Resamples k coordinates of z from the prior marginal and, independently
/// (or on the same indices when shared), k coordinates of eps from N(0, 1).
/// An empty eps stays empty.
std::pair<Vec, Vec> propose_partial(std::span<const double> z, std::span<const double> eps, std::size_t k,
                                    const GaussianPrior& prior, Rng& rng, bool shared_indices = false);

/// Metropolis test in log space: draws u ~ U(0,1) and accepts iff
/// log u < state_w - trial_w. A non-finite trial work is always rejected.
bool accept(double state_w, double trial_w, Rng& rng);

/// f(z) together with a log|det df/dz| value (exact or estimated).
using FlowWithLogDet = std::function<std::pair<Vec, double>(std::span<const double> z, Rng& rng)>;

FlowWithLogDet bfjacob_log_det(std::shared_ptr<const OdeFlow> flow, DivergenceMode mode = DivergenceMode::analytic);
FlowWithLogDet hutchinson_log_det(std::shared_ptr<const OdeFlow> flow, std::size_t n_probes, bool fixed_probes = false);
FlowWithLogDet affine_with_log_det(AffineFlow flow);

/// One move of a chain: proposes, evaluates and accepts or rejects.
class ChainKernel {
 public:
  virtual ~ChainKernel() = default;
  virtual Method method() const = 0;
  virtual std::size_t dim() const = 0;
  /// Fresh trajectory from the prior (and forward noise for fp).
  virtual TrajectoryRecord initial(Rng& rng) const = 0;
  /// Rebuilds the record for (z, eps); used for verification and restarts.
  virtual TrajectoryRecord evaluate(std::span<const double> z, std::span<const double> eps, Rng& rng) const = 0;
  virtual void step(ChainState& state, const McConfig& config) const = 0;
};

class FpKernel final : public ChainKernel {
 public:
  FpKernel(PerturbedFlow pf, Target target, GaussianPrior prior);
  Method method() const override { return Method::fp; }
  std::size_t dim() const override { return pf_.dim(); }
  TrajectoryRecord initial(Rng& rng) const override;
  TrajectoryRecord evaluate(std::span<const double> z, std::span<const double> eps, Rng& rng) const override;
  void step(ChainState& state, const McConfig& config) const override;

  const PerturbedFlow& perturbed_flow() const { return pf_; }
  const Target& target() const { return target_; }
  const GaussianPrior& prior() const { return prior_; }

 private:
  PerturbedFlow pf_;
  Target target_;
  GaussianPrior prior_;
};

class DeterministicKernel final : public ChainKernel {
 public:
  DeterministicKernel(Method method, std::size_t dim, FlowWithLogDet flow, Target target, GaussianPrior prior);
  Method method() const override { return method_; }
  std::size_t dim() const override { return dim_; }
  TrajectoryRecord initial(Rng& rng) const override;
  TrajectoryRecord evaluate(std::span<const double> z, std::span<const double> eps, Rng& rng) const override;
  void step(ChainState& state, const McConfig& config) const override;

 private:
  Method method_;
  std::size_t dim_;
  FlowWithLogDet flow_;
  Target target_;
  GaussianPrior prior_;
};

/// Independent draws x = f(z), z ~ prior, no accept/reject: the raw flow
/// distribution. The record's work field holds NaN.
class DirectKernel final : public ChainKernel {
 public:
  DirectKernel(std::shared_ptr<const FlowMap> flow, Target target, GaussianPrior prior);
  Method method() const override { return Method::direct; }
  std::size_t dim() const override { return flow_->dim(); }
  TrajectoryRecord initial(Rng& rng) const override;
  TrajectoryRecord evaluate(std::span<const double> z, std::span<const double> eps, Rng& rng) const override;
  void step(ChainState& state, const McConfig& config) const override;

 private:
  std::shared_ptr<const FlowMap> flow_;
  Target target_;
  GaussianPrior prior_;
};

inline void step_fp(ChainState& state, const FpKernel& kernel, const McConfig& config) { kernel.step(state, config); }
inline void step_deterministic(ChainState& state, const DeterministicKernel& kernel, const McConfig& config) {
  kernel.step(state, config);
}

ChainState init_chain(const ChainKernel& kernel, Rng rng);

struct StepRecord {
  std::size_t step = 0;
  double work = 0.0;
  double energy = 0.0;
  bool accepted = false;
};

struct ChainTrace {
  Method method = Method::fp;
  std::size_t burn_in = 0;
  std::vector<StepRecord> steps;  // steps[0] is the initial state
  std::vector<Vec> samples;       // thinned post-burn-in x
  std::vector<std::size_t> sample_steps;
  double accept_rate = 0.0;
  std::size_t nonfinite_rejects = 0;
  double mean_energy = 0.0;       // post-burn-in
  double energy_std_error = 0.0;  // from the integrated autocorrelation time
  double ess = 0.0;
  double iat = 0.0;
  double wall_seconds = 0.0;

  /// Post-burn-in energy series.
  std::vector<double> energies() const;
};

/// Receives rows as they are produced, so partial traces survive failures.
class TraceSink {
 public:
  virtual ~TraceSink() = default;
  virtual void row(const StepRecord& rec, Method method) = 0;
  virtual void sample(std::size_t step, std::span<const double> x) = 0;
  virtual void flush() = 0;
};

/// CSV (step,W,energy,accepted; direct: step,energy) plus JSONL samples.
class StreamTraceSink final : public TraceSink {
 public:
  StreamTraceSink(std::ostream& csv, std::ostream* samples_jsonl, Method method);
  void row(const StepRecord& rec, Method method) override;
  void sample(std::size_t step, std::span<const double> x) override;
  void flush() override;

 private:
  std::ostream& csv_;
  std::ostream* jsonl_;
};

/// Runs burn_in + n_steps moves from `state`, recording every step, and
/// computes the post-burn-in summary statistics.
ChainTrace run_chain(const McConfig& config, const ChainKernel& kernel, ChainState& state, TraceSink* sink = nullptr);

/// |stored W - recomputed W| for the chain's current trajectory.
double verify_state(const ChainState& state, const ChainKernel& kernel);

}  // namespace flowpert
