#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "flowpert/flow_map.hpp"
#include "flowpert/rng.hpp"
#include "flowpert/target_gmm.hpp"

namespace flowpert {

/// Power-law time discretization t_i = (t_min^{1/rho} + (i-1)/(N-1) (t_max^{1/rho} - t_min^{1/rho}))^rho.
struct TimeGrid {
  double t_min = 0.01;
  double t_max = 15.0;
  std::size_t n_steps = 100;
  double rho = 3.0;
  std::vector<double> points;  // increasing, points.front() == t_min, points.back() == t_max
};

TimeGrid time_grid(double t_min, double t_max, std::size_t n_steps, double rho);

/// How the velocity divergence is evaluated along a trajectory.
enum class DivergenceMode {
  analytic,        // closed-form Laplacian of the mixture log-density
  per_coordinate,  // D Hessian-vector products with basis vectors (one pass per coordinate)
};

/// Probability-flow ODE dx/dt = -t * grad log p(x; t) for a Gaussian-mixture
/// model, integrated with Heun's method. forward() runs t_max -> t_min
/// (generation), inverse() runs t_min -> t_max.
class OdeFlow final : public FlowMap {
 public:
  OdeFlow(GmmSpec model, TimeGrid grid);

  std::size_t dim() const override { return model_.dim; }
  Vec forward(std::span<const double> z) const override;
  Vec inverse(std::span<const double> x) const override;

  const GmmSpec& model() const { return model_; }
  const TimeGrid& grid() const { return grid_; }

 private:
  GmmSpec model_;
  TimeGrid grid_;
};

Vec velocity(const OdeFlow& flow, std::span<const double> x, double t);

Vec integrate_forward(const OdeFlow& flow, std::span<const double> z);
Vec integrate_backward(const OdeFlow& flow, std::span<const double> x);

/// f(z) together with log|det df/dz| from the trapezoidal integral of the
/// velocity divergence, sharing the Heun stage points.
std::pair<Vec, double> integrate_with_divergence(const OdeFlow& flow, std::span<const double> z,
                                                 DivergenceMode mode = DivergenceMode::analytic);

/// Inverse direction: f^{-1}(x) and log|det df^{-1}/dx|.
std::pair<Vec, double> integrate_backward_with_divergence(const OdeFlow& flow, std::span<const double> x);

/// f(z) with the divergence replaced by the Hutchinson estimate
/// (1/n) sum u^T (dv/dx) u over standard-normal probes. Probes are redrawn at
/// every evaluation point unless fixed_probes is set, in which case one probe
/// set is drawn per call.
std::pair<Vec, double> integrate_with_hutchinson(const OdeFlow& flow, std::span<const double> z, std::size_t n_probes,
                                                 Rng& rng, bool fixed_probes = false);

/// Root-mean-square of f^{-1}(f(z)) - z over the given latent points.
double round_trip_rms(const FlowMap& flow, std::span<const Vec> zs);

}  // namespace flowpert
