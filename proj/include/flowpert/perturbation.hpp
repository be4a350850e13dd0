#pragma once

#include <memory>
#include <span>
#include <string>

#include "json.hpp"

#include "flowpert/flow_map.hpp"
#include "flowpert/rng.hpp"
#include "flowpert/target_gmm.hpp"

namespace flowpert {

/// Isotropic Gaussian prior N(0, scale^2 I). energy() is the exact negative
/// log-density plus an optional constant shift.
struct GaussianPrior {
  double scale = 1.0;
  double shift = 0.0;

  double energy(std::span<const double> z) const;
  double sample_coordinate(Rng& rng) const { return scale * rng.normal(); }
  Vec sample(std::size_t dim, Rng& rng) const;
};

/// Target Boltzmann energy u_X = -log p(x) + shift.
struct Target {
  GmmSpec spec;
  double shift = 0.0;

  double energy(std::span<const double> x) const { return flowpert::energy(spec, x) + shift; }
};

/// Backward noise scale at one point: either a scalar multiple of the
/// identity or an explicit diagonal.
struct BackwardScaleValue {
  double scalar = 0.0;
  Vec diagonal;

  bool is_diagonal() const { return !diagonal.empty(); }
  double at(std::size_t i) const { return diagonal.empty() ? scalar : diagonal[i]; }
  /// log det of the scale matrix in dimension dim.
  double log_det(std::size_t dim) const;
};

/// sigma_b(x). Implementations must return strictly positive scales.
class BackwardScale {
 public:
  virtual ~BackwardScale() = default;
  virtual BackwardScaleValue at(std::span<const double> x) const = 0;
};

class ConstantBackwardScale final : public BackwardScale {
 public:
  explicit ConstantBackwardScale(double value) : value_(value) {}
  BackwardScaleValue at(std::span<const double>) const override { return {value_, {}}; }

 private:
  double value_;
};

/// Fixed per-coordinate scale (the exact backward scale of an affine flow).
class DiagonalBackwardScale final : public BackwardScale {
 public:
  explicit DiagonalBackwardScale(Vec diagonal) : diagonal_(std::move(diagonal)) {}
  BackwardScaleValue at(std::span<const double>) const override { return {0.0, diagonal_}; }

 private:
  Vec diagonal_;
};

/// Base flow with forward noise scale sigma_f I and backward scale sigma_b(x).
struct PerturbedFlow {
  std::shared_ptr<const FlowMap> base;
  double sigma_f = 0.01;
  std::shared_ptr<const BackwardScale> sigma_b;

  std::size_t dim() const { return base->dim(); }
};

/// One perturbed trajectory z -> x together with its work decomposition.
struct TrajectoryRecord {
  Vec z;
  Vec eps;
  Vec x;
  Vec eps_back;
  double delta_s = 0.0;
  double u_x = 0.0;
  double u_z = 0.0;
  double work = 0.0;
};

nlohmann::json trajectory_to_json(const TrajectoryRecord& rec);
TrajectoryRecord trajectory_from_json(const nlohmann::json& j);

/// x = f(z) + sigma_f eps.
Vec forward_perturbed(const PerturbedFlow& pf, std::span<const double> z, std::span<const double> eps);

/// eps_back = (z - f_inv_x) / sigma_b, coordinate-wise.
Vec recover_backward_noise(std::span<const double> z, std::span<const double> f_inv_x, const BackwardScaleValue& sb);

/// Runs the inverse flow at x and divides by sigma_b(x).
Vec recover_backward_noise(const PerturbedFlow& pf, std::span<const double> z, std::span<const double> x);

/// (|eps|^2 - |eps_back|^2)/2 + D log(sigma_f / sigma_b).
double entropy_term(std::span<const double> eps, std::span<const double> eps_back, double sigma_f, double sigma_b_at_x,
                    std::size_t dim);

/// Same with a possibly diagonal backward scale.
double entropy_term(std::span<const double> eps, std::span<const double> eps_back, double sigma_f,
                    const BackwardScaleValue& sb);

/// Builds the trajectory: forward map, fresh inverse integration, backward
/// noise, entropy and W = u_X(x) - u_Z(z) - dS.
TrajectoryRecord make_trajectory(const PerturbedFlow& pf, const Target& target, const GaussianPrior& prior,
                                 std::span<const double> z, std::span<const double> eps);

/// W = u_X(f(z)) - u_Z(z) - delta_s_jacobian for the unperturbed trajectory.
double deterministic_work(const FlowMap& flow, const Target& target, const GaussianPrior& prior,
                          std::span<const double> z, double delta_s_jacobian);

/// Same, with f(z) already computed.
double deterministic_work_at(std::span<const double> x, const Target& target, const GaussianPrior& prior,
                             std::span<const double> z, double delta_s_jacobian);

/// Result of the sigma_f sanity check against flow round-trip error.
struct SigmaFCheck {
  double round_trip_rms = 0.0;
  bool ok = true;  // sigma_f >= 10 x round-trip error
};

SigmaFCheck check_sigma_f(const FlowMap& flow, double sigma_f, const GaussianPrior& prior, Rng& rng,
                          std::size_t n_draws = 64);

}  // namespace flowpert
