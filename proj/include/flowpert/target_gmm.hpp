#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "flowpert/rng.hpp"

namespace flowpert {

using Vec = std::vector<double>;

/// Gaussian mixture with diagonal covariances. Immutable after validation.
struct GmmSpec {
  std::size_t dim = 0;
  std::vector<double> weights;
  std::vector<Vec> means;
  std::vector<Vec> variances;

  std::size_t k() const { return weights.size(); }

  /// Throws ArgumentError unless weights sum to one, shapes agree and all
  /// variances are positive.
  void validate() const;
};

GmmSpec make_gmm(std::vector<double> weights, std::vector<Vec> means, std::vector<Vec> variances);

/// Means ~ N(0, 1) per coordinate (times mean_scale), variances
/// 0.4 + |N(0.1, 0.5)| with 0.5 the standard deviation, equal weights.
GmmSpec gmm_random(std::size_t dim, std::size_t k, Rng& rng, double mean_scale = 1.0);

/// A controlled corruption of `target`: weights redrawn from a symmetric
/// Dirichlet(concentration), means jittered by N(0, mean_jitter^2).
GmmSpec corrupt_gmm(const GmmSpec& target, double dirichlet_concentration, double mean_jitter, Rng& rng);

/// log p(x; sigma), where p(.; sigma) inflates every covariance by sigma^2 I.
double log_density(const GmmSpec& spec, std::span<const double> x, double sigma = 0.0);

/// Boltzmann energy -log p(x).
inline double energy(const GmmSpec& spec, std::span<const double> x) { return -log_density(spec, x); }

Vec score_smoothed(const GmmSpec& spec, std::span<const double> x, double sigma);

/// Laplacian of log p(x; sigma).
double divergence_score_smoothed(const GmmSpec& spec, std::span<const double> x, double sigma);

/// Hessian of log p(x; sigma) applied to u.
Vec hvp_score_smoothed(const GmmSpec& spec, std::span<const double> x, double sigma, std::span<const double> u);

std::vector<Vec> sample_exact(const GmmSpec& spec, std::size_t n, Rng& rng);

/// Component with the largest pi_j N(x | mu_j, d_j); lowest index on ties.
std::size_t mode_assign(const GmmSpec& spec, std::span<const double> x);

/// Responsibilities and per-component log-density gradients of the smoothed
/// mixture at one point. Score, Laplacian and Hessian-vector products all
/// derive from the same evaluation, so callers that need several of them at
/// the same (x, sigma) evaluate once.
class MixturePoint {
 public:
  MixturePoint(const GmmSpec& spec, std::span<const double> x, double sigma);

  double log_density() const { return log_density_; }
  const Vec& score() const { return score_; }
  double laplacian() const;
  Vec hvp(std::span<const double> u) const;
  /// u^T H u without forming H u.
  double quadratic_form(std::span<const double> u) const;

 private:
  const GmmSpec* spec_;
  std::size_t dim_;
  double log_density_ = 0.0;
  std::vector<double> resp_;      // k responsibilities
  std::vector<double> grad_;      // k x D component gradients -(x-mu)/(d+s^2)
  std::vector<double> inv_var_;   // k x D 1/(d+s^2)
  Vec score_;
};

nlohmann::json gmm_to_json(const GmmSpec& spec);
GmmSpec gmm_from_json(const nlohmann::json& j);
void save_gmm(const GmmSpec& spec, const std::string& path);
GmmSpec load_gmm(const std::string& path);

}  // namespace flowpert
