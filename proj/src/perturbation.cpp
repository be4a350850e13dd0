#include "flowpert/perturbation.hpp"

#include <cmath>
#include <iostream>

#include "flowpert/errors.hpp"
#include "flowpert/ode_flow.hpp"

namespace flowpert {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double a : v) s += a * a;
  return s;
}

void check_scale(const BackwardScaleValue& sb, std::size_t dim) {
  if (sb.is_diagonal()) {
    if (sb.diagonal.size() != dim) throw ArgumentError("backward scale: diagonal has wrong length");
    for (std::size_t i = 0; i < dim; ++i) {
      if (!(sb.diagonal[i] > 0.0) || !std::isfinite(sb.diagonal[i])) {
        throw NumericError("backward scale is not positive", static_cast<std::ptrdiff_t>(i));
      }
    }
  } else if (!(sb.scalar > 0.0) || !std::isfinite(sb.scalar)) {
    throw NumericError("backward scale is not positive");
  }
}

}  // namespace

double GaussianPrior::energy(std::span<const double> z) const {
  const double n = static_cast<double>(z.size());
  return squared_norm(z) / (2.0 * scale * scale) + 0.5 * n * (kLog2Pi + 2.0 * std::log(scale)) + shift;
}

Vec GaussianPrior::sample(std::size_t dim, Rng& rng) const {
  Vec z(dim);
  for (double& v : z) v = sample_coordinate(rng);
  return z;
}

double BackwardScaleValue::log_det(std::size_t dim) const {
  if (!is_diagonal()) return static_cast<double>(dim) * std::log(scalar);
  double acc = 0.0;
  for (double d : diagonal) acc += std::log(d);
  return acc;
}

nlohmann::json trajectory_to_json(const TrajectoryRecord& rec) {
  return nlohmann::json{{"z", rec.z},           {"eps", rec.eps},   {"x", rec.x},     {"eps_back", rec.eps_back},
                        {"delta_s", rec.delta_s}, {"u_x", rec.u_x}, {"u_z", rec.u_z}, {"work", rec.work}};
}

TrajectoryRecord trajectory_from_json(const nlohmann::json& j) {
  TrajectoryRecord rec;
  rec.z = j.at("z").get<Vec>();
  rec.eps = j.at("eps").get<Vec>();
  rec.x = j.at("x").get<Vec>();
  rec.eps_back = j.at("eps_back").get<Vec>();
  rec.delta_s = j.at("delta_s").get<double>();
  rec.u_x = j.at("u_x").get<double>();
  rec.u_z = j.at("u_z").get<double>();
  rec.work = j.at("work").get<double>();
  return rec;
}

Vec forward_perturbed(const PerturbedFlow& pf, std::span<const double> z, std::span<const double> eps) {
  if (z.size() != pf.dim() || eps.size() != pf.dim()) throw ArgumentError("forward_perturbed: wrong length");
  Vec x = pf.base->forward(z);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += pf.sigma_f * eps[i];
  return x;
}

Vec recover_backward_noise(std::span<const double> z, std::span<const double> f_inv_x, const BackwardScaleValue& sb) {
  if (z.size() != f_inv_x.size()) throw ArgumentError("recover_backward_noise: wrong length");
  check_scale(sb, z.size());
  Vec out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = (z[i] - f_inv_x[i]) / sb.at(i);
  return out;
}

Vec recover_backward_noise(const PerturbedFlow& pf, std::span<const double> z, std::span<const double> x) {
  if (z.size() != pf.dim() || x.size() != pf.dim()) throw ArgumentError("recover_backward_noise: wrong length");
  return recover_backward_noise(z, pf.base->inverse(x), pf.sigma_b->at(x));
}

double entropy_term(std::span<const double> eps, std::span<const double> eps_back, double sigma_f, double sigma_b_at_x,
                    std::size_t dim) {
  // Difference of logs keeps the term exactly antisymmetric under swapping the two processes.
  return 0.5 * (squared_norm(eps) - squared_norm(eps_back)) +
         static_cast<double>(dim) * (std::log(sigma_f) - std::log(sigma_b_at_x));
}

double entropy_term(std::span<const double> eps, std::span<const double> eps_back, double sigma_f,
                    const BackwardScaleValue& sb) {
  const std::size_t dim = eps.size();
  if (!sb.is_diagonal()) return entropy_term(eps, eps_back, sigma_f, sb.scalar, dim);
  return 0.5 * (squared_norm(eps) - squared_norm(eps_back)) + static_cast<double>(dim) * std::log(sigma_f) -
         sb.log_det(dim);
}

TrajectoryRecord make_trajectory(const PerturbedFlow& pf, const Target& target, const GaussianPrior& prior,
                                 std::span<const double> z, std::span<const double> eps) {
  if (!(pf.sigma_f > 0.0)) throw ArgumentError("make_trajectory: sigma_f must be positive");
  TrajectoryRecord rec;
  rec.z.assign(z.begin(), z.end());
  rec.eps.assign(eps.begin(), eps.end());
  rec.x = forward_perturbed(pf, z, eps);
  const BackwardScaleValue sb = pf.sigma_b->at(rec.x);
  rec.eps_back = recover_backward_noise(z, pf.base->inverse(rec.x), sb);
  rec.delta_s = entropy_term(rec.eps, rec.eps_back, pf.sigma_f, sb);
  rec.u_x = target.energy(rec.x);
  rec.u_z = prior.energy(z);
  rec.work = rec.u_x - rec.u_z - rec.delta_s;
  return rec;
}

double deterministic_work_at(std::span<const double> x, const Target& target, const GaussianPrior& prior,
                             std::span<const double> z, double delta_s_jacobian) {
  return target.energy(x) - prior.energy(z) - delta_s_jacobian;
}

double deterministic_work(const FlowMap& flow, const Target& target, const GaussianPrior& prior,
                          std::span<const double> z, double delta_s_jacobian) {
  const Vec x = flow.forward(z);
  return deterministic_work_at(x, target, prior, z, delta_s_jacobian);
}

SigmaFCheck check_sigma_f(const FlowMap& flow, double sigma_f, const GaussianPrior& prior, Rng& rng,
                          std::size_t n_draws) {
  std::vector<Vec> zs;
  zs.reserve(n_draws);
  for (std::size_t i = 0; i < n_draws; ++i) zs.push_back(prior.sample(flow.dim(), rng));
  SigmaFCheck out;
  out.round_trip_rms = round_trip_rms(flow, zs);
  out.ok = sigma_f >= 10.0 * out.round_trip_rms;
  if (!out.ok) {
    std::cerr << "warning: sigma_f = " << sigma_f << " is below 10x the flow round-trip error ("
              << out.round_trip_rms << "); the forward noise is comparable to integration error\n";
  }
  return out;
}

}  // namespace flowpert
