#include "flowpert/target_gmm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>

#include "flowpert/errors.hpp"

namespace flowpert {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_dim(const GmmSpec& spec, std::size_t n, const char* what) {
  if (n != spec.dim) {
    throw ArgumentError(std::string(what) + ": expected length " + std::to_string(spec.dim) + ", got " +
                        std::to_string(n));
  }
}

// Sum of logs of a positive sequence, computed through chunked products.
template <typename F>
double sum_log(std::size_t n, F&& term) {
  double acc = 0.0;
  double prod = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    prod *= term(i);
    if (prod > 1e150 || prod < 1e-150) {
      acc += std::log(prod);
      prod = 1.0;
    }
  }
  return acc + std::log(prod);
}

double component_log_pdf(const GmmSpec& spec, std::size_t j, std::span<const double> x) {
  const Vec& mu = spec.means[j];
  const Vec& d = spec.variances[j];
  double quad = 0.0;
  for (std::size_t i = 0; i < spec.dim; ++i) {
    const double r = x[i] - mu[i];
    quad += r * r / d[i];
  }
  const double logdet = sum_log(spec.dim, [&](std::size_t i) { return d[i]; });
  return -0.5 * (quad + logdet + static_cast<double>(spec.dim) * kLog2Pi);
}

}  // namespace

void GmmSpec::validate() const {
  if (dim == 0) throw ArgumentError("GmmSpec: dim must be positive");
  if (weights.empty()) throw ArgumentError("GmmSpec: at least one component required");
  if (means.size() != weights.size() || variances.size() != weights.size()) {
    throw ArgumentError("GmmSpec: weights, means and variances must have k entries");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ArgumentError("GmmSpec: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ArgumentError("GmmSpec: weights must sum to 1");
  for (std::size_t j = 0; j < weights.size(); ++j) {
    if (means[j].size() != dim || variances[j].size() != dim) {
      throw ArgumentError("GmmSpec: component " + std::to_string(j) + " has wrong length");
    }
    for (double v : variances[j]) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ArgumentError("GmmSpec: variances must be positive");
    }
    for (double m : means[j]) {
      if (!std::isfinite(m)) throw ArgumentError("GmmSpec: non-finite mean");
    }
  }
}

GmmSpec make_gmm(std::vector<double> weights, std::vector<Vec> means, std::vector<Vec> variances) {
  GmmSpec spec;
  spec.dim = means.empty() ? 0 : means.front().size();
  spec.weights = std::move(weights);
  spec.means = std::move(means);
  spec.variances = std::move(variances);
  spec.validate();
  return spec;
}

GmmSpec gmm_random(std::size_t dim, std::size_t k, Rng& rng, double mean_scale) {
  if (dim == 0 || k == 0) throw ArgumentError("gmm_random: dim and k must be >= 1");
  GmmSpec spec;
  spec.dim = dim;
  spec.weights.assign(k, 1.0 / static_cast<double>(k));
  spec.means.assign(k, Vec(dim));
  spec.variances.assign(k, Vec(dim));
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < dim; ++i) spec.means[j][i] = mean_scale * rng.normal();
    for (std::size_t i = 0; i < dim; ++i) spec.variances[j][i] = 0.4 + std::abs(0.1 + 0.5 * rng.normal());
  }
  // 1/k summed k times can miss 1 by a few ulps.
  spec.validate();
  return spec;
}

GmmSpec corrupt_gmm(const GmmSpec& target, double dirichlet_concentration, double mean_jitter, Rng& rng) {
  if (!(dirichlet_concentration > 0.0) || !(mean_jitter >= 0.0)) {
    throw ArgumentError("corrupt_gmm: concentration must be > 0 and jitter >= 0");
  }
  GmmSpec model = target;
  if (model.k() > 1) {
    std::gamma_distribution<double> gamma(dirichlet_concentration, 1.0);
    double total = 0.0;
    for (double& w : model.weights) {
      w = gamma(rng.engine());
      total += w;
    }
    for (double& w : model.weights) w /= total;
    // Renormalized Dirichlet draws sum to 1 within rounding; push the residue
    // into the largest weight.
    const double residue = 1.0 - std::accumulate(model.weights.begin(), model.weights.end(), 0.0);
    *std::max_element(model.weights.begin(), model.weights.end()) += residue;
  }
  for (auto& mu : model.means) {
    for (double& m : mu) m += mean_jitter * rng.normal();
  }
  model.validate();
  return model;
}

MixturePoint::MixturePoint(const GmmSpec& spec, std::span<const double> x, double sigma)
    : spec_(&spec), dim_(spec.dim) {
  check_dim(spec, x.size(), "MixturePoint");
  if (!(sigma >= 0.0)) throw ArgumentError("MixturePoint: sigma must be >= 0");
  const std::size_t k = spec.k();
  const double s2 = sigma * sigma;
  resp_.resize(k);
  grad_.resize(k * dim_);
  inv_var_.resize(k * dim_);
  for (std::size_t j = 0; j < k; ++j) {
    const Vec& mu = spec.means[j];
    const Vec& d = spec.variances[j];
    double* g = grad_.data() + j * dim_;
    double* iv = inv_var_.data() + j * dim_;
    double quad = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) {
      iv[i] = 1.0 / (d[i] + s2);
      const double r = x[i] - mu[i];
      g[i] = -r * iv[i];
      quad += r * r * iv[i];
    }
    const double logdet = sum_log(dim_, [&](std::size_t i) { return d[i] + s2; });
    resp_[j] = std::log(spec.weights[j]) - 0.5 * (quad + logdet + static_cast<double>(dim_) * kLog2Pi);
  }
  const double mx = *std::max_element(resp_.begin(), resp_.end());
  double total = 0.0;
  for (double& r : resp_) {
    r = std::exp(r - mx);
    total += r;
  }
  log_density_ = mx + std::log(total);
  for (double& r : resp_) r /= total;

  score_.assign(dim_, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    const double w = resp_[j];
    if (w == 0.0) continue;
    const double* g = grad_.data() + j * dim_;
    for (std::size_t i = 0; i < dim_; ++i) score_[i] += w * g[i];
  }
}

double MixturePoint::laplacian() const {
  double acc = 0.0;
  for (std::size_t j = 0; j < resp_.size(); ++j) {
    const double w = resp_[j];
    if (w == 0.0) continue;
    const double* g = grad_.data() + j * dim_;
    const double* iv = inv_var_.data() + j * dim_;
    double comp = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) comp += g[i] * g[i] - iv[i];
    acc += w * comp;
  }
  double s2 = 0.0;
  for (double s : score_) s2 += s * s;
  return acc - s2;
}

Vec MixturePoint::hvp(std::span<const double> u) const {
  if (u.size() != dim_) throw ArgumentError("hvp: probe has wrong length");
  Vec out(dim_, 0.0);
  for (std::size_t j = 0; j < resp_.size(); ++j) {
    const double w = resp_[j];
    if (w == 0.0) continue;
    const double* g = grad_.data() + j * dim_;
    const double* iv = inv_var_.data() + j * dim_;
    double gu = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) gu += g[i] * u[i];
    for (std::size_t i = 0; i < dim_; ++i) out[i] += w * (g[i] * gu - iv[i] * u[i]);
  }
  double su = 0.0;
  for (std::size_t i = 0; i < dim_; ++i) su += score_[i] * u[i];
  for (std::size_t i = 0; i < dim_; ++i) out[i] -= score_[i] * su;
  return out;
}

double MixturePoint::quadratic_form(std::span<const double> u) const {
  if (u.size() != dim_) throw ArgumentError("quadratic_form: probe has wrong length");
  double acc = 0.0;
  for (std::size_t j = 0; j < resp_.size(); ++j) {
    const double w = resp_[j];
    if (w == 0.0) continue;
    const double* g = grad_.data() + j * dim_;
    const double* iv = inv_var_.data() + j * dim_;
    double gu = 0.0;
    double uhu = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) {
      gu += g[i] * u[i];
      uhu += iv[i] * u[i] * u[i];
    }
    acc += w * (gu * gu - uhu);
  }
  double su = 0.0;
  for (std::size_t i = 0; i < dim_; ++i) su += score_[i] * u[i];
  return acc - su * su;
}

double log_density(const GmmSpec& spec, std::span<const double> x, double sigma) {
  check_dim(spec, x.size(), "log_density");
  if (sigma == 0.0) {
    // Energy-only path; skips the gradient buffers.
    const std::size_t k = spec.k();
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(k);
    for (std::size_t j = 0; j < k; ++j) {
      terms[j] = std::log(spec.weights[j]) + component_log_pdf(spec, j, x);
      mx = std::max(mx, terms[j]);
    }
    if (!std::isfinite(mx)) return mx;
    double total = 0.0;
    for (double t : terms) total += std::exp(t - mx);
    return mx + std::log(total);
  }
  return MixturePoint(spec, x, sigma).log_density();
}

Vec score_smoothed(const GmmSpec& spec, std::span<const double> x, double sigma) {
  return MixturePoint(spec, x, sigma).score();
}

double divergence_score_smoothed(const GmmSpec& spec, std::span<const double> x, double sigma) {
  return MixturePoint(spec, x, sigma).laplacian();
}

Vec hvp_score_smoothed(const GmmSpec& spec, std::span<const double> x, double sigma, std::span<const double> u) {
  check_dim(spec, u.size(), "hvp_score_smoothed");
  return MixturePoint(spec, x, sigma).hvp(u);
}

std::vector<Vec> sample_exact(const GmmSpec& spec, std::size_t n, Rng& rng) {
  if (n == 0) throw ArgumentError("sample_exact: n must be >= 1");
  std::discrete_distribution<std::size_t> pick(spec.weights.begin(), spec.weights.end());
  std::vector<Vec> out(n, Vec(spec.dim));
  for (auto& x : out) {
    const std::size_t j = pick(rng.engine());
    for (std::size_t i = 0; i < spec.dim; ++i) {
      x[i] = spec.means[j][i] + std::sqrt(spec.variances[j][i]) * rng.normal();
    }
  }
  return out;
}

std::size_t mode_assign(const GmmSpec& spec, std::span<const double> x) {
  check_dim(spec, x.size(), "mode_assign");
  std::size_t best = 0;
  double best_val = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < spec.k(); ++j) {
    const double v = std::log(spec.weights[j]) + component_log_pdf(spec, j, x);
    if (v > best_val) {
      best_val = v;
      best = j;
    }
  }
  return best;
}

nlohmann::json gmm_to_json(const GmmSpec& spec) {
  return nlohmann::json{{"dim", spec.dim},
                        {"k", spec.k()},
                        {"weights", spec.weights},
                        {"means", spec.means},
                        {"variances", spec.variances}};
}

GmmSpec gmm_from_json(const nlohmann::json& j) {
  GmmSpec spec;
  try {
    spec.dim = j.at("dim").get<std::size_t>();
    spec.weights = j.at("weights").get<std::vector<double>>();
    spec.means = j.at("means").get<std::vector<Vec>>();
    spec.variances = j.at("variances").get<std::vector<Vec>>();
    if (j.at("k").get<std::size_t>() != spec.weights.size()) throw ArgumentError("GmmSpec JSON: k mismatch");
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("GmmSpec JSON: ") + e.what());
  }
  spec.validate();
  return spec;
}

void save_gmm(const GmmSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << gmm_to_json(spec).dump(1) << '\n';
}

GmmSpec load_gmm(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("file not found: " + path);
  return gmm_from_json(nlohmann::json::parse(in));
}

}  // namespace flowpert
