#include "flowpert/ode_flow.hpp"

#include <cmath>

#include "flowpert/errors.hpp"

namespace flowpert {

namespace {

enum class Direction { generate, encode };

// Heun (explicit trapezoid) integration over the grid. `eval(x, t, v)` writes
// the velocity into v and returns the scalar rate accumulated alongside the
// state (the velocity divergence or an estimate of it; zero when unused).
template <typename Eval>
std::pair<Vec, double> heun(const TimeGrid& grid, Direction dir, std::span<const double> start, Eval&& eval) {
  const auto& pts = grid.points;
  const std::size_t n = pts.size();
  const std::size_t dim = start.size();
  Vec x(start.begin(), start.end());
  Vec v1(dim), v2(dim), xp(dim);
  double acc = 0.0;
  for (std::size_t s = 0; s + 1 < n; ++s) {
    const double t0 = dir == Direction::generate ? pts[n - 1 - s] : pts[s];
    const double t1 = dir == Direction::generate ? pts[n - 2 - s] : pts[s + 1];
    const double h = t1 - t0;
    const double r1 = eval(std::span<const double>(x), t0, v1);
    for (std::size_t i = 0; i < dim; ++i) xp[i] = x[i] + h * v1[i];
    const double r2 = eval(std::span<const double>(xp), t1, v2);
    bool finite = std::isfinite(r1) && std::isfinite(r2);
    for (std::size_t i = 0; i < dim; ++i) {
      x[i] += 0.5 * h * (v1[i] + v2[i]);
      finite = finite && std::isfinite(x[i]);
    }
    acc += 0.5 * h * (r1 + r2);
    if (!finite) throw NumericError("ODE integration produced a non-finite state", static_cast<std::ptrdiff_t>(s));
  }
  return {std::move(x), acc};
}

void set_velocity(const MixturePoint& mp, double t, Vec& v) {
  const Vec& s = mp.score();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = -t * s[i];
}

void check_len(const OdeFlow& flow, std::size_t n, const char* what) {
  if (n != flow.dim()) throw ArgumentError(std::string(what) + ": wrong input length");
}

}  // namespace

TimeGrid time_grid(double t_min, double t_max, std::size_t n_steps, double rho) {
  if (!(t_min > 0.0) || !(t_max > t_min) || n_steps < 2 || !(rho > 0.0)) {
    throw ArgumentError("time_grid: need 0 < t_min < t_max, n_steps >= 2, rho > 0");
  }
  TimeGrid g{t_min, t_max, n_steps, rho, {}};
  g.points.resize(n_steps);
  const double a = std::pow(t_min, 1.0 / rho);
  const double b = std::pow(t_max, 1.0 / rho);
  for (std::size_t i = 0; i < n_steps; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(n_steps - 1);
    g.points[i] = std::pow(a + frac * (b - a), rho);
  }
  g.points.front() = t_min;
  g.points.back() = t_max;
  for (std::size_t i = 1; i < n_steps; ++i) {
    if (!(g.points[i] > g.points[i - 1])) throw ArgumentError("time_grid: grid is not strictly increasing");
  }
  return g;
}

OdeFlow::OdeFlow(GmmSpec model, TimeGrid grid) : model_(std::move(model)), grid_(std::move(grid)) {
  model_.validate();
  if (grid_.points.size() != grid_.n_steps || grid_.n_steps < 2) {
    throw ArgumentError("OdeFlow: grid points missing; build the grid with time_grid()");
  }
}

Vec OdeFlow::forward(std::span<const double> z) const { return integrate_forward(*this, z); }
Vec OdeFlow::inverse(std::span<const double> x) const { return integrate_backward(*this, x); }

Vec velocity(const OdeFlow& flow, std::span<const double> x, double t) {
  check_len(flow, x.size(), "velocity");
  Vec v(x.size());
  set_velocity(MixturePoint(flow.model(), x, t), t, v);
  return v;
}

Vec integrate_forward(const OdeFlow& flow, std::span<const double> z) {
  check_len(flow, z.size(), "integrate_forward");
  auto eval = [&](std::span<const double> x, double t, Vec& v) {
    set_velocity(MixturePoint(flow.model(), x, t), t, v);
    return 0.0;
  };
  return heun(flow.grid(), Direction::generate, z, eval).first;
}

Vec integrate_backward(const OdeFlow& flow, std::span<const double> x) {
  check_len(flow, x.size(), "integrate_backward");
  auto eval = [&](std::span<const double> y, double t, Vec& v) {
    set_velocity(MixturePoint(flow.model(), y, t), t, v);
    return 0.0;
  };
  return heun(flow.grid(), Direction::encode, x, eval).first;
}

std::pair<Vec, double> integrate_with_divergence(const OdeFlow& flow, std::span<const double> z, DivergenceMode mode) {
  check_len(flow, z.size(), "integrate_with_divergence");
  const std::size_t dim = flow.dim();
  if (mode == DivergenceMode::analytic) {
    auto eval = [&](std::span<const double> x, double t, Vec& v) {
      const MixturePoint mp(flow.model(), x, t);
      set_velocity(mp, t, v);
      return -t * mp.laplacian();
    };
    return heun(flow.grid(), Direction::generate, z, eval);
  }
  // One full Hessian-vector product per coordinate, each re-evaluating the
  // mixture from scratch like a separate backward pass would.
  Vec basis(dim, 0.0);
  auto eval = [&](std::span<const double> x, double t, Vec& v) {
    set_velocity(MixturePoint(flow.model(), x, t), t, v);
    double trace = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      basis[i] = 1.0;
      trace += hvp_score_smoothed(flow.model(), x, t, basis)[i];
      basis[i] = 0.0;
    }
    return -t * trace;
  };
  return heun(flow.grid(), Direction::generate, z, eval);
}

std::pair<Vec, double> integrate_backward_with_divergence(const OdeFlow& flow, std::span<const double> x) {
  check_len(flow, x.size(), "integrate_backward_with_divergence");
  auto eval = [&](std::span<const double> y, double t, Vec& v) {
    const MixturePoint mp(flow.model(), y, t);
    set_velocity(mp, t, v);
    return -t * mp.laplacian();
  };
  return heun(flow.grid(), Direction::encode, x, eval);
}

std::pair<Vec, double> integrate_with_hutchinson(const OdeFlow& flow, std::span<const double> z, std::size_t n_probes,
                                                 Rng& rng, bool fixed_probes) {
  check_len(flow, z.size(), "integrate_with_hutchinson");
  if (n_probes == 0) throw ArgumentError("integrate_with_hutchinson: n_probes must be >= 1");
  const std::size_t dim = flow.dim();
  std::vector<Vec> probes(n_probes, Vec(dim));
  if (fixed_probes) {
    for (auto& u : probes) rng.fill_normal(u);
  }
  auto eval = [&](std::span<const double> x, double t, Vec& v) {
    const MixturePoint mp(flow.model(), x, t);
    set_velocity(mp, t, v);
    double est = 0.0;
    for (auto& u : probes) {
      if (!fixed_probes) rng.fill_normal(u);
      est += mp.quadratic_form(u);
    }
    return -t * est / static_cast<double>(n_probes);
  };
  return heun(flow.grid(), Direction::generate, z, eval);
}

double round_trip_rms(const FlowMap& flow, std::span<const Vec> zs) {
  double sq = 0.0;
  std::size_t count = 0;
  for (const Vec& z : zs) {
    const Vec back = flow.inverse(flow.forward(z));
    for (std::size_t i = 0; i < z.size(); ++i) sq += (back[i] - z[i]) * (back[i] - z[i]);
    count += z.size();
  }
  return count == 0 ? 0.0 : std::sqrt(sq / static_cast<double>(count));
}

}  // namespace flowpert
