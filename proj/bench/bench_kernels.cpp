// Serial vs OpenMP timings for the batch kernels. Every parallel result is
// checked bit-for-bit against the serial reference before it is timed.
#include <chrono>
#include <cstring>
#include <iomanip>
#include <iostream>

#include "CLI11.hpp"
#include "flowpert/batch.hpp"

using namespace flowpert;

namespace {

template <class F>
double best_seconds(int reps, F&& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

bool same(const Vec& a, const Vec& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}
bool same(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

void report(const std::string& name, double serial, double parallel, bool match) {
  std::cout << std::left << std::setw(18) << name << std::right << std::fixed << std::setprecision(4) << std::setw(10)
            << serial << std::setw(10) << parallel << std::setprecision(2) << std::setw(9) << serial / parallel
            << (match ? "   identical" : "   MISMATCH") << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"batch kernel benchmark"};
  std::size_t dim = 16, n = 256, chains = 8, steps = 200;
  int reps = 3, threads = 0;
  app.add_option("--dim", dim);
  app.add_option("--n", n, "trajectories per batch");
  app.add_option("--chains", chains);
  app.add_option("--steps", steps, "steps per chain");
  app.add_option("--reps", reps);
  app.add_option("--threads", threads, "0 = OpenMP default");
  CLI11_PARSE(app, argc, argv);
  if (threads > 0) batch::set_threads(threads);

  Rng rng(2024);
  const GmmSpec target_spec = gmm_random(dim, 4, rng, 3.0);
  auto ode = std::make_shared<const OdeFlow>(corrupt_gmm(target_spec, 10.0, 0.3, rng), time_grid(0.01, 15.0, 100, 3.0));
  const Target target{target_spec, 0.0};
  const GaussianPrior prior{15.0, 0.0};
  std::vector<Vec> zs, epss;
  for (std::size_t i = 0; i < n; ++i) {
    zs.push_back(prior.sample(dim, rng));
    epss.push_back(rng.normal_vector(dim));
  }
  const PerturbedFlow pf{ode, 0.01, std::make_shared<ConstantBackwardScale>(0.01)};
  bool all_ok = true;

  std::cout << "dim " << dim << ", batch " << n << ", threads " << batch::max_threads() << "\n";
  std::cout << std::left << std::setw(18) << "kernel" << std::right << std::setw(10) << "serial" << std::setw(10)
            << "parallel" << std::setw(9) << "speedup" << "\n";

  {
    std::vector<Vec> s, p;
    const double ts = best_seconds(reps, [&] { s = batch::forward_serial(*ode, zs); });
    const double tp = best_seconds(reps, [&] { p = batch::forward_parallel(*ode, zs); });
    bool ok = true;
    for (std::size_t i = 0; i < n; ++i) ok = ok && same(s[i], p[i]);
    report("forward", ts, tp, ok);
    all_ok = all_ok && ok;
  }
  {
    std::vector<TrajectoryRecord> s, p;
    const double ts = best_seconds(reps, [&] { s = batch::trajectories_serial(pf, target, prior, zs, epss); });
    const double tp = best_seconds(reps, [&] { p = batch::trajectories_parallel(pf, target, prior, zs, epss); });
    bool ok = true;
    for (std::size_t i = 0; i < n; ++i) ok = ok && same(s[i].work, p[i].work);
    report("trajectories", ts, tp, ok);
    all_ok = all_ok && ok;
  }
  {
    std::vector<TrainingSample> s, p;
    const double ts = best_seconds(reps, [&] { s = batch::training_samples_serial(*ode, 0.01, zs, epss); });
    const double tp = best_seconds(reps, [&] { p = batch::training_samples_parallel(*ode, 0.01, zs, epss); });
    bool ok = true;
    for (std::size_t i = 0; i < n; ++i) ok = ok && same(s[i].residual, p[i].residual);
    report("training_samples", ts, tp, ok);
    all_ok = all_ok && ok;
  }
  for (auto mode : {DivergenceMode::analytic, DivergenceMode::per_coordinate}) {
    const std::span<const Vec> sub(zs.data(), mode == DivergenceMode::analytic ? n : std::min<std::size_t>(n, 32));
    std::vector<std::pair<Vec, double>> s, p;
    const double ts = best_seconds(reps, [&] { s = batch::log_det_serial(*ode, sub, mode); });
    const double tp = best_seconds(reps, [&] { p = batch::log_det_parallel(*ode, sub, mode); });
    bool ok = true;
    for (std::size_t i = 0; i < sub.size(); ++i) ok = ok && same(s[i].second, p[i].second);
    report(mode == DivergenceMode::analytic ? "log_det" : "log_det_percoord", ts, tp, ok);
    all_ok = all_ok && ok;
  }
  {
    McConfig mc;
    mc.n_steps = steps;
    mc.burn_in = steps / 10;
    mc.k_update = std::min<std::size_t>(5, dim);
    const FpKernel kernel(pf, target, prior);
    std::vector<Rng> rngs;
    for (std::size_t c = 0; c < chains; ++c) rngs.push_back(Rng::derive(7, "chain", c));
    std::vector<batch::ChainRun> s, p;
    const double ts = best_seconds(1, [&] { s = batch::chains_serial(mc, kernel, rngs); });
    const double tp = best_seconds(1, [&] { p = batch::chains_parallel(mc, kernel, rngs); });
    bool ok = true;
    for (std::size_t c = 0; c < chains; ++c) ok = ok && same(s[c].trace.mean_energy, p[c].trace.mean_energy);
    report("chains", ts, tp, ok);
    all_ok = all_ok && ok;
  }
  return all_ok ? 0 : 1;
}
