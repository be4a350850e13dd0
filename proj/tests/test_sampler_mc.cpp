#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "flowpert/diagnostics.hpp"
#include "flowpert/errors.hpp"
#include "flowpert/sampler_mc.hpp"
#include "test_support.hpp"

using namespace flowpert;

namespace {

// Small 2-D problem with an imperfect model flow.
struct Problem {
  GmmSpec target_spec;
  GmmSpec model;
  std::shared_ptr<OdeFlow> flow;
  Target target;
  GaussianPrior prior{15.0, 0.0};
  double oracle_mean = 0.0;
  double oracle_sd = 0.0;

  Problem() {
    target_spec = make_gmm({0.35, 0.65}, {{-1.5, 0.8}, {1.2, -0.6}}, {{0.5, 0.7}, {0.6, 0.4}});
    model = make_gmm({0.55, 0.45}, {{-1.2, 0.6}, {1.5, -0.3}}, {{0.5, 0.7}, {0.6, 0.4}});
    flow = std::make_shared<OdeFlow>(model, time_grid(0.01, 15.0, 100, 3.0));
    target = Target{target_spec, 0.0};
    Rng rng(1);
    const auto xs = sample_exact(target_spec, 400000, rng);
    double m = 0.0, m2 = 0.0;
    for (const auto& x : xs) {
      const double e = target.energy(x);
      m += e;
      m2 += e * e;
    }
    oracle_mean = m / static_cast<double>(xs.size());
    oracle_sd = std::sqrt(m2 / static_cast<double>(xs.size()) - oracle_mean * oracle_mean);
  }

  FpKernel fp_kernel(double sigma_f = 0.01) const {
    return FpKernel(PerturbedFlow{flow, sigma_f, std::make_shared<ConstantBackwardScale>(sigma_f)}, target, prior);
  }
};

const Problem& problem() {
  static const Problem p;
  return p;
}

McConfig config(std::size_t k, std::size_t n, std::size_t burn, Method m = Method::fp) {
  McConfig c;
  c.k_update = k;
  c.n_steps = n;
  c.burn_in = burn;
  c.method = m;
  return c;
}

std::vector<bool> accepted_flags(const ChainTrace& t) {
  std::vector<bool> out;
  for (const auto& r : t.steps) out.push_back(r.accepted);
  return out;
}

double log_normal_iso(std::span<const double> v, std::span<const double> mean, double s) {
  double r2 = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) r2 += (v[i] - mean[i]) * (v[i] - mean[i]);
  const double d = static_cast<double>(v.size());
  return -0.5 * r2 / (s * s) - d * std::log(s) - 0.5 * d * std::log(2.0 * std::numbers::pi);
}

}  // namespace

TEST_CASE("propose_partial") {
  Rng rng(3);
  const GaussianPrior prior{2.0, 0.0};
  const std::size_t d = 20;
  const Vec z = prior.sample(d, rng);
  const Vec eps = rng.normal_vector(d);

  auto [z1, e1] = propose_partial(z, eps, 1, prior, rng);
  std::size_t same = 0;
  for (std::size_t i = 0; i < d; ++i) same += z1[i] == z[i];
  CHECK(same == d - 1);
  same = 0;
  for (std::size_t i = 0; i < d; ++i) same += e1[i] == eps[i];
  CHECK(same == d - 1);

  auto [zd, ed] = propose_partial(z, eps, d, prior, rng);
  for (std::size_t i = 0; i < d; ++i) {
    CHECK(zd[i] != z[i]);
    CHECK(ed[i] != eps[i]);
  }

  CHECK_THROWS_AS(propose_partial(z, eps, 0, prior, rng), ArgumentError);
  CHECK_THROWS_AS(propose_partial(z, eps, d + 1, prior, rng), ArgumentError);

  const int n = 100000;
  std::vector<double> freq_z(d, 0.0), freq_e(d, 0.0);
  std::size_t overlap = 0;
  for (int r = 0; r < n; ++r) {
    auto [zp, ep] = propose_partial(z, eps, 5, prior, rng);
    for (std::size_t i = 0; i < d; ++i) {
      freq_z[i] += zp[i] != z[i];
      freq_e[i] += ep[i] != eps[i];
      overlap += (zp[i] != z[i]) && (ep[i] != eps[i]);
    }
  }
  const double p = 5.0 / static_cast<double>(d);
  const double tol = 3.0 * std::sqrt(p * (1.0 - p) / n);
  for (std::size_t i = 0; i < d; ++i) {
    CHECK(std::abs(freq_z[i] / n - p) < tol);
    CHECK(std::abs(freq_e[i] / n - p) < tol);
  }
  // Independent index sets: expected overlap k^2 / D per proposal.
  CHECK(static_cast<double>(overlap) / n == doctest::Approx(25.0 / d).epsilon(0.02));

  std::size_t shared_mismatch = 0;
  for (int r = 0; r < 1000; ++r) {
    auto [zp, ep] = propose_partial(z, eps, 5, prior, rng, true);
    for (std::size_t i = 0; i < d; ++i) shared_mismatch += (zp[i] != z[i]) != (ep[i] != eps[i]);
  }
  CHECK(shared_mismatch == 0);

  const Vec empty;
  auto [zn, en] = propose_partial(z, empty, 3, prior, rng);
  CHECK(en.empty());
}

TEST_CASE("accept") {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) CHECK(accept(1.3, 1.3, rng));
  int hits = 0;
  for (int i = 0; i < 100000; ++i) hits += accept(0.2, 0.2 + std::log(2.0), rng);
  CHECK(std::abs(hits / 1e5 - 0.5) < 0.005);
  for (int i = 0; i < 1000; ++i) {
    CHECK_FALSE(accept(0.0, std::numeric_limits<double>::infinity(), rng));
    CHECK_FALSE(accept(0.0, std::nan(""), rng));
  }
  // Huge work differences must not overflow.
  CHECK(accept(1e308, -1e308, rng));
  CHECK_FALSE(accept(-1e308, 1e308, rng));
}

TEST_CASE("config validation") {
  McConfig c;
  c.k_update = 0;
  CHECK_THROWS_AS(c.validate(4), ArgumentError);
  c.k_update = 5;
  CHECK_THROWS_AS(c.validate(4), ArgumentError);
  c.k_update = 2;
  c.thinning = 0;
  CHECK_THROWS_AS(c.validate(4), ArgumentError);
  c.thinning = 1;
  c.method = Method::hutch;
  c.hutch_probes = 0;
  CHECK_THROWS_AS(c.validate(4), ArgumentError);
  CHECK(method_from_name("bfjacob") == Method::bfjacob);
  CHECK(method_name(Method::direct) == "direct");
  CHECK_THROWS(method_from_name("nope"));
}

TEST_CASE("near-perfect flow accepts almost everything") {
  const std::size_t d = 4;
  auto id = std::make_shared<AffineFlow>(AffineFlow::identity(d));
  const Target target{make_gmm({1.0}, {Vec(d, 0.0)}, {Vec(d, 1.0)}), 0.0};
  const FpKernel kernel(PerturbedFlow{id, 1e-3, std::make_shared<ConstantBackwardScale>(1e-3)}, target,
                        GaussianPrior{1.0, 0.0});
  ChainState state = init_chain(kernel, Rng(7));
  const ChainTrace trace = run_chain(config(2, 10000, 0), kernel, state);
  CHECK(trace.accept_rate > 0.99);
}

TEST_CASE("perfect deterministic flow accepts every proposal") {
  const AffineFlow flow({1.5, 0.5, -2.0}, {0.0, 1.0, 0.0});
  const GaussianPrior prior{1.0, 0.0};
  const DeterministicKernel kernel(Method::bfjacob, 3, affine_with_log_det(flow),
                                   Target{affine_pushforward(flow, prior.scale), 0.0}, prior);
  ChainState state = init_chain(kernel, Rng(8));
  const ChainTrace trace = run_chain(config(1, 2000, 0, Method::bfjacob), kernel, state);
  CHECK(trace.accept_rate == 1.0);
}

TEST_CASE("fp chain reaches the exact mean energy") {
  const Problem& p = problem();
  const FpKernel kernel = p.fp_kernel();
  ChainState a = init_chain(kernel, Rng::derive(11, "chain", 0));
  ChainState b = init_chain(kernel, Rng::derive(11, "chain", 1));
  const ChainTrace ta = run_chain(config(1, 20000, 2000), kernel, a);
  const ChainTrace tb = run_chain(config(1, 20000, 2000), kernel, b);
  MESSAGE("fp: " << ta.mean_energy << " +- " << ta.energy_std_error << " (oracle " << p.oracle_mean
                 << ", accept " << ta.accept_rate << ")");
  CHECK(std::abs(ta.mean_energy - p.oracle_mean) < 2.0 * ta.energy_std_error);
  CHECK(std::abs(ta.mean_energy - tb.mean_energy) < 3.0 * std::hypot(ta.energy_std_error, tb.energy_std_error));
  CHECK(verify_state(a, kernel) < 1e-9);
}

TEST_CASE("bfjacob chain reaches the exact mean energy; hutch1 reported") {
  const Problem& p = problem();
  const DeterministicKernel bf(Method::bfjacob, 2, bfjacob_log_det(p.flow), p.target, p.prior);
  ChainState s = init_chain(bf, Rng(12));
  const ChainTrace t = run_chain(config(1, 20000, 2000, Method::bfjacob), bf, s);
  MESSAGE("bfjacob: " << t.mean_energy << " +- " << t.energy_std_error << " (oracle " << p.oracle_mean << ")");
  CHECK(std::abs(t.mean_energy - p.oracle_mean) < 2.0 * t.energy_std_error);
  CHECK(verify_state(s, bf) < 1e-9);

  McConfig hc = config(1, 20000, 2000, Method::hutch);
  hc.hutch_probes = 1;
  const DeterministicKernel h1(Method::hutch, 2, hutchinson_log_det(p.flow, 1), p.target, p.prior);
  ChainState hs = init_chain(h1, Rng(12));
  const ChainTrace ht = run_chain(hc, h1, hs);
  MESSAGE("hutch1: " << ht.mean_energy << " +- " << ht.energy_std_error << ", |error| "
                     << std::abs(ht.mean_energy - p.oracle_mean) << " vs bfjacob "
                     << std::abs(t.mean_energy - p.oracle_mean));
}

TEST_CASE("direct sampling follows the model, not the target") {
  const Problem& p = problem();
  const DirectKernel kernel(p.flow, p.target, p.prior);
  ChainState s = init_chain(kernel, Rng(13));
  const ChainTrace t = run_chain(config(1, 5000, 0, Method::direct), kernel, s);
  CHECK(std::isnan(t.steps.back().work));
  CHECK(t.ess > 2500.0);
}

TEST_CASE("reproducibility and constant-shift invariance") {
  const Problem& p = problem();
  const FpKernel kernel = p.fp_kernel();
  ChainState a = init_chain(kernel, Rng(21));
  ChainState b = init_chain(kernel, Rng(21));
  const auto fa = accepted_flags(run_chain(config(1, 500, 0), kernel, a));
  const auto fb = accepted_flags(run_chain(config(1, 500, 0), kernel, b));
  CHECK(fa == fb);

  const FpKernel shifted(PerturbedFlow{p.flow, 0.01, std::make_shared<ConstantBackwardScale>(0.01)},
                         Target{p.target_spec, 123.25}, GaussianPrior{15.0, -40.5});
  ChainState c = init_chain(shifted, Rng(21));
  CHECK(accepted_flags(run_chain(config(1, 500, 0), shifted, c)) == fa);
}

TEST_CASE("n_steps = 0 keeps only the initial state") {
  const FpKernel kernel = problem().fp_kernel();
  ChainState s = init_chain(kernel, Rng(2));
  const ChainTrace t = run_chain(config(1, 0, 0), kernel, s);
  CHECK(t.steps.size() == 1);
  CHECK(t.steps[0].step == 0);
}

TEST_CASE("checkpoint round trip resumes identically") {
  const FpKernel kernel = problem().fp_kernel();
  ChainState s = init_chain(kernel, Rng(31));
  run_chain(config(1, 50, 0), kernel, s);
  const std::string text = checkpoint_to_json(s).dump();
  ChainState r = checkpoint_from_json(nlohmann::json::parse(text));
  CHECK(r.rng == s.rng);
  CHECK(r.current.work == s.current.work);
  CHECK(r.step == s.step);
  const ChainTrace t1 = run_chain(config(1, 200, 0), kernel, s);
  const ChainTrace t2 = run_chain(config(1, 200, 0), kernel, r);
  REQUIRE(t1.steps.size() == t2.steps.size());
  for (std::size_t i = 0; i < t1.steps.size(); ++i) {
    CHECK(t1.steps[i].work == t2.steps[i].work);
    CHECK(t1.steps[i].accepted == t2.steps[i].accepted);
  }
  CHECK(r.current.z == s.current.z);
}

TEST_CASE("trace sink writes csv and samples") {
  const FpKernel kernel = problem().fp_kernel();
  ChainState s = init_chain(kernel, Rng(41));
  std::ostringstream csv, jsonl;
  StreamTraceSink sink(csv, &jsonl, Method::fp);
  McConfig c = config(1, 20, 5);
  c.thinning = 4;
  const ChainTrace t = run_chain(c, kernel, s, &sink);
  const std::string out = csv.str();
  CHECK(out.rfind("step,W,energy,accepted\n", 0) == 0);
  CHECK(std::count(out.begin(), out.end(), '\n') == 1 + 26);
  CHECK(t.samples.size() == 5);
  const std::string js = jsonl.str();
  CHECK(std::count(js.begin(), js.end(), '\n') == 5);
}

TEST_CASE("stationarity from an exact target sample") {
  const Problem& p = problem();
  const FpKernel kernel = p.fp_kernel();
  Rng rng(51);
  const Vec x = sample_exact(p.target_spec, 1, rng)[0];
  const Vec eps = rng.normal_vector(2);
  Vec shifted = x;
  for (std::size_t i = 0; i < 2; ++i) shifted[i] -= 0.01 * eps[i];
  const Vec z = p.flow->inverse(shifted);
  ChainState s;
  s.rng = Rng(52);
  s.method = Method::fp;
  s.current = kernel.evaluate(z, eps, s.rng);
  CHECK(std::abs(s.current.x[0] - x[0]) < 1e-4);  // Heun round trip
  const ChainTrace t = run_chain(config(1, 10000, 0), kernel, s);
  MESSAGE("stationary start: " << t.mean_energy << " +- " << t.energy_std_error << " (oracle " << p.oracle_mean << ")");
  CHECK(std::abs(t.mean_energy - p.oracle_mean) < 3.0 * t.energy_std_error);
  const auto rm = running_mean_energy(t);
  const std::size_t half = rm.size() / 2;
  CHECK(std::abs(rm[half] - p.oracle_mean) < 3.0 * t.energy_std_error * std::sqrt(2.0));
}

TEST_CASE("path-probability audit along a chain") {
  // Re-drives the fp move from public pieces and checks every proposed/current
  // pair against log-densities assembled from scratch.
  const Problem& p = problem();
  const double sf = 0.05, sb = 0.04;
  const PerturbedFlow pf{p.flow, sf, std::make_shared<ConstantBackwardScale>(sb)};
  const FpKernel kernel(pf, p.target, p.prior);
  McConfig c = config(1, 1000, 0);

  ChainState ref = init_chain(kernel, Rng(61));
  ChainState mine = ref;
  const ChainTrace trace = run_chain(c, kernel, ref);

  auto log_target = [&](const TrajectoryRecord& g) {
    return std::log(test::naive_density(p.target_spec, g.x)) + log_normal_iso(g.z, p.flow->inverse(g.x), sb);
  };
  auto log_prop = [&](const TrajectoryRecord& g) {
    const Vec zero(2, 0.0);
    return log_normal_iso(g.z, zero, p.prior.scale) + log_normal_iso(g.x, p.flow->forward(g.z), sf);
  };
  std::size_t audited = 0;
  double worst = 0.0;
  std::vector<bool> flags = {false};
  for (std::size_t n = 0; n < 1000; ++n) {
    auto [z2, e2] = propose_partial(mine.current.z, mine.current.eps, 1, p.prior, mine.rng);
    const TrajectoryRecord trial = make_trajectory(pf, p.target, p.prior, z2, e2);
    const TrajectoryRecord& cur = mine.current;
    const double expected = (log_target(cur) + log_prop(trial)) - (log_target(trial) + log_prop(cur));
    if (std::isfinite(expected)) {
      worst = std::max(worst, std::abs((trial.work - cur.work) - expected));
      ++audited;
    }
    const bool ok = accept(cur.work, trial.work, mine.rng);
    flags.push_back(ok);
    if (ok) mine.current = trial;
  }
  MESSAGE("audited " << audited << " pairs, worst deviation " << worst);
  CHECK(audited > 990);
  CHECK(worst < 1e-9);
  CHECK(flags == accepted_flags(trace));
}
