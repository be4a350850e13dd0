#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "flowpert/diagnostics.hpp"
#include "flowpert/errors.hpp"

using namespace flowpert;

TEST_CASE("running_mean_energy") {
  const std::vector<double> flat(50, 3.25);
  for (double v : running_mean_energy(flat)) CHECK(v == 3.25);

  Rng rng(1);
  std::vector<double> e(1000);
  for (double& v : e) v = rng.normal() * 3.0 + 1.0;
  const auto rm = running_mean_energy(e);
  for (std::size_t n : {0u, 1u, 10u, 999u}) {
    double s = 0.0;
    for (std::size_t i = 0; i <= n; ++i) s += e[i];
    CHECK(rm[n] == doctest::Approx(s / static_cast<double>(n + 1)).epsilon(1e-12));
  }

  // Recombining interleaved subsequences gives the same overall mean.
  std::vector<double> even, odd;
  for (std::size_t i = 0; i < e.size(); ++i) (i % 2 ? odd : even).push_back(e[i]);
  const double recombined = (running_mean_energy(even).back() * even.size() + running_mean_energy(odd).back() * odd.size()) /
                            static_cast<double>(e.size());
  CHECK(recombined == doctest::Approx(rm.back()).epsilon(1e-12));
  CHECK_THROWS_AS(running_mean_energy(std::span<const double>{}), ArgumentError);
}

TEST_CASE("histogram") {
  const std::vector<double> same(100, 0.55);
  const EnergyHistogram h1 = histogram(same, 10, 0.0, 1.0);
  CHECK(h1.counts[5] == 100);
  CHECK(h1.total() == 100);

  Rng rng(2);
  std::vector<double> u(100000);
  for (double& v : u) v = rng.uniform();
  u.push_back(-1.0);
  u.push_back(2.0);
  u.push_back(1.0);
  const EnergyHistogram h = histogram(u, 20, 0.0, 1.0);
  const double expected = 100000.0 / 20.0;
  const double sd = std::sqrt(100000.0 * (1.0 / 20.0) * (19.0 / 20.0));
  std::size_t in_range = 0;
  for (std::size_t c : h.counts) {
    CHECK(std::abs(static_cast<double>(c) - expected) < 4.0 * sd + 1.0);
    in_range += c;
  }
  CHECK(h.underflow == 1);
  CHECK(h.overflow == 1);
  CHECK(in_range + h.underflow + h.overflow == u.size());
  for (std::size_t i = 1; i < h.edges.size(); ++i) CHECK(h.edges[i] > h.edges[i - 1]);

  // Order independence.
  std::vector<double> rev(u.rbegin(), u.rend());
  CHECK(histogram(rev, 20, 0.0, 1.0).counts == h.counts);

  const auto dens = h.density();
  double integral = 0.0;
  for (std::size_t i = 0; i < dens.size(); ++i) integral += dens[i] * (h.edges[i + 1] - h.edges[i]);
  CHECK(integral == doctest::Approx(100001.0 / 100003.0).epsilon(1e-12));

  CHECK_THROWS_AS(histogram(u, 0, 0.0, 1.0), ArgumentError);
  CHECK_THROWS_AS(histogram(u, 5, 1.0, 1.0), ArgumentError);
  CHECK_THROWS_AS(histogram(u, 5, 0.0, std::nan("")), ArgumentError);
}

TEST_CASE("ess") {
  Rng rng(3);
  const std::size_t n = 20000;
  std::vector<double> iid(n);
  for (double& v : iid) v = rng.normal();
  const double e_iid = ess(iid);
  MESSAGE("iid ess / n = " << e_iid / n);
  CHECK(e_iid >= 0.8 * n);
  CHECK(e_iid <= 1.2 * n);

  const std::vector<double> flat(500, 4.0);
  CHECK(ess(flat) <= 2.0);
  CHECK(ess(flat) >= 1.0);

  const std::size_t m = 200000;
  std::vector<double> ar(m);
  double x = 0.0;
  for (double& v : ar) {
    x = 0.9 * x + std::sqrt(1.0 - 0.81) * rng.normal();
    v = x;
  }
  const double ratio = ess(ar) / static_cast<double>(m);
  MESSAGE("AR(1) 0.9 ess / n = " << ratio << " (analytic " << 0.1 / 1.9 << ")");
  CHECK(ratio > (0.1 / 1.9) / 1.5);
  CHECK(ratio < (0.1 / 1.9) * 1.5);

  // ESS stays in [1, n] for an alternating series.
  std::vector<double> alt(100);
  for (std::size_t i = 0; i < alt.size(); ++i) alt[i] = (i % 2) ? 1.0 : -1.0;
  CHECK(ess(alt) <= 100.0);
  CHECK(ess(alt) >= 1.0);

  CHECK_THROWS_AS(ess(std::vector<double>(9, 1.0)), ArgumentError);
}

TEST_CASE("mean estimates") {
  Rng rng(4);
  std::vector<double> v(5000);
  for (double& x : v) x = 2.0 + rng.normal();
  const MeanEstimate a = iid_mean(v);
  CHECK(a.mean == doctest::Approx(std::accumulate(v.begin(), v.end(), 0.0) / 5000.0));
  CHECK(a.std_error == doctest::Approx(1.0 / std::sqrt(5000.0)).epsilon(0.05));
  const MeanEstimate b = mean_with_error(v);
  CHECK(b.std_error == doctest::Approx(a.std_error).epsilon(0.2));
}

TEST_CASE("convergence_step") {
  std::vector<double> rm(2000, 0.0);
  for (std::size_t i = 0; i < rm.size(); ++i) rm[i] = i < 300 ? 5.0 : 1.0;
  rm[700] = 5.0;
  const auto c = convergence_step(rm, 1.0, 0.1, 500);
  REQUIRE(c.has_value());
  CHECK(*c == 701);
  CHECK_FALSE(convergence_step(std::vector<double>(400, 1.0), 1.0, 0.1, 500).has_value());
}

TEST_CASE("mode_occupancy") {
  Rng rng(5);
  const GmmSpec g = gmm_random(4, 4, rng, 8.0);
  const auto xs = sample_exact(g, 40000, rng);
  const auto occ = mode_occupancy(g, xs);
  REQUIRE(occ.size() == 4);
  for (double o : occ) CHECK(std::abs(o - 0.25) < 0.02);
  CHECK(std::accumulate(occ.begin(), occ.end(), 0.0) == doctest::Approx(1.0));
}

TEST_CASE("benchmark_step_cost and csv writers") {
  const std::size_t d = 3;
  auto id = std::make_shared<AffineFlow>(AffineFlow::identity(d));
  const Target target{make_gmm({1.0}, {Vec(d, 0.0)}, {Vec(d, 1.0)}), 0.0};
  const GaussianPrior prior{1.0, 0.0};
  const FpKernel fp(PerturbedFlow{id, 0.1, std::make_shared<ConstantBackwardScale>(0.1)}, target, prior);
  const DeterministicKernel bf(Method::bfjacob, d, affine_with_log_det(*id), target, prior);
  McConfig cf;
  cf.k_update = 1;
  McConfig cb = cf;
  cb.method = Method::bfjacob;
  const NamedKernel ks[] = {{"fp", &fp, cf}, {"bfjacob", &bf, cb}};
  const auto rows = benchmark_step_cost(ks, d, 200, 20, 7);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].ratio_vs_fp == 1.0);
  CHECK(rows[1].median_seconds > 0.0);

  const auto dir = std::filesystem::temp_directory_path() / "flowpert_diag_test";
  std::filesystem::create_directories(dir);
  write_cost_csv(rows, (dir / "cost.csv").string());
  write_histogram_csv(histogram(std::vector<double>{0.1, 0.2}, 2, 0.0, 1.0), (dir / "hist.csv").string());
  write_running_mean_csv(std::vector<double>{1.0, 2.0}, (dir / "rm.csv").string(), 10);
  std::ifstream in(dir / "cost.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "method,dim,median_s,ratio_vs_fp");
  std::ifstream rmf(dir / "rm.csv");
  std::string l1, l2;
  std::getline(rmf, l1);
  std::getline(rmf, l2);
  CHECK(l1 == "step,mean_energy");
  CHECK(l2.rfind("10,", 0) == 0);
  std::filesystem::remove_all(dir);
}
