#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "flowpert/errors.hpp"
#include "flowpert/experiment.hpp"

using namespace flowpert;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& sub) const { return (path / sub).string(); }
};

std::string slurp(const std::string& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.seed = 9;
  c.target.dim = 2;
  c.target.k = 2;
  c.target.mean_scale = 2.0;
  c.sigma_b.hidden = 8;
  c.sigma_b.blocks = 1;
  c.sigma_b.train.iterations = 50;
  c.sigma_b.train.batch_size = 32;
  c.sigma_b.held_out = 100;
  c.sampler.mc.k_update = 1;
  c.sampler.mc.n_steps = 300;
  c.sampler.mc.burn_in = 30;
  c.diag.oracle_samples = 20000;
  return c;
}

}  // namespace

TEST_CASE("config json round trip") {
  ExperimentConfig c = small_config();
  c.sampler.mc.method = Method::hutch;
  c.sampler.mc.hutch_probes = 10;
  c.sigma_b.train.optimizer = OptimizerKind::sgd;
  c.sweep = {"sigma_f", {1e-4, 1e-2}};
  const auto j = config_to_json(c);
  const ExperimentConfig back = config_from_json(j);
  CHECK(config_to_json(back).dump() == j.dump());
}

TEST_CASE("strict parsing") {
  CHECK_NOTHROW(config_from_json(nlohmann::json::object()));
  CHECK_THROWS_AS(config_from_json({{"sigma_ff", 0.1}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"sampler", {{"kupdate", 3}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"sigma_b", {{"train", {{"lr", 0.1}}}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"sigma_f", "small"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"schema_version", 2}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"sampler", {{"method", "hutch"}}}}), ConfigError);
  CHECK_NOTHROW(config_from_json({{"sampler", {{"method", "hutch"}, {"hutch_probes", 1}}}}));
  CHECK_THROWS_AS(config_from_json({{"sampler", {{"method", "metropolis"}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"sigma_f", -1.0}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"flow", {{"kind", "spline"}}}}), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("component streams are independent and labelled") {
  const ExperimentConfig c = small_config();
  Rng a = component_rng(c, "chain", 0), b = component_rng(c, "chain", 1), t = component_rng(c, "target-gen");
  const double va = a.normal(), vb = b.normal(), vt = t.normal();
  CHECK(va != vb);
  CHECK(va != vt);
  Rng a2 = component_rng(c, "chain", 0);
  CHECK(a2.normal() == va);
}

TEST_CASE("gen-target") {
  TempDir tmp("flowpert_cfg_gen");
  ExperimentConfig c = small_config();
  c.target.dim = 1000;
  c.target.k = 10;
  cmd_gen_target(c, tmp.str("a"));
  cmd_gen_target(c, tmp.str("b"));
  const GmmSpec g = load_gmm(tmp.str("a/target.json"));
  CHECK(g.dim == 1000);
  CHECK(g.k() == 10);
  CHECK(load_gmm(tmp.str("a/model.json")).k() == 10);
  CHECK(slurp(tmp.str("a/target.json")) == slurp(tmp.str("b/target.json")));
  CHECK(slurp(tmp.str("a/model.json")) == slurp(tmp.str("b/model.json")));

  c.target.dim = 2;
  c.target.k = 1;
  cmd_gen_target(c, tmp.str("c"));
  CHECK(load_gmm(tmp.str("c/target.json")).weights == std::vector<double>{1.0});
}

TEST_CASE("train-sigb") {
  TempDir tmp("flowpert_cfg_train");
  ExperimentConfig c = small_config();
  c.target.file = tmp.str("missing.json");
  CHECK_THROWS_WITH_AS(cmd_train_sigb(c, tmp.str("t")), doctest::Contains("file not found"), ConfigError);

  // Identity-flow control: the optimum is sigma_b = sigma_f.
  c = small_config();
  c.target.dim = 4;
  c.flow.kind = "identity";
  c.sigma_b.train.iterations = 300;
  const TrainOutcome o = cmd_train_sigb(c, tmp.str("id"));
  CHECK(o.held_out.mean < 1e-2 * 4);
  std::ifstream csv(tmp.str("id/loss.csv"));
  std::size_t lines = 0;
  for (std::string l; std::getline(csv, l);) ++lines;
  CHECK(lines == o.result.loss_history.size() + 1);
  CHECK(fs::exists(tmp.str("id/manifest.json")));
  CHECK(fs::exists(tmp.str("id/resolved_config.json")));
}

TEST_CASE("sample: direct traces carry no accept/reject fields; reruns are bit-identical") {
  TempDir tmp("flowpert_cfg_sample");
  ExperimentConfig c = small_config();
  c.sampler.mc.method = Method::direct;
  cmd_sample(c, tmp.str("d"));
  std::ifstream in(tmp.str("d/chain_0/trace.csv"));
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,energy");

  c.sampler.mc.method = Method::fp;
  c.sigma_b.kind = "constant";
  c.sampler.n_chains = 2;
  cmd_sample(c, tmp.str("r1"));
  const ExperimentConfig again = load_config(tmp.str("r1/resolved_config.json"));
  cmd_sample(again, tmp.str("r2"));
  for (const char* f : {"chain_0/trace.csv", "chain_1/trace.csv", "chain_1/samples.jsonl"}) {
    CHECK(slurp(tmp.str(std::string("r1/") + f)) == slurp(tmp.str(std::string("r2/") + f)));
  }
  CHECK(slurp(tmp.str("r1/chain_0/trace.csv")) != slurp(tmp.str("r1/chain_1/trace.csv")));

  c.sigma_b.kind = "net";
  CHECK_THROWS_AS(cmd_sample(c, tmp.str("n")), ConfigError);
}

TEST_CASE("sweep") {
  TempDir tmp("flowpert_cfg_sweep");
  ExperimentConfig c = small_config();
  c.sigma_b.kind = "constant";
  c.sweep.axis = "k_update";
  CHECK_THROWS_AS(cmd_sweep(c, tmp.str("e")), ArgumentError);

  c.sweep.values = {1.0, 7.0, 2.0};  // K = 7 exceeds D = 2
  const SweepOutcome o = cmd_sweep(c, tmp.str("k"));
  REQUIRE(o.rows.size() == 3);
  CHECK(o.rows[0].ok);
  CHECK_FALSE(o.rows[1].ok);
  CHECK(o.rows[2].ok);
  CHECK(fs::exists(tmp.str("k/summary.csv")));
  CHECK(fs::exists(tmp.str("k/cell_0/histogram.csv")));
}

TEST_CASE("diag on a sample run") {
  TempDir tmp("flowpert_cfg_diag");
  ExperimentConfig c = small_config();
  c.sigma_b.kind = "constant";
  cmd_sample(c, tmp.str("run"));
  const auto report = cmd_diag(c, tmp.str("run"), tmp.str("diag"));
  CHECK(report.at("chains").size() == 1);
  CHECK(report.at("chains")[0].contains("mode_occupancy"));
  CHECK(fs::exists(tmp.str("diag/running_mean_chain_0.csv")));
  CHECK(fs::exists(tmp.str("diag/histogram_oracle.csv")));
}
