#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "flowpert/errors.hpp"
#include "flowpert/experiment.hpp"

using namespace flowpert;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  int threads = 0;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "Experiment config (JSON)");
  app->add_option("--seed", c.seed, "Master seed (overrides the config)");
  app->add_option("--out", c.out, "Output directory (overrides the config)");
  app->add_option("--threads", c.threads, "Worker thread cap")->check(CLI::NonNegativeNumber);
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (c.threads > 0) batch::set_threads(c.threads);
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flow-perturbation Monte Carlo experiments"};
  app.require_subcommand(1);

  Common gen_c, train_c, sample_c, sweep_c, diag_c, bench_c;
  std::optional<std::size_t> gen_dim, gen_k;
  std::string sample_sigb;
  std::string sweep_axis;
  std::vector<double> sweep_values;
  std::string diag_run;
  std::vector<std::size_t> bench_dims;

  auto* gen = app.add_subcommand("gen-target", "Generate a random target mixture and its corrupted model");
  add_common(gen, gen_c);
  gen->add_option("--dim", gen_dim, "Dimension");
  gen->add_option("--k", gen_k, "Number of components");

  auto* trn = app.add_subcommand("train-sigb", "Train the backward-scale network");
  add_common(trn, train_c);

  auto* smp = app.add_subcommand("sample", "Run Monte Carlo chains");
  add_common(smp, sample_c);
  smp->add_option("--sigma-b", sample_sigb, "Trained sigma_b parameters (overrides the config)");

  auto* swp = app.add_subcommand("sweep", "Sweep sigma_f or k_update");
  add_common(swp, sweep_c);
  swp->add_option("--axis", sweep_axis, "sigma_f or k_update");
  swp->add_option("--values", sweep_values, "Values to sweep");

  auto* dia = app.add_subcommand("diag", "Diagnostics for a finished sample run");
  add_common(dia, diag_c);
  dia->add_option("--run", diag_run, "Run directory written by sample")->required();

  auto* bch = app.add_subcommand("bench", "Per-step cost of each method");
  add_common(bch, bench_c);
  bch->add_option("--dims", bench_dims, "Dimensions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      ExperimentConfig cfg = resolve(gen_c);
      if (gen_dim) cfg.target.dim = *gen_dim;
      if (gen_k) cfg.target.k = *gen_k;
      cmd_gen_target(cfg, cfg.out_dir);
      std::cout << "wrote " << cfg.out_dir << "/target.json and model.json\n";
    } else if (*trn) {
      const ExperimentConfig cfg = resolve(train_c);
      const TrainOutcome o = cmd_train_sigb(cfg, cfg.out_dir);
      std::cout << "trained " << o.result.loss_history.size() << " iterations in " << o.result.wall_seconds
                << " s; held-out loss " << o.held_out.mean << " +- " << o.held_out.std_error << '\n';
    } else if (*smp) {
      ExperimentConfig cfg = resolve(sample_c);
      if (!sample_sigb.empty()) cfg.sigma_b.params_file = sample_sigb;
      const SampleOutcome o = cmd_sample(cfg, cfg.out_dir);
      std::cout << "<E> = " << o.pooled.mean << " +- " << o.pooled.std_error << " over " << o.runs.size()
                << " chain(s)\n";
    } else if (*swp) {
      ExperimentConfig cfg = resolve(sweep_c);
      if (!sweep_axis.empty()) cfg.sweep.axis = sweep_axis;
      if (!sweep_values.empty()) cfg.sweep.values = sweep_values;
      const SweepOutcome o = cmd_sweep(cfg, cfg.out_dir);
      std::cout << "oracle <E> = " << o.oracle.mean << '\n';
      for (const auto& r : o.rows) {
        std::cout << cfg.sweep.axis << " = " << r.value << ": ";
        if (r.ok)
          std::cout << r.mean_energy << " +- " << r.std_error << ", accept " << r.accept_rate
                    << (r.in_band ? ", in band\n" : ", outside band\n");
        else
          std::cout << "failed (" << r.error << ")\n";
      }
    } else if (*dia) {
      const ExperimentConfig cfg = resolve(diag_c);
      const auto report = cmd_diag(cfg, diag_run, cfg.out_dir);
      std::cout << report.at("chains").dump(2) << '\n';
    } else if (*bch) {
      ExperimentConfig cfg = resolve(bench_c);
      if (!bench_dims.empty()) cfg.bench.dims = bench_dims;
      for (const auto& r : cmd_bench(cfg, cfg.out_dir)) {
        std::cout << r.method << " D=" << r.dim << ": " << r.median_seconds << " s/step (x" << r.ratio_vs_fp << " fp)\n";
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ArgumentError& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
