#pragma once

#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "flowpert/batch.hpp"
#include "flowpert/config.hpp"
#include "flowpert/diagnostics.hpp"

namespace flowpert {

/// Everything a run needs, resolved from the config.
struct Problem {
  GmmSpec target_spec;
  GmmSpec model_spec;                       // empty for identity/affine flows
  std::shared_ptr<const FlowMap> flow;
  std::shared_ptr<const OdeFlow> ode;       // null unless flow.kind == "ode"
  std::shared_ptr<const AffineFlow> affine; // null for the ODE flow
  Target target;
  GaussianPrior prior;
};

Problem build_problem(const ExperimentConfig& cfg);

/// sigma_b for the perturbed flow as configured (trained network, constant or exact affine).
std::shared_ptr<const BackwardScale> make_backward_scale(const ExperimentConfig& cfg, const Problem& p);

std::unique_ptr<ChainKernel> make_kernel(const ExperimentConfig& cfg, const Problem& p);

struct OracleEnergy {
  double mean = 0.0;
  double std_error = 0.0;
  std::vector<double> energies;
};

/// Mean target energy from exact samples.
OracleEnergy oracle_energy(const ExperimentConfig& cfg, const Problem& p);

/// Writes target.json and model.json (the corrupted mixture driving the flow).
void cmd_gen_target(const ExperimentConfig& cfg, const std::string& out_dir);

struct TrainOutcome {
  SigmaBNet net;
  TrainResult result;
  HeldOutLoss held_out;
  std::string params_path;
};

/// Trains sigma_b; writes sigma_b.json, loss.csv, manifest.json, resolved_config.json.
TrainOutcome cmd_train_sigb(const ExperimentConfig& cfg, const std::string& out_dir);

struct SampleOutcome {
  std::vector<batch::ChainRun> runs;
  MeanEstimate pooled;  // mean over chains, standard error combined
  nlohmann::json manifest;
};

/// Runs sampler.n_chains chains; writes chain_<i>/{trace.csv,samples.jsonl,checkpoint.json},
/// manifest.json and resolved_config.json.
SampleOutcome cmd_sample(const ExperimentConfig& cfg, const std::string& out_dir);

struct SweepRow {
  double value = 0.0;
  bool ok = false;
  std::string error;
  double mean_energy = 0.0;
  double std_error = 0.0;
  double accept_rate = 0.0;
  bool in_band = false;
};

struct SweepOutcome {
  OracleEnergy oracle;
  std::vector<SweepRow> rows;
};

/// One sample run per value of sweep.axis (sigma_f or k_update). Failed cells are
/// recorded and the sweep continues. Writes summary.csv and per-cell histograms.
SweepOutcome cmd_sweep(const ExperimentConfig& cfg, const std::string& out_dir);

/// Reads the chains of a sample run and writes running-mean and histogram CSVs,
/// mode occupancy and the convergence step against the exact-sample oracle.
nlohmann::json cmd_diag(const ExperimentConfig& cfg, const std::string& run_dir, const std::string& out_dir);

/// Per-step cost of fp, bfjacob, hutch1 and hutch10 for each bench dim; writes cost.csv.
std::vector<CostRow> cmd_bench(const ExperimentConfig& cfg, const std::string& out_dir);

/// Step energies of a trace CSV written by a sample run.
std::vector<double> read_trace_energies(const std::string& path);

}  // namespace flowpert
