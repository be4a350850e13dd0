#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "flowpert/ode_flow.hpp"
#include "flowpert/rng.hpp"
#include "flowpert/sampler_mc.hpp"
#include "flowpert/sigma_b.hpp"

namespace flowpert {

inline constexpr int kSchemaVersion = 1;

struct TargetConfig {
  std::string file;  // empty: generate from the seed
  std::size_t dim = 16;
  std::size_t k = 4;
  double mean_scale = 3.0;
};

/// The flow's model mixture is a corrupted copy of the target.
struct CorruptionConfig {
  std::string model_file;  // empty: derive from the target and the seed
  double dirichlet = 10.0;
  double mean_jitter = 0.3;
};

struct FlowConfig {
  std::string kind = "ode";  // ode | identity | affine
  double t_min = 0.01;
  double t_max = 15.0;
  std::size_t n_steps = 100;
  double rho = 3.0;
  Vec affine_scale;
  Vec affine_shift;
  /// Prior N(0, s^2 I); 0 means t_max for the ODE flow and 1 otherwise.
  double prior_scale = 0.0;
};

struct SigmaBConfig {
  std::string kind = "net";  // net | constant | exact (affine flows only)
  std::string params_file;   // trained network for sampling
  double constant = 0.0;     // 0 means sigma_f
  std::size_t hidden = 64;
  std::size_t blocks = 4;
  TrainConfig train;
  std::size_t held_out = 1000;
};

struct SamplerConfig {
  McConfig mc;
  std::size_t n_chains = 1;
};

struct SweepConfig {
  std::string axis;  // sigma_f | k_update
  std::vector<double> values;
};

struct DiagConfig {
  std::size_t oracle_samples = 1000000;
  std::size_t n_bins = 60;
  double band_se = 2.0;
  std::size_t hold = 500;
};

struct BenchConfig {
  std::vector<std::size_t> dims = {16, 64, 256};
  std::size_t reps = 50;
  std::size_t warmup = 5;
  std::string cost_model = "per_coordinate";  // per_coordinate | analytic
};

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 1;
  TargetConfig target;
  CorruptionConfig corruption;
  FlowConfig flow;
  double sigma_f = 0.01;
  SigmaBConfig sigma_b;
  SamplerConfig sampler;
  SweepConfig sweep;
  DiagConfig diag;
  BenchConfig bench;
  std::string out_dir = "run";

  void validate() const;
  double prior_scale() const;
};

/// Strict parse: unknown keys, wrong types and a schema mismatch raise ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
/// Every field, including defaults; parses back to an identical config.
nlohmann::json config_to_json(const ExperimentConfig& c);

ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& c, const std::string& path);

/// Independent stream for a named component ("target-gen", "corruption",
/// "sigma_b-train", "chain", ...).
Rng component_rng(const ExperimentConfig& c, const std::string& label, std::uint64_t index = 0);

}  // namespace flowpert
