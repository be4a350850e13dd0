#include "flowpert/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "flowpert/errors.hpp"

#ifndef FLOWPERT_VERSION
#define FLOWPERT_VERSION "0.0.0"
#endif

namespace flowpert {

namespace fs = std::filesystem;

namespace {

void write_json(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

GmmSpec generate_target(const ExperimentConfig& cfg) {
  Rng rng = component_rng(cfg, "target-gen");
  return gmm_random(cfg.target.dim, cfg.target.k, rng, cfg.target.mean_scale);
}

GmmSpec corrupt_model(const ExperimentConfig& cfg, const GmmSpec& target) {
  Rng rng = component_rng(cfg, "corruption");
  return corrupt_gmm(target, cfg.corruption.dirichlet, cfg.corruption.mean_jitter, rng);
}

GmmSpec load_spec(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("file not found: " + path);
  return load_gmm(path);
}

nlohmann::json manifest_header(const ExperimentConfig& cfg, const std::string& command) {
  return {{"command", command},
          {"version", FLOWPERT_VERSION},
          {"schema_version", kSchemaVersion},
          {"seed", cfg.seed},
          {"threads", batch::max_threads()},
          {"config", config_to_json(cfg)}};
}

std::vector<double> post_burn_energies(const ChainTrace& t) { return t.energies(); }

std::pair<double, double> energy_range(const std::vector<double>& oracle) {
  std::vector<double> v = oracle;
  std::sort(v.begin(), v.end());
  const double lo = v[static_cast<std::size_t>(0.001 * static_cast<double>(v.size() - 1))];
  const double hi = v[static_cast<std::size_t>(0.999 * static_cast<double>(v.size() - 1))];
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

MeanEstimate pool(const std::vector<batch::ChainRun>& runs) {
  MeanEstimate m;
  double var = 0.0;
  for (const auto& r : runs) {
    m.mean += r.trace.mean_energy;
    var += r.trace.energy_std_error * r.trace.energy_std_error;
    m.ess += r.trace.ess;
  }
  const double n = static_cast<double>(runs.size());
  m.mean /= n;
  m.std_error = std::sqrt(var) / n;
  return m;
}

}  // namespace

Problem build_problem(const ExperimentConfig& cfg) {
  cfg.validate();
  Problem p;
  p.target_spec = cfg.target.file.empty() ? generate_target(cfg) : load_spec(cfg.target.file);
  p.target = Target{p.target_spec, 0.0};
  p.prior = GaussianPrior{cfg.prior_scale(), 0.0};
  const std::size_t d = p.target_spec.dim;
  if (cfg.flow.kind == "ode") {
    p.model_spec = cfg.corruption.model_file.empty() ? corrupt_model(cfg, p.target_spec) : load_spec(cfg.corruption.model_file);
    if (p.model_spec.dim != d) throw ConfigError("model and target dimensions differ");
    auto ode = std::make_shared<OdeFlow>(p.model_spec, time_grid(cfg.flow.t_min, cfg.flow.t_max, cfg.flow.n_steps, cfg.flow.rho));
    p.ode = ode;
    p.flow = ode;
  } else {
    auto affine = cfg.flow.kind == "identity" ? std::make_shared<AffineFlow>(AffineFlow::identity(d))
                                              : std::make_shared<AffineFlow>(cfg.flow.affine_scale, cfg.flow.affine_shift);
    if (affine->dim() != d) throw ConfigError("affine flow and target dimensions differ");
    p.affine = affine;
    p.flow = affine;
  }
  return p;
}

std::shared_ptr<const BackwardScale> make_backward_scale(const ExperimentConfig& cfg, const Problem& p) {
  if (cfg.sigma_b.kind == "constant") {
    return std::make_shared<ConstantBackwardScale>(cfg.sigma_b.constant > 0.0 ? cfg.sigma_b.constant : cfg.sigma_f);
  }
  if (cfg.sigma_b.kind == "exact") {
    if (!p.affine) throw ConfigError("sigma_b.kind = exact needs an affine flow");
    return std::make_shared<DiagonalBackwardScale>(affine_sigma_b_exact(*p.affine, cfg.sigma_f));
  }
  if (cfg.sigma_b.params_file.empty()) throw ConfigError("sigma_b.params_file is required for method fp with sigma_b.kind = net");
  std::ifstream in(cfg.sigma_b.params_file);
  if (!in) throw ConfigError("file not found: " + cfg.sigma_b.params_file);
  auto net = std::make_shared<SigmaBNet>(SigmaBNet::from_json(nlohmann::json::parse(in)));
  if (net->dim() != p.target_spec.dim) throw ConfigError("sigma_b network dimension does not match the target");
  return net;
}

std::unique_ptr<ChainKernel> make_kernel(const ExperimentConfig& cfg, const Problem& p) {
  const McConfig& mc = cfg.sampler.mc;
  const std::size_t d = p.target_spec.dim;
  switch (mc.method) {
    case Method::fp:
      return std::make_unique<FpKernel>(PerturbedFlow{p.flow, cfg.sigma_f, make_backward_scale(cfg, p)}, p.target, p.prior);
    case Method::bfjacob:
      if (p.ode) return std::make_unique<DeterministicKernel>(Method::bfjacob, d, bfjacob_log_det(p.ode, mc.divergence), p.target, p.prior);
      return std::make_unique<DeterministicKernel>(Method::bfjacob, d, affine_with_log_det(*p.affine), p.target, p.prior);
    case Method::hutch:
      if (!p.ode) throw ConfigError("method hutch needs the ODE flow");
      return std::make_unique<DeterministicKernel>(Method::hutch, d, hutchinson_log_det(p.ode, mc.hutch_probes, mc.fixed_probes),
                                                   p.target, p.prior);
    case Method::direct:
      return std::make_unique<DirectKernel>(p.flow, p.target, p.prior);
  }
  throw ConfigError("unknown method");
}

OracleEnergy oracle_energy(const ExperimentConfig& cfg, const Problem& p) {
  Rng rng = component_rng(cfg, "oracle");
  OracleEnergy o;
  o.energies.reserve(cfg.diag.oracle_samples);
  for (const auto& x : sample_exact(p.target_spec, cfg.diag.oracle_samples, rng)) o.energies.push_back(p.target.energy(x));
  const MeanEstimate m = iid_mean(o.energies);
  o.mean = m.mean;
  o.std_error = m.std_error;
  return o;
}

void cmd_gen_target(const ExperimentConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir);
  const GmmSpec target = generate_target(cfg);
  save_gmm(target, (fs::path(out_dir) / "target.json").string());
  save_gmm(corrupt_model(cfg, target), (fs::path(out_dir) / "model.json").string());
}

TrainOutcome cmd_train_sigb(const ExperimentConfig& cfg, const std::string& out_dir) {
  const Problem p = build_problem(cfg);
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  TrainOutcome o;
  Rng rng = component_rng(cfg, "sigma_b-train");
  o.net = SigmaBNet(p.target_spec.dim, cfg.sigma_b.hidden, cfg.sigma_b.blocks, cfg.sigma_b.train.floor);
  o.net.initialize(rng);
  o.result = train(o.net, *p.flow, cfg.sigma_f, p.prior, cfg.sigma_b.train, rng);
  Rng held = component_rng(cfg, "sigma_b-heldout");
  o.held_out = held_out_loss(o.net, *p.flow, cfg.sigma_f, p.prior, std::max<std::size_t>(cfg.sigma_b.held_out, 2), held,
                             cfg.sigma_b.train.parallel);
  o.params_path = (dir / "sigma_b.json").string();
  write_json(o.net.to_json(), o.params_path);
  write_loss_csv(o.result.loss_history, (dir / "loss.csv").string());

  ExperimentConfig resolved = cfg;
  resolved.out_dir = out_dir;
  save_config(resolved, (dir / "resolved_config.json").string());
  nlohmann::json m = manifest_header(resolved, "train-sigb");
  m["train_wall_seconds"] = o.result.wall_seconds;
  m["iterations"] = o.result.loss_history.size();
  m["plateaued"] = o.result.plateaued;
  m["final_window_loss"] = [&] {
    const auto& h = o.result.loss_history;
    const std::size_t w = std::min(h.size(), cfg.sigma_b.train.window);
    double s = 0.0;
    for (std::size_t i = h.size() - w; i < h.size(); ++i) s += h[i];
    return w ? s / static_cast<double>(w) : 0.0;
  }();
  m["held_out_loss"] = {{"mean", o.held_out.mean}, {"std_error", o.held_out.std_error}, {"n", cfg.sigma_b.held_out}};
  write_json(m, dir / "manifest.json");
  return o;
}

SampleOutcome cmd_sample(const ExperimentConfig& cfg, const std::string& out_dir) {
  const Problem p = build_problem(cfg);
  const McConfig& mc = cfg.sampler.mc;
  mc.validate(p.target_spec.dim);
  const auto kernel = make_kernel(cfg, p);
  if (p.ode && mc.method == Method::fp) {
    Rng check = component_rng(cfg, "sigma_f-check");
    check_sigma_f(*p.flow, cfg.sigma_f, p.prior, check);
  }

  const fs::path dir(out_dir);
  fs::create_directories(dir);
  ExperimentConfig resolved = cfg;
  resolved.out_dir = out_dir;
  save_config(resolved, (dir / "resolved_config.json").string());

  const std::size_t n = cfg.sampler.n_chains;
  std::vector<Rng> rngs;
  std::vector<std::unique_ptr<std::ofstream>> csvs, jsonls;
  std::vector<std::unique_ptr<StreamTraceSink>> sinks;
  for (std::size_t i = 0; i < n; ++i) {
    rngs.push_back(component_rng(cfg, "chain", i));
    const fs::path cdir = dir / ("chain_" + std::to_string(i));
    fs::create_directories(cdir);
    csvs.push_back(std::make_unique<std::ofstream>(cdir / "trace.csv"));
    jsonls.push_back(std::make_unique<std::ofstream>(cdir / "samples.jsonl"));
    if (!*csvs.back() || !*jsonls.back()) throw std::runtime_error("cannot write into " + cdir.string());
    sinks.push_back(std::make_unique<StreamTraceSink>(*csvs.back(), jsonls.back().get(), mc.method));
  }

  const auto start = std::chrono::steady_clock::now();
  SampleOutcome o;
  o.runs = batch::chains_parallel(mc, *kernel, rngs, [&](std::size_t i) { return sinks[i].get(); });
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  o.pooled = pool(o.runs);

  nlohmann::json chains = nlohmann::json::array();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = o.runs[i];
    write_json(checkpoint_to_json(r.state), dir / ("chain_" + std::to_string(i)) / "checkpoint.json");
    const double steps = static_cast<double>(std::max<std::size_t>(r.trace.steps.size() - 1, 1));
    chains.push_back({{"chain", i},
                      {"mean_energy", r.trace.mean_energy},
                      {"std_error", r.trace.energy_std_error},
                      {"ess", r.trace.ess},
                      {"iat", r.trace.iat},
                      {"accept_rate", r.trace.accept_rate},
                      {"nonfinite_rejects", r.trace.nonfinite_rejects},
                      {"wall_seconds", r.trace.wall_seconds},
                      {"wall_seconds_per_step", r.trace.wall_seconds / steps}});
  }
  o.manifest = manifest_header(resolved, "sample");
  o.manifest["chains"] = chains;
  o.manifest["pooled"] = {{"mean_energy", o.pooled.mean}, {"std_error", o.pooled.std_error}, {"ess", o.pooled.ess}};
  o.manifest["wall_seconds"] = wall;
  write_json(o.manifest, dir / "manifest.json");
  return o;
}

SweepOutcome cmd_sweep(const ExperimentConfig& cfg, const std::string& out_dir) {
  if (cfg.sweep.values.empty()) throw ArgumentError("sweep: the value list is empty");
  if (cfg.sweep.axis != "sigma_f" && cfg.sweep.axis != "k_update") {
    throw ConfigError("sweep.axis must be sigma_f or k_update");
  }
  const Problem p = build_problem(cfg);
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  SweepOutcome o;
  o.oracle = oracle_energy(cfg, p);
  const auto [lo, hi] = energy_range(o.oracle.energies);

  for (std::size_t c = 0; c < cfg.sweep.values.size(); ++c) {
    SweepRow row;
    row.value = cfg.sweep.values[c];
    const fs::path cdir = dir / ("cell_" + std::to_string(c));
    try {
      ExperimentConfig cell = cfg;
      if (cfg.sweep.axis == "sigma_f") {
        cell.sigma_f = row.value;
        if (cell.sampler.mc.method == Method::fp && cell.sigma_b.kind == "net") {
          cell.sigma_b.params_file = cmd_train_sigb(cell, (cdir / "sigma_b").string()).params_path;
        }
      } else {
        if (row.value < 1.0 || row.value != std::floor(row.value)) throw ArgumentError("k_update values must be positive integers");
        cell.sampler.mc.k_update = static_cast<std::size_t>(row.value);
      }
      const SampleOutcome s = cmd_sample(cell, cdir.string());
      row.mean_energy = s.pooled.mean;
      row.std_error = s.pooled.std_error;
      double acc = 0.0;
      std::vector<double> energies;
      for (const auto& r : s.runs) {
        acc += r.trace.accept_rate;
        const auto e = post_burn_energies(r.trace);
        energies.insert(energies.end(), e.begin(), e.end());
      }
      row.accept_rate = acc / static_cast<double>(s.runs.size());
      row.in_band = std::abs(row.mean_energy - o.oracle.mean) < cfg.diag.band_se * row.std_error;
      write_histogram_csv(histogram(energies, cfg.diag.n_bins, lo, hi), (cdir / "histogram.csv").string());
      row.ok = true;
    } catch (const std::exception& e) {
      row.error = e.what();
      std::cerr << "sweep cell " << c << " (" << cfg.sweep.axis << " = " << row.value << ") failed: " << e.what() << '\n';
    }
    o.rows.push_back(row);
  }

  std::ofstream out(dir / "summary.csv");
  out.precision(17);
  out << cfg.sweep.axis << ",status,mean_energy,std_error,accept_rate,in_band,oracle_mean\n";
  for (const auto& r : o.rows) {
    out << r.value << ',' << (r.ok ? "ok" : "failed") << ',' << r.mean_energy << ',' << r.std_error << ','
        << r.accept_rate << ',' << (r.in_band ? 1 : 0) << ',' << o.oracle.mean << '\n';
  }
  nlohmann::json m = manifest_header(cfg, "sweep");
  m["oracle"] = {{"mean_energy", o.oracle.mean}, {"std_error", o.oracle.std_error}};
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& r : o.rows) {
    cells.push_back({{"value", r.value}, {"ok", r.ok}, {"error", r.error}, {"mean_energy", r.mean_energy},
                     {"std_error", r.std_error}, {"accept_rate", r.accept_rate}, {"in_band", r.in_band}});
  }
  m["cells"] = cells;
  write_json(m, dir / "manifest.json");
  return o;
}

std::vector<double> read_trace_energies(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("file not found: " + path);
  std::string line;
  std::getline(in, line);
  std::stringstream header(line);
  std::vector<std::string> cols;
  for (std::string c; std::getline(header, c, ',');) cols.push_back(c);
  const auto it = std::find(cols.begin(), cols.end(), "energy");
  if (it == cols.end()) throw ConfigError(path + ": no energy column");
  const std::size_t col = static_cast<std::size_t>(it - cols.begin());
  std::vector<double> out;
  while (std::getline(in, line)) {
    std::stringstream row(line);
    std::string cell;
    for (std::size_t i = 0; i <= col; ++i) std::getline(row, cell, ',');
    out.push_back(std::stod(cell));
  }
  return out;
}

nlohmann::json cmd_diag(const ExperimentConfig& cfg, const std::string& run_dir, const std::string& out_dir) {
  const Problem p = build_problem(cfg);
  const fs::path rdir(run_dir), odir(out_dir);
  fs::create_directories(odir);
  std::ifstream min(rdir / "manifest.json");
  if (!min) throw ConfigError("file not found: " + (rdir / "manifest.json").string());
  const nlohmann::json run = nlohmann::json::parse(min);
  const ExperimentConfig run_cfg = config_from_json(run.at("config"));
  const std::size_t burn = run_cfg.sampler.mc.burn_in;

  const OracleEnergy oracle = oracle_energy(cfg, p);
  const auto [lo, hi] = energy_range(oracle.energies);
  write_histogram_csv(histogram(oracle.energies, cfg.diag.n_bins, lo, hi), (odir / "histogram_oracle.csv").string());

  nlohmann::json report = manifest_header(cfg, "diag");
  report["run_dir"] = run_dir;
  report["oracle"] = {{"mean_energy", oracle.mean}, {"std_error", oracle.std_error}};
  nlohmann::json chains = nlohmann::json::array();
  for (std::size_t i = 0; i < run_cfg.sampler.n_chains; ++i) {
    const fs::path cdir = rdir / ("chain_" + std::to_string(i));
    const auto all = read_trace_energies((cdir / "trace.csv").string());
    const std::vector<double> post(all.begin() + static_cast<std::ptrdiff_t>(std::min(burn + 1, all.size())), all.end());
    const std::string tag = "chain_" + std::to_string(i);
    const auto rm = running_mean_energy(all);
    write_running_mean_csv(rm, (odir / ("running_mean_" + tag + ".csv")).string());
    nlohmann::json c = {{"chain", i}};
    if (!post.empty()) write_histogram_csv(histogram(post, cfg.diag.n_bins, lo, hi), (odir / ("histogram_" + tag + ".csv")).string());
    if (post.size() >= 10) {
      const MeanEstimate m = mean_with_error(post);
      c["mean_energy"] = m.mean;
      c["std_error"] = m.std_error;
      c["ess"] = m.ess;
      c["in_band"] = std::abs(m.mean - oracle.mean) < cfg.diag.band_se * m.std_error;
      const auto post_rm = running_mean_energy(post);
      const auto conv = convergence_step(post_rm, oracle.mean, cfg.diag.band_se * m.std_error, cfg.diag.hold);
      c["convergence_step"] = conv ? nlohmann::json(*conv + burn + 1) : nlohmann::json(nullptr);
    }
    std::vector<Vec> xs;
    std::ifstream sj(cdir / "samples.jsonl");
    for (std::string line; std::getline(sj, line);) {
      if (!line.empty()) xs.push_back(nlohmann::json::parse(line).at("x").get<Vec>());
    }
    if (!xs.empty()) c["mode_occupancy"] = mode_occupancy(p.target_spec, xs);
    chains.push_back(c);
  }
  report["chains"] = chains;
  report["target_weights"] = p.target_spec.weights;
  write_json(report, odir / "diag.json");
  return report;
}

std::vector<CostRow> cmd_bench(const ExperimentConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  const DivergenceMode mode =
      cfg.bench.cost_model == "per_coordinate" ? DivergenceMode::per_coordinate : DivergenceMode::analytic;
  std::vector<CostRow> all;
  for (std::size_t d : cfg.bench.dims) {
    Rng rng = component_rng(cfg, "bench-target", d);
    const GmmSpec target = gmm_random(d, cfg.target.k, rng, cfg.target.mean_scale);
    const GmmSpec model = corrupt_gmm(target, cfg.corruption.dirichlet, cfg.corruption.mean_jitter, rng);
    auto ode = std::make_shared<const OdeFlow>(model, time_grid(cfg.flow.t_min, cfg.flow.t_max, cfg.flow.n_steps, cfg.flow.rho));
    const GaussianPrior prior{cfg.flow.prior_scale > 0.0 ? cfg.flow.prior_scale : cfg.flow.t_max, 0.0};
    const Target tgt{target, 0.0};
    // Untrained network of the configured shape: same evaluation cost as a trained one.
    auto net = std::make_shared<SigmaBNet>(d, cfg.sigma_b.hidden, cfg.sigma_b.blocks, cfg.sigma_b.train.floor);
    net->initialize(rng);
    net->set_output_level(cfg.sigma_f);

    McConfig base = cfg.sampler.mc;
    base.k_update = std::min(base.k_update, d);
    McConfig c_fp = base, c_bf = base, c_h1 = base, c_h10 = base;
    c_fp.method = Method::fp;
    c_bf.method = Method::bfjacob;
    c_bf.divergence = mode;
    c_h1.method = c_h10.method = Method::hutch;
    c_h1.hutch_probes = 1;
    c_h10.hutch_probes = 10;

    const FpKernel fp(PerturbedFlow{ode, cfg.sigma_f, net}, tgt, prior);
    const DeterministicKernel bf(Method::bfjacob, d, bfjacob_log_det(ode, mode), tgt, prior);
    const DeterministicKernel h1(Method::hutch, d, hutchinson_log_det(ode, 1), tgt, prior);
    const DeterministicKernel h10(Method::hutch, d, hutchinson_log_det(ode, 10), tgt, prior);
    const NamedKernel ks[] = {{"fp", &fp, c_fp}, {"bfjacob", &bf, c_bf}, {"hutch1", &h1, c_h1}, {"hutch10", &h10, c_h10}};
    const auto rows = benchmark_step_cost(ks, d, cfg.bench.reps, cfg.bench.warmup, cfg.seed);
    all.insert(all.end(), rows.begin(), rows.end());
  }
  fs::create_directories(out_dir);
  write_cost_csv(all, (fs::path(out_dir) / "cost.csv").string());
  nlohmann::json m = manifest_header(cfg, "bench");
  write_json(m, fs::path(out_dir) / "manifest.json");
  return all;
}

}  // namespace flowpert
