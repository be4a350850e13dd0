#include "flowpert/config.hpp"

#include <fstream>
#include <set>

#include "flowpert/errors.hpp"

namespace flowpert {

namespace {

using nlohmann::json;

// Reads fields from one JSON object and rejects anything left unread.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  Reader child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Reader(j_.contains(key) ? j_.at(key) : empty, where_ + "." + key);
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_name(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("sigma_b.train.optimizer: expected sgd or adam, got '" + s + "'");
}

std::string divergence_name(DivergenceMode m) { return m == DivergenceMode::analytic ? "analytic" : "per_coordinate"; }

DivergenceMode divergence_from_name(const std::string& s) {
  if (s == "analytic") return DivergenceMode::analytic;
  if (s == "per_coordinate") return DivergenceMode::per_coordinate;
  throw ConfigError("divergence: expected analytic or per_coordinate, got '" + s + "'");
}

}  // namespace

double ExperimentConfig::prior_scale() const {
  if (flow.prior_scale > 0.0) return flow.prior_scale;
  return flow.kind == "ode" ? flow.t_max : 1.0;
}

void ExperimentConfig::validate() const {
  if (schema_version != kSchemaVersion) {
    throw ConfigError("schema_version " + std::to_string(schema_version) + " is not supported (expected " +
                      std::to_string(kSchemaVersion) + ")");
  }
  if (target.file.empty() && (target.dim == 0 || target.k == 0)) throw ConfigError("target: dim and k must be positive");
  if (!(target.mean_scale > 0.0)) throw ConfigError("target.mean_scale must be positive");
  if (!(corruption.dirichlet > 0.0) || corruption.mean_jitter < 0.0) throw ConfigError("corruption: invalid parameters");
  if (flow.kind != "ode" && flow.kind != "identity" && flow.kind != "affine") {
    throw ConfigError("flow.kind must be ode, identity or affine");
  }
  if (flow.kind == "affine" && (flow.affine_scale.empty() || flow.affine_scale.size() != flow.affine_shift.size())) {
    throw ConfigError("flow: affine_scale and affine_shift must be non-empty and of equal length");
  }
  if (!(flow.t_min > 0.0) || !(flow.t_max > flow.t_min) || flow.n_steps < 2 || !(flow.rho > 0.0)) {
    throw ConfigError("flow: invalid time grid");
  }
  if (flow.prior_scale < 0.0) throw ConfigError("flow.prior_scale must be >= 0");
  if (!(sigma_f > 0.0)) throw ConfigError("sigma_f must be positive");
  if (sigma_b.kind != "net" && sigma_b.kind != "constant" && sigma_b.kind != "exact") {
    throw ConfigError("sigma_b.kind must be net, constant or exact");
  }
  if (sigma_b.kind == "exact" && flow.kind == "ode") throw ConfigError("sigma_b.kind = exact needs an affine flow");
  if (sigma_b.hidden == 0) throw ConfigError("sigma_b.hidden must be positive");
  try {
    sigma_b.train.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("sigma_b.train: ") + e.what());
  }
  if (sampler.n_chains == 0) throw ConfigError("sampler.n_chains must be >= 1");
  if (sampler.mc.method == Method::hutch && sampler.mc.hutch_probes == 0) {
    throw ConfigError("sampler.hutch_probes is required for method hutch");
  }
  if (sampler.mc.thinning == 0) throw ConfigError("sampler.thinning must be >= 1");
  if (bench.cost_model != "per_coordinate" && bench.cost_model != "analytic") {
    throw ConfigError("bench.cost_model must be per_coordinate or analytic");
  }
  if (diag.n_bins == 0) throw ConfigError("diag.n_bins must be >= 1");
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  Reader r(j, "config");
  r.get("schema_version", c.schema_version);
  r.get("seed", c.seed);
  r.get("sigma_f", c.sigma_f);
  r.get("out_dir", c.out_dir);
  {
    Reader t = r.child("target");
    t.get("file", c.target.file);
    t.get("dim", c.target.dim);
    t.get("k", c.target.k);
    t.get("mean_scale", c.target.mean_scale);
    t.finish();
  }
  {
    Reader t = r.child("corruption");
    t.get("model_file", c.corruption.model_file);
    t.get("dirichlet", c.corruption.dirichlet);
    t.get("mean_jitter", c.corruption.mean_jitter);
    t.finish();
  }
  {
    Reader t = r.child("flow");
    t.get("kind", c.flow.kind);
    t.get("t_min", c.flow.t_min);
    t.get("t_max", c.flow.t_max);
    t.get("n_steps", c.flow.n_steps);
    t.get("rho", c.flow.rho);
    t.get("affine_scale", c.flow.affine_scale);
    t.get("affine_shift", c.flow.affine_shift);
    t.get("prior_scale", c.flow.prior_scale);
    t.finish();
  }
  {
    Reader t = r.child("sigma_b");
    t.get("kind", c.sigma_b.kind);
    t.get("params_file", c.sigma_b.params_file);
    t.get("constant", c.sigma_b.constant);
    t.get("hidden", c.sigma_b.hidden);
    t.get("blocks", c.sigma_b.blocks);
    t.get("held_out", c.sigma_b.held_out);
    std::string nonlinearity = "tanh";
    t.get("nonlinearity", nonlinearity);
    if (nonlinearity != "tanh") throw ConfigError("sigma_b.nonlinearity: only tanh is implemented");
    Reader tr = t.child("train");
    TrainConfig& tc = c.sigma_b.train;
    std::string opt = optimizer_name(tc.optimizer);
    tr.get("eta", tc.eta);
    tr.get("batch_size", tc.batch_size);
    tr.get("iterations", tc.iterations);
    tr.get("optimizer", opt);
    tr.get("floor", tc.floor);
    tr.get("window", tc.window);
    tr.get("plateau_tol", tc.plateau_tol);
    tr.get("init_from_pilot", tc.init_from_pilot);
    tr.get("parallel", tc.parallel);
    tr.finish();
    tc.optimizer = optimizer_from_name(opt);
    t.finish();
  }
  {
    Reader t = r.child("sampler");
    McConfig& mc = c.sampler.mc;
    std::string method = method_name(mc.method);
    std::string divergence = divergence_name(mc.divergence);
    t.get("method", method);
    t.get("k_update", mc.k_update);
    t.get("n_steps", mc.n_steps);
    t.get("thinning", mc.thinning);
    t.get("burn_in", mc.burn_in);
    t.get("hutch_probes", mc.hutch_probes);
    t.get("fixed_probes", mc.fixed_probes);
    t.get("shared_indices", mc.shared_indices);
    t.get("divergence", divergence);
    t.get("n_chains", c.sampler.n_chains);
    t.finish();
    try {
      mc.method = method_from_name(method);
    } catch (const ArgumentError& e) {
      throw ConfigError(std::string("sampler.method: ") + e.what());
    }
    mc.divergence = divergence_from_name(divergence);
  }
  {
    Reader t = r.child("sweep");
    t.get("axis", c.sweep.axis);
    t.get("values", c.sweep.values);
    t.finish();
  }
  {
    Reader t = r.child("diag");
    t.get("oracle_samples", c.diag.oracle_samples);
    t.get("n_bins", c.diag.n_bins);
    t.get("band_se", c.diag.band_se);
    t.get("hold", c.diag.hold);
    t.finish();
  }
  {
    Reader t = r.child("bench");
    t.get("dims", c.bench.dims);
    t.get("reps", c.bench.reps);
    t.get("warmup", c.bench.warmup);
    t.get("cost_model", c.bench.cost_model);
    t.finish();
  }
  r.finish();
  c.validate();
  return c;
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  const TrainConfig& tc = c.sigma_b.train;
  const McConfig& mc = c.sampler.mc;
  return {
      {"schema_version", c.schema_version},
      {"seed", c.seed},
      {"sigma_f", c.sigma_f},
      {"out_dir", c.out_dir},
      {"target", {{"file", c.target.file}, {"dim", c.target.dim}, {"k", c.target.k}, {"mean_scale", c.target.mean_scale}}},
      {"corruption",
       {{"model_file", c.corruption.model_file},
        {"dirichlet", c.corruption.dirichlet},
        {"mean_jitter", c.corruption.mean_jitter}}},
      {"flow",
       {{"kind", c.flow.kind},
        {"t_min", c.flow.t_min},
        {"t_max", c.flow.t_max},
        {"n_steps", c.flow.n_steps},
        {"rho", c.flow.rho},
        {"affine_scale", c.flow.affine_scale},
        {"affine_shift", c.flow.affine_shift},
        {"prior_scale", c.flow.prior_scale}}},
      {"sigma_b",
       {{"kind", c.sigma_b.kind},
        {"params_file", c.sigma_b.params_file},
        {"constant", c.sigma_b.constant},
        {"hidden", c.sigma_b.hidden},
        {"blocks", c.sigma_b.blocks},
        {"held_out", c.sigma_b.held_out},
        {"nonlinearity", "tanh"},
        {"train",
         {{"eta", tc.eta},
          {"batch_size", tc.batch_size},
          {"iterations", tc.iterations},
          {"optimizer", optimizer_name(tc.optimizer)},
          {"floor", tc.floor},
          {"window", tc.window},
          {"plateau_tol", tc.plateau_tol},
          {"init_from_pilot", tc.init_from_pilot},
          {"parallel", tc.parallel}}}}},
      {"sampler",
       {{"method", method_name(mc.method)},
        {"k_update", mc.k_update},
        {"n_steps", mc.n_steps},
        {"thinning", mc.thinning},
        {"burn_in", mc.burn_in},
        {"hutch_probes", mc.hutch_probes},
        {"fixed_probes", mc.fixed_probes},
        {"shared_indices", mc.shared_indices},
        {"divergence", divergence_name(mc.divergence)},
        {"n_chains", c.sampler.n_chains}}},
      {"sweep", {{"axis", c.sweep.axis}, {"values", c.sweep.values}}},
      {"diag",
       {{"oracle_samples", c.diag.oracle_samples},
        {"n_bins", c.diag.n_bins},
        {"band_se", c.diag.band_se},
        {"hold", c.diag.hold}}},
      {"bench",
       {{"dims", c.bench.dims}, {"reps", c.bench.reps}, {"warmup", c.bench.warmup}, {"cost_model", c.bench.cost_model}}},
  };
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("file not found: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const ExperimentConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << config_to_json(c).dump(2) << '\n';
}

Rng component_rng(const ExperimentConfig& c, const std::string& label, std::uint64_t index) {
  return Rng::derive(c.seed, label, index);
}

}  // namespace flowpert
