#include "flowpert/sampler_mc.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "flowpert/diagnostics.hpp"
#include "flowpert/errors.hpp"

namespace flowpert {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// k distinct indices from [0, n), partial Fisher-Yates.
std::vector<std::size_t> choose_indices(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.index(n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace

std::string method_name(Method m) {
  switch (m) {
    case Method::fp: return "fp";
    case Method::bfjacob: return "bfjacob";
    case Method::hutch: return "hutch";
    case Method::direct: return "direct";
  }
  return "unknown";
}

Method method_from_name(const std::string& name) {
  if (name == "fp") return Method::fp;
  if (name == "bfjacob") return Method::bfjacob;
  if (name == "hutch") return Method::hutch;
  if (name == "direct") return Method::direct;
  throw ArgumentError("unknown method '" + name + "' (expected fp, bfjacob, hutch or direct)");
}

void McConfig::validate(std::size_t dim) const {
  if (k_update < 1 || k_update > dim) {
    throw ArgumentError("McConfig: k_update must lie in [1, " + std::to_string(dim) + "]");
  }
  if (thinning == 0) throw ArgumentError("McConfig: thinning must be >= 1");
  if (method == Method::hutch && hutch_probes == 0) throw ArgumentError("McConfig: hutch requires hutch_probes >= 1");
}

nlohmann::json checkpoint_to_json(const ChainState& s) {
  return nlohmann::json{{"method", method_name(s.method)},
                        {"step", s.step},
                        {"z", s.current.z},
                        {"eps", s.current.eps},
                        {"x", s.current.x},
                        {"W", s.current.work},
                        {"trajectory", trajectory_to_json(s.current)},
                        {"rng", s.rng.serialize()},
                        {"counters",
                         {{"accepts", s.accepts}, {"rejects", s.rejects}, {"nonfinite_rejects", s.nonfinite_rejects}}}};
}

ChainState checkpoint_from_json(const nlohmann::json& j) {
  ChainState s;
  try {
    s.method = method_from_name(j.at("method").get<std::string>());
    s.step = j.at("step").get<std::size_t>();
    s.current = trajectory_from_json(j.at("trajectory"));
    s.rng = Rng::deserialize(j.at("rng").get<std::string>());
    const auto& c = j.at("counters");
    s.accepts = c.at("accepts").get<std::size_t>();
    s.rejects = c.at("rejects").get<std::size_t>();
    s.nonfinite_rejects = c.at("nonfinite_rejects").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("checkpoint JSON: ") + e.what());
  }
  return s;
}

std::pair<Vec, Vec> propose_partial(std::span<const double> z, std::span<const double> eps, std::size_t k,
                                    const GaussianPrior& prior, Rng& rng, bool shared_indices) {
  const std::size_t dim = z.size();
  if (k < 1 || k > dim) throw ArgumentError("propose_partial: k out of range");
  if (!eps.empty() && eps.size() != dim) throw ArgumentError("propose_partial: eps has wrong length");
  Vec z2(z.begin(), z.end());
  Vec eps2(eps.begin(), eps.end());
  const auto zi = choose_indices(dim, k, rng);
  std::vector<std::size_t> ei;
  if (!eps.empty()) ei = shared_indices ? zi : choose_indices(dim, k, rng);
  for (std::size_t i : zi) z2[i] = prior.sample_coordinate(rng);
  for (std::size_t i : ei) eps2[i] = rng.normal();
  return {std::move(z2), std::move(eps2)};
}

bool accept(double state_w, double trial_w, Rng& rng) {
  const double u = rng.uniform();
  if (!std::isfinite(trial_w)) return false;
  const double delta = state_w - trial_w;
  if (delta >= 0.0) return true;
  return std::log(u) < delta;
}

FlowWithLogDet bfjacob_log_det(std::shared_ptr<const OdeFlow> flow, DivergenceMode mode) {
  return [flow = std::move(flow), mode](std::span<const double> z, Rng&) {
    return integrate_with_divergence(*flow, z, mode);
  };
}

FlowWithLogDet hutchinson_log_det(std::shared_ptr<const OdeFlow> flow, std::size_t n_probes, bool fixed_probes) {
  if (n_probes == 0) throw ArgumentError("hutchinson_log_det: n_probes must be >= 1");
  return [flow = std::move(flow), n_probes, fixed_probes](std::span<const double> z, Rng& rng) {
    return integrate_with_hutchinson(*flow, z, n_probes, rng, fixed_probes);
  };
}

FlowWithLogDet affine_with_log_det(AffineFlow flow) {
  const double log_det = affine_log_det(flow);
  return [flow = std::move(flow), log_det](std::span<const double> z, Rng&) {
    return std::pair<Vec, double>{flow.forward(z), log_det};
  };
}

// ---------------------------------------------------------------------------

FpKernel::FpKernel(PerturbedFlow pf, Target target, GaussianPrior prior)
    : pf_(std::move(pf)), target_(std::move(target)), prior_(prior) {
  if (!pf_.base || !pf_.sigma_b) throw ArgumentError("FpKernel: flow and backward scale required");
  if (target_.spec.dim != pf_.dim()) throw ArgumentError("FpKernel: target and flow dimensions differ");
}

TrajectoryRecord FpKernel::initial(Rng& rng) const {
  const Vec z = prior_.sample(dim(), rng);
  const Vec eps = rng.normal_vector(dim());
  return make_trajectory(pf_, target_, prior_, z, eps);
}

TrajectoryRecord FpKernel::evaluate(std::span<const double> z, std::span<const double> eps, Rng&) const {
  return make_trajectory(pf_, target_, prior_, z, eps);
}

void FpKernel::step(ChainState& state, const McConfig& config) const {
  auto [z2, eps2] = propose_partial(state.current.z, state.current.eps, config.k_update, prior_, state.rng,
                                    config.shared_indices);
  TrajectoryRecord trial;
  bool finite = true;
  try {
    trial = make_trajectory(pf_, target_, prior_, z2, eps2);
    finite = std::isfinite(trial.work);
  } catch (const NumericError&) {
    finite = false;
  }
  const bool ok = accept(state.current.work, finite ? trial.work : kNaN, state.rng);
  ++state.step;
  if (!finite) ++state.nonfinite_rejects;
  if (ok) {
    state.current = std::move(trial);
    ++state.accepts;
  } else {
    ++state.rejects;
  }
}

DeterministicKernel::DeterministicKernel(Method method, std::size_t dim, FlowWithLogDet flow, Target target,
                                         GaussianPrior prior)
    : method_(method), dim_(dim), flow_(std::move(flow)), target_(std::move(target)), prior_(prior) {
  if (method != Method::bfjacob && method != Method::hutch) {
    throw ArgumentError("DeterministicKernel: method must be bfjacob or hutch");
  }
  if (target_.spec.dim != dim_) throw ArgumentError("DeterministicKernel: target and flow dimensions differ");
}

TrajectoryRecord DeterministicKernel::evaluate(std::span<const double> z, std::span<const double>, Rng& rng) const {
  TrajectoryRecord rec;
  rec.z.assign(z.begin(), z.end());
  auto [x, log_det] = flow_(z, rng);
  rec.x = std::move(x);
  rec.delta_s = log_det;
  rec.u_x = target_.energy(rec.x);
  rec.u_z = prior_.energy(z);
  rec.work = rec.u_x - rec.u_z - rec.delta_s;
  return rec;
}

TrajectoryRecord DeterministicKernel::initial(Rng& rng) const {
  const Vec z = prior_.sample(dim_, rng);
  return evaluate(z, {}, rng);
}

void DeterministicKernel::step(ChainState& state, const McConfig& config) const {
  auto proposal = propose_partial(state.current.z, {}, config.k_update, prior_, state.rng, config.shared_indices);
  TrajectoryRecord trial;
  bool finite = true;
  try {
    trial = evaluate(proposal.first, {}, state.rng);
    finite = std::isfinite(trial.work);
  } catch (const NumericError&) {
    finite = false;
  }
  const bool ok = accept(state.current.work, finite ? trial.work : kNaN, state.rng);
  ++state.step;
  if (!finite) ++state.nonfinite_rejects;
  if (ok) {
    state.current = std::move(trial);
    ++state.accepts;
  } else {
    ++state.rejects;
  }
}

DirectKernel::DirectKernel(std::shared_ptr<const FlowMap> flow, Target target, GaussianPrior prior)
    : flow_(std::move(flow)), target_(std::move(target)), prior_(prior) {
  if (!flow_) throw ArgumentError("DirectKernel: flow required");
  if (target_.spec.dim != flow_->dim()) throw ArgumentError("DirectKernel: target and flow dimensions differ");
}

TrajectoryRecord DirectKernel::evaluate(std::span<const double> z, std::span<const double>, Rng&) const {
  TrajectoryRecord rec;
  rec.z.assign(z.begin(), z.end());
  rec.x = flow_->forward(z);
  rec.u_x = target_.energy(rec.x);
  rec.u_z = prior_.energy(z);
  rec.delta_s = kNaN;
  rec.work = kNaN;
  return rec;
}

TrajectoryRecord DirectKernel::initial(Rng& rng) const {
  const Vec z = prior_.sample(dim(), rng);
  return evaluate(z, {}, rng);
}

void DirectKernel::step(ChainState& state, const McConfig&) const {
  state.current = initial(state.rng);
  ++state.step;
  ++state.accepts;
}

ChainState init_chain(const ChainKernel& kernel, Rng rng) {
  ChainState s;
  s.rng = std::move(rng);
  s.method = kernel.method();
  s.current = kernel.initial(s.rng);
  return s;
}

// ---------------------------------------------------------------------------

std::vector<double> ChainTrace::energies() const {
  std::vector<double> out;
  for (const auto& r : steps) {
    if (r.step > burn_in) out.push_back(r.energy);
  }
  return out;
}

StreamTraceSink::StreamTraceSink(std::ostream& csv, std::ostream* samples_jsonl, Method method)
    : csv_(csv), jsonl_(samples_jsonl) {
  csv_.precision(17);
  csv_ << (method == Method::direct ? "step,energy\n" : "step,W,energy,accepted\n");
}

void StreamTraceSink::row(const StepRecord& rec, Method method) {
  if (method == Method::direct) {
    csv_ << rec.step << ',' << rec.energy << '\n';
  } else {
    csv_ << rec.step << ',' << rec.work << ',' << rec.energy << ',' << (rec.accepted ? 1 : 0) << '\n';
  }
}

void StreamTraceSink::sample(std::size_t step, std::span<const double> x) {
  if (!jsonl_) return;
  *jsonl_ << nlohmann::json{{"step", step}, {"x", std::vector<double>(x.begin(), x.end())}}.dump() << '\n';
}

void StreamTraceSink::flush() {
  csv_.flush();
  if (jsonl_) jsonl_->flush();
}

namespace {

// Flushes the sink on scope exit, including during stack unwinding.
struct SinkFlusher {
  TraceSink* sink;
  ~SinkFlusher() {
    if (sink) sink->flush();
  }
};

}  // namespace

ChainTrace run_chain(const McConfig& config, const ChainKernel& kernel, ChainState& state, TraceSink* sink) {
  config.validate(kernel.dim());
  if (config.method != kernel.method()) throw ArgumentError("run_chain: config method does not match kernel");
  SinkFlusher flusher{sink};
  const auto start = std::chrono::steady_clock::now();
  ChainTrace trace;
  trace.method = kernel.method();
  trace.burn_in = config.burn_in;
  const std::size_t total = config.burn_in + config.n_steps;
  trace.steps.reserve(total + 1);

  auto record = [&](bool accepted) {
    StepRecord r{state.step, state.current.work, state.current.u_x, accepted};
    trace.steps.push_back(r);
    if (sink) sink->row(r, trace.method);
    if (state.step > config.burn_in && (state.step - config.burn_in) % config.thinning == 0) {
      trace.samples.push_back(state.current.x);
      trace.sample_steps.push_back(state.step);
      if (sink) sink->sample(state.step, state.current.x);
    }
  };

  record(false);
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t before = state.accepts;
    kernel.step(state, config);
    record(state.accepts != before);
  }
  trace.accept_rate = state.accept_rate();
  trace.nonfinite_rejects = state.nonfinite_rejects;
  trace.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const auto e = trace.energies();
  if (!e.empty()) {
    trace.mean_energy = std::accumulate(e.begin(), e.end(), 0.0) / static_cast<double>(e.size());
  }
  if (e.size() >= 10) {
    const auto stats = mean_with_error(e);
    trace.energy_std_error = stats.std_error;
    trace.ess = stats.ess;
    trace.iat = stats.iat;
  }
  return trace;
}

double verify_state(const ChainState& state, const ChainKernel& kernel) {
  Rng scratch = state.rng;
  const TrajectoryRecord again = kernel.evaluate(state.current.z, state.current.eps, scratch);
  return std::abs(again.work - state.current.work);
}

}  // namespace flowpert
