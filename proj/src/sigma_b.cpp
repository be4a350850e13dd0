#include "flowpert/sigma_b.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "flowpert/batch.hpp"
#include "flowpert/errors.hpp"

namespace flowpert {

namespace {

double softplus(double r) { return r > 0.0 ? r + std::log1p(std::exp(-r)) : std::log1p(std::exp(r)); }
double sigmoid(double r) { return r >= 0.0 ? 1.0 / (1.0 + std::exp(-r)) : std::exp(r) / (1.0 + std::exp(r)); }
// Inverse of softplus for y > 0.
double softplus_inv(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double a : v) s += a * a;
  return s;
}

}  // namespace

SigmaBNet::SigmaBNet(std::size_t dim, std::size_t hidden, std::size_t blocks, double floor)
    : dim_(dim), hidden_(hidden), blocks_(blocks), floor_(floor) {
  if (dim == 0 || hidden == 0) throw ArgumentError("SigmaBNet: dim and hidden must be positive");
  if (!(floor > 0.0)) throw ArgumentError("SigmaBNet: floor must be positive");
  params_.assign(off_b_out() + 1, 0.0);
  input_shift_.assign(dim, 0.0);
  input_scale_.assign(dim, 1.0);
}

void SigmaBNet::initialize(Rng& rng) {
  std::fill(params_.begin(), params_.end(), 0.0);
  const double s_in = std::sqrt(1.0 / static_cast<double>(dim_));
  for (std::size_t i = 0; i < hidden_ * dim_; ++i) params_[off_w_in() + i] = s_in * rng.normal();
  // Residual branches start small so the stack is close to the identity.
  const double s_h = 0.5 * std::sqrt(1.0 / static_cast<double>(hidden_));
  for (std::size_t k = 0; k < blocks_; ++k) {
    for (std::size_t i = 0; i < hidden_ * hidden_; ++i) params_[off_block_w(k) + i] = s_h * rng.normal();
  }
}

void SigmaBNet::set_input_normalization(Vec shift, Vec scale) {
  if (shift.size() != dim_ || scale.size() != dim_) throw ArgumentError("SigmaBNet: normalization length");
  for (double s : scale) {
    if (!(s > 0.0)) throw ArgumentError("SigmaBNet: normalization scale must be positive");
  }
  input_shift_ = std::move(shift);
  input_scale_ = std::move(scale);
}

void SigmaBNet::set_output_level(double value) {
  if (!(value > floor_)) throw ArgumentError("SigmaBNet: output level must exceed the floor");
  params_[off_b_out()] = softplus_inv(value - floor_);
}

double SigmaBNet::evaluate(std::span<const double> x) const {
  if (x.size() != dim_) throw ArgumentError("SigmaBNet::evaluate: wrong input length");
  const double* p = params_.data();
  Vec h(hidden_);
  for (std::size_t r = 0; r < hidden_; ++r) {
    const double* w = p + off_w_in() + r * dim_;
    double a = p[off_b_in() + r];
    for (std::size_t c = 0; c < dim_; ++c) a += w[c] * (x[c] - input_shift_[c]) / input_scale_[c];
    h[r] = std::tanh(a);
  }
  Vec next(hidden_);
  for (std::size_t k = 0; k < blocks_; ++k) {
    const double* w = p + off_block_w(k);
    const double* b = p + off_block_b(k);
    for (std::size_t r = 0; r < hidden_; ++r) {
      double a = b[r];
      for (std::size_t c = 0; c < hidden_; ++c) a += w[r * hidden_ + c] * h[c];
      next[r] = h[r] + std::tanh(a);
    }
    h.swap(next);
  }
  double raw = p[off_b_out()];
  for (std::size_t c = 0; c < hidden_; ++c) raw += p[off_w_out() + c] * h[c];
  const double out = softplus(raw) + floor_;
  if (!std::isfinite(out)) throw NumericError("SigmaBNet: non-finite output");
  return out;
}

double SigmaBNet::evaluate_accumulate_grad(std::span<const double> x, double weight, std::span<double> grad) const {
  if (x.size() != dim_) throw ArgumentError("SigmaBNet: wrong input length");
  if (grad.size() != params_.size()) throw ArgumentError("SigmaBNet: gradient buffer has wrong length");
  const double* p = params_.data();
  Vec xhat(dim_);
  for (std::size_t c = 0; c < dim_; ++c) xhat[c] = (x[c] - input_shift_[c]) / input_scale_[c];

  // Forward pass keeping every hidden state and block activation.
  std::vector<Vec> hs(blocks_ + 1, Vec(hidden_));
  std::vector<Vec> acts(blocks_, Vec(hidden_));
  for (std::size_t r = 0; r < hidden_; ++r) {
    const double* w = p + off_w_in() + r * dim_;
    double a = p[off_b_in() + r];
    for (std::size_t c = 0; c < dim_; ++c) a += w[c] * xhat[c];
    hs[0][r] = std::tanh(a);
  }
  for (std::size_t k = 0; k < blocks_; ++k) {
    const double* w = p + off_block_w(k);
    const double* b = p + off_block_b(k);
    for (std::size_t r = 0; r < hidden_; ++r) {
      double a = b[r];
      for (std::size_t c = 0; c < hidden_; ++c) a += w[r * hidden_ + c] * hs[k][c];
      acts[k][r] = std::tanh(a);
      hs[k + 1][r] = hs[k][r] + acts[k][r];
    }
  }
  const Vec& top = hs[blocks_];
  double raw = p[off_b_out()];
  for (std::size_t c = 0; c < hidden_; ++c) raw += p[off_w_out() + c] * top[c];
  const double out = softplus(raw) + floor_;

  // Reverse accumulation.
  const double g_raw = weight * sigmoid(raw);
  for (std::size_t c = 0; c < hidden_; ++c) grad[off_w_out() + c] += g_raw * top[c];
  grad[off_b_out()] += g_raw;
  Vec g_h(hidden_);
  for (std::size_t c = 0; c < hidden_; ++c) g_h[c] = g_raw * p[off_w_out() + c];
  Vec g_a(hidden_);
  for (std::size_t k = blocks_; k-- > 0;) {
    const double* w = p + off_block_w(k);
    for (std::size_t r = 0; r < hidden_; ++r) g_a[r] = g_h[r] * (1.0 - acts[k][r] * acts[k][r]);
    for (std::size_t r = 0; r < hidden_; ++r) {
      double* gw = grad.data() + off_block_w(k) + r * hidden_;
      for (std::size_t c = 0; c < hidden_; ++c) gw[c] += g_a[r] * hs[k][c];
      grad[off_block_b(k) + r] += g_a[r];
    }
    for (std::size_t r = 0; r < hidden_; ++r) {
      for (std::size_t c = 0; c < hidden_; ++c) g_h[c] += w[r * hidden_ + c] * g_a[r];
    }
  }
  for (std::size_t r = 0; r < hidden_; ++r) {
    const double ga = g_h[r] * (1.0 - hs[0][r] * hs[0][r]);
    double* gw = grad.data() + off_w_in() + r * dim_;
    for (std::size_t c = 0; c < dim_; ++c) gw[c] += ga * xhat[c];
    grad[off_b_in() + r] += ga;
  }
  return out;
}

nlohmann::json SigmaBNet::to_json() const {
  return nlohmann::json{
      {"shape", {{"dim", dim_}, {"hidden", hidden_}, {"blocks", blocks_}, {"floor", floor_}, {"n_params", params_.size()}}},
      {"input_shift", input_shift_},
      {"input_scale", input_scale_},
      {"params", params_}};
}

SigmaBNet SigmaBNet::from_json(const nlohmann::json& j) {
  try {
    const auto& shape = j.at("shape");
    SigmaBNet net(shape.at("dim").get<std::size_t>(), shape.at("hidden").get<std::size_t>(),
                  shape.at("blocks").get<std::size_t>(), shape.at("floor").get<double>());
    auto params = j.at("params").get<Vec>();
    if (params.size() != net.params_.size() || shape.at("n_params").get<std::size_t>() != params.size()) {
      throw ArgumentError("SigmaBNet JSON: parameter count does not match shape header");
    }
    net.params_ = std::move(params);
    net.set_input_normalization(j.at("input_shift").get<Vec>(), j.at("input_scale").get<Vec>());
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("SigmaBNet JSON: ") + e.what());
  }
}

TrainingSample make_training_sample(const FlowMap& base, double sigma_f, std::span<const double> z,
                                    std::span<const double> eps) {
  TrainingSample s;
  s.eps.assign(eps.begin(), eps.end());
  s.x = base.forward(z);
  for (std::size_t i = 0; i < s.x.size(); ++i) s.x[i] += sigma_f * eps[i];
  const Vec back = base.inverse(s.x);
  s.residual.resize(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) s.residual[i] = z[i] - back[i];
  return s;
}

double loss_sample(const PerturbedFlow& pf, std::span<const double> z, std::span<const double> eps) {
  const Vec x = forward_perturbed(pf, z, eps);
  const Vec eps_back = recover_backward_noise(pf, z, x);
  return std::abs(squared_norm(eps) - squared_norm(eps_back));
}

double loss_sample(const SigmaBNet& net, const TrainingSample& s) {
  const double sb = net.evaluate(s.x);
  return std::abs(squared_norm(s.eps) - squared_norm(s.residual) / (sb * sb));
}

double batch_loss_and_gradient(const SigmaBNet& net, std::span<const TrainingSample> batch, std::span<double> grad) {
  if (batch.empty()) throw ArgumentError("batch_loss_and_gradient: empty batch");
  std::fill(grad.begin(), grad.end(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const TrainingSample& s = batch[b];
    const double sb = net.evaluate(s.x);
    const double ne = squared_norm(s.eps);
    const double nb = squared_norm(s.residual) / (sb * sb);
    const double diff = ne - nb;
    total += std::abs(diff);
    // Differences within rounding of zero have no meaningful sign.
    const double deadband = 1e-12 * (ne + nb);
    const double sign = diff > deadband ? 1.0 : (diff < -deadband ? -1.0 : 0.0);
    const double dloss_dsb = sign * 2.0 * nb / sb;
    if (!std::isfinite(dloss_dsb)) throw NumericError("sigma_b gradient is not finite", static_cast<std::ptrdiff_t>(b));
    if (dloss_dsb != 0.0) net.evaluate_accumulate_grad(s.x, dloss_dsb * inv_n, grad);
  }
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) throw NumericError("sigma_b gradient is not finite");
  }
  return total * inv_n;
}

void TrainConfig::validate() const {
  if (!(eta > 0.0)) throw ArgumentError("TrainConfig: eta must be positive");
  if (batch_size == 0) throw ArgumentError("TrainConfig: batch_size must be >= 1");
  if (!(floor > 0.0)) throw ArgumentError("TrainConfig: floor must be positive");
  if (window == 0) throw ArgumentError("TrainConfig: window must be >= 1");
}

void Optimizer::apply(std::span<double> params, std::span<const double> grad) {
  if (kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= eta * grad[i];
    return;
  }
  if (m.size() != params.size()) {
    m.assign(params.size(), 0.0);
    v.assign(params.size(), 0.0);
    t = 0;
  }
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    params[i] -= eta * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon);
  }
}

double gradient_step(SigmaBNet& net, Optimizer& opt, std::span<const TrainingSample> batch) {
  Vec grad(net.n_params());
  const double loss = batch_loss_and_gradient(net, batch, grad);
  opt.apply(net.params(), grad);
  return loss;
}

double gradient_step(SigmaBNet& net, Optimizer& opt, const PerturbedFlow& pf, std::span<const Vec> zs,
                     std::span<const Vec> epss) {
  if (zs.empty() || zs.size() != epss.size()) throw ArgumentError("gradient_step: empty or mismatched batch");
  std::vector<TrainingSample> batch;
  batch.reserve(zs.size());
  for (std::size_t b = 0; b < zs.size(); ++b) batch.push_back(make_training_sample(*pf.base, pf.sigma_f, zs[b], epss[b]));
  return gradient_step(net, opt, batch);
}

namespace {

std::vector<TrainingSample> draw_batch(const FlowMap& base, double sigma_f, const GaussianPrior& prior,
                                       std::size_t n, Rng& rng, bool parallel) {
  std::vector<Vec> zs(n), epss(n);
  for (std::size_t b = 0; b < n; ++b) {
    zs[b] = prior.sample(base.dim(), rng);
    epss[b] = rng.normal_vector(base.dim());
  }
  return parallel ? batch::training_samples_parallel(base, sigma_f, zs, epss)
                  : batch::training_samples_serial(base, sigma_f, zs, epss);
}

}  // namespace

TrainResult train(SigmaBNet& net, const FlowMap& base, double sigma_f, const GaussianPrior& prior,
                  const TrainConfig& config, Rng& rng) {
  config.validate();
  if (net.dim() != base.dim()) throw ArgumentError("train: network and flow dimensions differ");
  const auto start = std::chrono::steady_clock::now();
  TrainResult result;

  if (config.init_from_pilot) {
    const auto pilot = draw_batch(base, sigma_f, prior, config.batch_size, rng, config.parallel);
    const std::size_t dim = base.dim();
    Vec shift(dim, 0.0), scale(dim, 0.0);
    for (const auto& s : pilot) {
      for (std::size_t i = 0; i < dim; ++i) shift[i] += s.x[i];
    }
    for (double& v : shift) v /= static_cast<double>(pilot.size());
    for (const auto& s : pilot) {
      for (std::size_t i = 0; i < dim; ++i) scale[i] += (s.x[i] - shift[i]) * (s.x[i] - shift[i]);
    }
    for (double& v : scale) v = std::max(std::sqrt(v / static_cast<double>(pilot.size())), 1e-8);
    net.set_input_normalization(std::move(shift), std::move(scale));
    std::vector<double> ratios;
    ratios.reserve(pilot.size());
    for (const auto& s : pilot) ratios.push_back(squared_norm(s.residual) / squared_norm(s.eps));
    std::nth_element(ratios.begin(), ratios.begin() + static_cast<std::ptrdiff_t>(ratios.size() / 2), ratios.end());
    const double level = std::sqrt(ratios[ratios.size() / 2]);
    if (level > net.floor()) net.set_output_level(level);
  }

  Optimizer opt;
  opt.kind = config.optimizer;
  opt.eta = config.eta;
  const std::size_t w = config.window;
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const auto batch = draw_batch(base, sigma_f, prior, config.batch_size, rng, config.parallel);
    result.loss_history.push_back(gradient_step(net, opt, batch));
    const std::size_t n = result.loss_history.size();
    if (n >= 2 * w && n % w == 0) {
      const auto& h = result.loss_history;
      const double prev = std::accumulate(h.end() - 2 * static_cast<std::ptrdiff_t>(w), h.end() - static_cast<std::ptrdiff_t>(w), 0.0) / static_cast<double>(w);
      const double last = std::accumulate(h.end() - static_cast<std::ptrdiff_t>(w), h.end(), 0.0) / static_cast<double>(w);
      if (prev > 0.0 && std::abs(last - prev) / prev < config.plateau_tol) {
        result.plateaued = true;
        break;
      }
    }
  }
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

HeldOutLoss held_out_loss(const BackwardScale& sigma_b, const FlowMap& base, double sigma_f,
                          const GaussianPrior& prior, std::size_t n, Rng& rng, bool parallel) {
  if (n < 2) throw ArgumentError("held_out_loss: need at least two trajectories");
  const auto samples = draw_batch(base, sigma_f, prior, n, rng, parallel);
  std::vector<double> losses(n);
  for (std::size_t b = 0; b < n; ++b) {
    const BackwardScaleValue sb = sigma_b.at(samples[b].x);
    double nb = 0.0;
    for (std::size_t i = 0; i < samples[b].residual.size(); ++i) {
      const double e = samples[b].residual[i] / sb.at(i);
      nb += e * e;
    }
    losses[b] = std::abs(squared_norm(samples[b].eps) - nb);
  }
  const double mean = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double l : losses) var += (l - mean) * (l - mean);
  var /= static_cast<double>(n - 1);
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

void write_loss_csv(const std::vector<double>& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  out << "iteration,loss\n";
  for (std::size_t i = 0; i < history.size(); ++i) out << i << ',' << history[i] << '\n';
}

}  // namespace flowpert
