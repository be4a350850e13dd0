#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "flowpert/perturbation.hpp"
#include "flowpert/rng.hpp"

namespace flowpert {

/// Scalar backward-scale network sigma_b(x; theta):
///   h = tanh(W_in xhat + b_in),  h <- h + tanh(W_k h + c_k) for each block,
///   sigma_b = softplus(w_out . h + b_out) + floor,
/// where xhat = (x - input_shift) / input_scale is a fixed normalization.
class SigmaBNet final : public BackwardScale {
 public:
  SigmaBNet() = default;
  SigmaBNet(std::size_t dim, std::size_t hidden, std::size_t blocks, double floor = 1e-6);

  /// Glorot-style normal weights, zero biases, zero output layer.
  void initialize(Rng& rng);

  std::size_t dim() const { return dim_; }
  std::size_t hidden() const { return hidden_; }
  std::size_t blocks() const { return blocks_; }
  double floor() const { return floor_; }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::size_t n_params() const { return params_.size(); }

  void set_input_normalization(Vec shift, Vec scale);
  /// Sets the output bias so that evaluate() returns `value` when the output weights are zero.
  void set_output_level(double value);

  double evaluate(std::span<const double> x) const;
  /// evaluate() plus accumulation of weight * d sigma_b / d theta into grad.
  double evaluate_accumulate_grad(std::span<const double> x, double weight, std::span<double> grad) const;

  BackwardScaleValue at(std::span<const double> x) const override { return {evaluate(x), {}}; }

  nlohmann::json to_json() const;
  static SigmaBNet from_json(const nlohmann::json& j);

 private:
  std::size_t dim_ = 0;
  std::size_t hidden_ = 0;
  std::size_t blocks_ = 0;
  double floor_ = 1e-6;
  Vec params_;
  Vec input_shift_;
  Vec input_scale_;

  // offsets into params_
  std::size_t off_w_in() const { return 0; }
  std::size_t off_b_in() const { return hidden_ * dim_; }
  std::size_t off_block_w(std::size_t k) const { return off_b_in() + hidden_ + k * (hidden_ * hidden_ + hidden_); }
  std::size_t off_block_b(std::size_t k) const { return off_block_w(k) + hidden_ * hidden_; }
  std::size_t off_w_out() const { return off_block_w(blocks_); }
  std::size_t off_b_out() const { return off_w_out() + hidden_; }
};

/// theta-independent part of a training trajectory: the forward noise, the
/// perturbed endpoint x and the residual z - f^{-1}(x).
struct TrainingSample {
  Vec eps;
  Vec x;
  Vec residual;
};

TrainingSample make_training_sample(const FlowMap& base, double sigma_f, std::span<const double> z,
                                    std::span<const double> eps);

/// | |eps|^2 - |eps_back|^2 | for the trajectory generated from (z, eps).
double loss_sample(const PerturbedFlow& pf, std::span<const double> z, std::span<const double> eps);

/// Same loss with the network evaluated on a precomputed sample.
double loss_sample(const SigmaBNet& net, const TrainingSample& s);

/// Mean loss over the batch and its gradient with respect to theta. The loss
/// is treated as having zero slope where |eps|^2 == |eps_back|^2.
double batch_loss_and_gradient(const SigmaBNet& net, std::span<const TrainingSample> batch, std::span<double> grad);

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  double eta = 1e-3;
  std::size_t batch_size = 256;
  std::size_t iterations = 2000;
  OptimizerKind optimizer = OptimizerKind::adam;
  double floor = 1e-6;
  std::size_t window = 100;
  double plateau_tol = 1e-3;
  /// Start from the constant scale that matches |eps_back| to |eps| on a pilot batch.
  bool init_from_pilot = true;
  bool parallel = true;

  void validate() const;
};

/// First/second moment state for the adaptive update; plain SGD ignores it.
struct Optimizer {
  OptimizerKind kind = OptimizerKind::adam;
  double eta = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t t = 0;
  Vec m;
  Vec v;

  void apply(std::span<double> params, std::span<const double> grad);
};

/// One optimizer update on a batch; returns the batch loss before the update.
double gradient_step(SigmaBNet& net, Optimizer& opt, std::span<const TrainingSample> batch);

/// Builds the samples for (z, eps) pairs through pf.base and applies gradient_step.
double gradient_step(SigmaBNet& net, Optimizer& opt, const PerturbedFlow& pf, std::span<const Vec> zs,
                     std::span<const Vec> epss);

struct TrainResult {
  std::vector<double> loss_history;
  double wall_seconds = 0.0;
  bool plateaued = false;
};

/// Algorithm: draw z from the prior and eps ~ N(0, I), form x = f(z) + sigma_f eps,
/// recover the backward noise through sigma_b and descend on the absolute
/// norm mismatch. Stops at the iteration budget or on a loss plateau.
TrainResult train(SigmaBNet& net, const FlowMap& base, double sigma_f, const GaussianPrior& prior,
                  const TrainConfig& config, Rng& rng);

/// Mean and spread of | |eps|^2 - |eps_back|^2 | on fresh trajectories.
struct HeldOutLoss {
  double mean = 0.0;
  double std_error = 0.0;
};

HeldOutLoss held_out_loss(const BackwardScale& sigma_b, const FlowMap& base, double sigma_f,
                          const GaussianPrior& prior, std::size_t n, Rng& rng, bool parallel = true);

void write_loss_csv(const std::vector<double>& history, const std::string& path);

}  // namespace flowpert
