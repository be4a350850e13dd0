#pragma once

#include "flowpert/flow_map.hpp"
#include "flowpert/target_gmm.hpp"

namespace flowpert {

/// Diagonal affine flow x_i = a_i z_i + b_i. Exact inverse and Jacobian.
class AffineFlow final : public FlowMap {
 public:
  AffineFlow(Vec scale, Vec shift);
  static AffineFlow identity(std::size_t dim);

  std::size_t dim() const override { return scale_.size(); }
  Vec forward(std::span<const double> z) const override;
  Vec inverse(std::span<const double> x) const override;

  const Vec& scale() const { return scale_; }
  const Vec& shift() const { return shift_; }

 private:
  Vec scale_;
  Vec shift_;
};

inline Vec affine_forward(const AffineFlow& flow, std::span<const double> z) { return flow.forward(z); }

/// sum_i log|a_i|. Throws NumericError for a singular flow.
double affine_log_det(const AffineFlow& flow);

/// Diagonal of sigma_f * d f^{-1}/dx, i.e. sigma_f / a_i: the backward scale
/// under which the recovered backward noise has exactly the norm of the
/// forward noise.
Vec affine_sigma_b_exact(const AffineFlow& flow, double sigma_f);

/// Law of f(z) for z ~ N(0, prior_scale^2 I): N(b, diag(a^2 prior_scale^2)).
GmmSpec affine_pushforward(const AffineFlow& flow, double prior_scale);

}  // namespace flowpert
