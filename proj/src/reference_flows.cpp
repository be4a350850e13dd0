#include "flowpert/reference_flows.hpp"

#include <cmath>

#include "flowpert/errors.hpp"

namespace flowpert {

AffineFlow::AffineFlow(Vec scale, Vec shift) : scale_(std::move(scale)), shift_(std::move(shift)) {
  if (scale_.empty() || scale_.size() != shift_.size()) {
    throw ArgumentError("AffineFlow: scale and shift must be non-empty and of equal length");
  }
}

AffineFlow AffineFlow::identity(std::size_t dim) { return AffineFlow(Vec(dim, 1.0), Vec(dim, 0.0)); }

Vec AffineFlow::forward(std::span<const double> z) const {
  if (z.size() != dim()) throw ArgumentError("AffineFlow::forward: wrong length");
  Vec x(dim());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = scale_[i] * z[i] + shift_[i];
  return x;
}

Vec AffineFlow::inverse(std::span<const double> x) const {
  if (x.size() != dim()) throw ArgumentError("AffineFlow::inverse: wrong length");
  Vec z(dim());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = (x[i] - shift_[i]) / scale_[i];
  return z;
}

double affine_log_det(const AffineFlow& flow) {
  double acc = 0.0;
  for (std::size_t i = 0; i < flow.dim(); ++i) {
    if (flow.scale()[i] == 0.0) throw NumericError("affine_log_det: singular flow", static_cast<std::ptrdiff_t>(i));
    acc += std::log(std::abs(flow.scale()[i]));
  }
  return acc;
}

Vec affine_sigma_b_exact(const AffineFlow& flow, double sigma_f) {
  if (!(sigma_f > 0.0)) throw ArgumentError("affine_sigma_b_exact: sigma_f must be positive");
  Vec out(flow.dim());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (flow.scale()[i] == 0.0) throw NumericError("affine_sigma_b_exact: singular flow", static_cast<std::ptrdiff_t>(i));
    out[i] = sigma_f / std::abs(flow.scale()[i]);
  }
  return out;
}

GmmSpec affine_pushforward(const AffineFlow& flow, double prior_scale) {
  Vec var(flow.dim());
  for (std::size_t i = 0; i < var.size(); ++i) {
    const double s = flow.scale()[i] * prior_scale;
    var[i] = s * s;
  }
  return make_gmm({1.0}, {flow.shift()}, {var});
}

}  // namespace flowpert
