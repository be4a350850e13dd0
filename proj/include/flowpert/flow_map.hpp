#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace flowpert {

using Vec = std::vector<double>;

/// An invertible map f: z -> x on R^D.
class FlowMap {
 public:
  virtual ~FlowMap() = default;
  virtual std::size_t dim() const = 0;
  virtual Vec forward(std::span<const double> z) const = 0;
  virtual Vec inverse(std::span<const double> x) const = 0;
};

}  // namespace flowpert
