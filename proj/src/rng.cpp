#include "flowpert/rng.hpp"

#include <sstream>

#include "flowpert/errors.hpp"

namespace flowpert {

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

std::uint64_t hash_label(std::string_view label) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Rng Rng::derive(std::uint64_t master_seed, std::string_view label, std::uint64_t index) {
  const std::uint64_t h = hash_label(label);
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  Rng rng;
  rng.engine_.seed(seq);
  return rng;
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw ArgumentError("Rng::index: empty range");
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

void Rng::fill_normal(std::span<double> out) {
  for (double& v : out) v = normal_(engine_);
}

std::vector<double> Rng::normal_vector(std::size_t n) {
  std::vector<double> v(n);
  fill_normal(v);
  return v;
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os.precision(17);
  os << engine_ << ' ' << normal_;
  return os.str();
}

Rng Rng::deserialize(const std::string& state) {
  Rng rng;
  std::istringstream is(state);
  is >> rng.engine_ >> rng.normal_;
  if (!is) throw ArgumentError("Rng::deserialize: malformed state string");
  return rng;
}

bool Rng::operator==(const Rng& other) const {
  return engine_ == other.engine_ && normal_ == other.normal_;
}

}  // namespace flowpert
