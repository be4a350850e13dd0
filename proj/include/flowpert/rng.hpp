#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace flowpert {

/// Random stream: a 64-bit Mersenne twister plus a standard normal
/// distribution. The complete state (including the cached normal deviate)
/// round-trips through serialize()/deserialize().
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  /// Stream derived from a master seed, a component label and an index.
  /// Streams for different (label, index) pairs are independent.
  static Rng derive(std::uint64_t master_seed, std::string_view label, std::uint64_t index = 0);

  double normal() { return normal_(engine_); }
  double uniform() { return std::generate_canonical<double, 64>(engine_); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  void fill_normal(std::span<double> out);
  std::vector<double> normal_vector(std::size_t n);

  std::mt19937_64& engine() { return engine_; }

  std::string serialize() const;
  static Rng deserialize(const std::string& state);

  bool operator==(const Rng& other) const;

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

/// FNV-1a hash of a label, used for labelled stream derivation.
std::uint64_t hash_label(std::string_view label);

}  // namespace flowpert
