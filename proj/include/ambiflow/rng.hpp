#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace ambiflow {

/// Counter-based random generator.
///
/// Every draw is a pure function of (key, counter), so a stream can be
/// reproduced from its seed, label and position alone. Independent streams
/// are derived by hashing a label and an index into the key; nothing depends
/// on the order in which streams are created.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed, std::string_view label = {}, std::uint64_t index = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal draw (Box-Muller, one value per two uniforms).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  Rng derive(std::string_view label, std::uint64_t index = 0) const;

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }
  static Rng from_state(std::uint64_t key, std::uint64_t counter);

 private:
  Rng() = default;
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

std::uint64_t hash_label(std::string_view label);
std::uint64_t mix64(std::uint64_t x);

}  // namespace ambiflow
