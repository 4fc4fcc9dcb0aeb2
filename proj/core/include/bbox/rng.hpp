#pragma once

#include <cstdint>
#include <string_view>

namespace bbox {

constexpr std::uint64_t fnv1a(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : text) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Counter-based random stream. Draw i of a stream is a pure function of
/// (seed, example, purpose, i), so streams never depend on scheduling.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t example, std::string_view purpose);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1).
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n). n must be positive.
  std::uint64_t index(std::uint64_t n) noexcept;
  double normal() noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }
  double random_sign() noexcept { return (next_u64() >> 63) ? 1.0 : -1.0; }

  /// Independent child stream keyed by an extra tag.
  RngStream split(std::string_view tag) const;

 private:
  RngStream(std::uint64_t seed, std::uint64_t key) : seed_(seed), key_(key) {}

  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

RngStream make_rng(std::uint64_t seed, std::uint64_t example, std::string_view purpose);

}  // namespace bbox
