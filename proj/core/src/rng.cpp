#include "bbox/rng.hpp"

#include <cmath>
#include <numbers>

namespace bbox {

namespace {

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t example, std::string_view purpose)
    : seed_(seed), key_(mix64(mix64(seed) ^ mix64(example + 0x632be59bd9b4e019ULL) ^ fnv1a(purpose))) {}

std::uint64_t RngStream::next_u64() noexcept {
  // Two rounds keyed by the stream; the counter alone drives the sequence.
  const std::uint64_t c = counter_++;
  return mix64(mix64(key_ ^ (c * 0xd1b54a32d192ed03ULL)) + key_);
}

double RngStream::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::index(std::uint64_t n) noexcept {
  // Lemire multiply-shift
  __extension__ using u128 = unsigned __int128;
  return static_cast<std::uint64_t>((static_cast<u128>(next_u64()) * n) >> 64);
}

double RngStream::normal() noexcept {
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

RngStream RngStream::split(std::string_view tag) const {
  return RngStream(seed_, mix64(key_ ^ fnv1a(tag)));
}

RngStream make_rng(std::uint64_t seed, std::uint64_t example, std::string_view purpose) {
  return RngStream(seed, example, purpose);
}

}  // namespace bbox
