#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace rlshift {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Folds a sequence of coordinates into one seed. Order matters.
constexpr std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (std::uint64_t p : parts) h = mix64(h ^ mix64(p));
  return h;
}

/// Named sub-streams so that adding draws to one consumer never perturbs another.
namespace stream {
inline constexpr std::uint64_t kSourceLabels = 1;
inline constexpr std::uint64_t kSourceFeatures = 2;
inline constexpr std::uint64_t kPoolLabels = 3;
inline constexpr std::uint64_t kPoolFeatures = 4;
inline constexpr std::uint64_t kShiftDirections = 5;
inline constexpr std::uint64_t kDirichlet = 6;
inline constexpr std::uint64_t kRealize = 7;
inline constexpr std::uint64_t kSourceSplit = 8;
inline constexpr std::uint64_t kTargetSplit = 9;
inline constexpr std::uint64_t kInit = 10;
inline constexpr std::uint64_t kSourceOrder = 11;
inline constexpr std::uint64_t kTargetOrder = 12;
inline constexpr std::uint64_t kSourceBalance = 13;
inline constexpr std::uint64_t kTargetBalance = 14;
}  // namespace stream

/// Deterministic random stream keyed by (seed, stream_id). Satisfies
/// UniformRandomBitGenerator so it composes with <random> distributions.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : seed_(seed), stream_id_(stream_id), engine_(derive_seed({seed, stream_id})) {}

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  double gamma(double shape) { return std::gamma_distribution<double>(shape, 1.0)(engine_); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
};

}  // namespace rlshift
