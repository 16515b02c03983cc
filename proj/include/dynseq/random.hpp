#pragma once

#include <bit>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace dynseq {

/// splitmix64 finalizer; used to derive independent substream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = mix_seed(master);
  for (auto p : parts) h = mix_seed(h ^ mix_seed(p));
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<double> parts) {
  std::uint64_t h = mix_seed(master);
  for (double p : parts) h = mix_seed(h ^ mix_seed(std::bit_cast<std::uint64_t>(p)));
  return h;
}

/// Seeded generator. Uniform draws avoid std::uniform_real_distribution so
/// parameter initialization is identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix_seed(seed)) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dynseq
