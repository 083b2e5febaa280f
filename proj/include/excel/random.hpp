#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>

namespace excel {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
//
// Every draw is a pure function of (key, counter), so independent streams are
// obtained by deriving a key from (master seed, purpose, indices) instead of
// sharing one sequential engine across replicates or threads. Outputs are
// 64-bit: each 128-bit block yields two values.
class Philox {
 public:
  using result_type = std::uint64_t;
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  Philox() : Philox(0) {}
  explicit Philox(std::uint64_t key) : key_{lo(key), hi(key)} {}

  // Stream keyed by a mix of the master seed and any number of tags, e.g.
  // Philox::stream(seed, {kPurposeBootstrap, replicate}).
  static Philox stream(std::uint64_t master, std::initializer_list<std::uint64_t> tags);
  static Philox stream(std::uint64_t master, std::span<const std::uint64_t> tags);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  // Raw block function, exposed for known-answer tests.
  static Block encrypt(Block counter, Key key);

  std::uint64_t counter() const { return counter_; }

 private:
  static std::uint32_t lo(std::uint64_t v) { return static_cast<std::uint32_t>(v); }
  static std::uint32_t hi(std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); }

  Key key_;
  std::uint64_t counter_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int buffered_ = 0;
};

// SplitMix64 finalizer; used for seed derivation only.
std::uint64_t mix64(std::uint64_t x);

// Purpose tags for stream derivation. Values are part of the determinism
// contract: changing them changes every generated dataset.
namespace stream_tag {
inline constexpr std::uint64_t kGenerate = 0x67656e;
inline constexpr std::uint64_t kBootstrap = 0x626f6f74;
inline constexpr std::uint64_t kBootstrapRedraw = 0x72656472;
inline constexpr std::uint64_t kSelectTau = 0x746175;
inline constexpr std::uint64_t kReplication = 0x726570;
inline constexpr std::uint64_t kIvRepair = 0x697672;
}  // namespace stream_tag

// Platform-independent variate generation on top of Philox. The standard
// library distributions are implementation defined, so they are not used.
class Sampler {
 public:
  explicit Sampler(Philox gen) : gen_(gen) {}

  double uniform();  // open interval (0, 1)
  double normal();   // N(0, 1), Box-Muller
  double normal(double mean, double sd) { return mean + sd * normal(); }
  bool bernoulli(double p) { return uniform() < p; }
  int binomial(int trials, double p);
  double exponential(double rate = 1.0);
  double chi_squared(int df);
  double student_t(int df);
  // Uniform integer in [0, n), unbiased.
  std::uint64_t index(std::uint64_t n);

 private:
  Philox gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace excel
