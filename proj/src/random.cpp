#include "excel/random.hpp"

#include <cmath>
#include <numbers>

namespace excel {

namespace {

constexpr std::uint32_t kM0 = 0xD2511F53u;
constexpr std::uint32_t kM1 = 0xCD9E8D57u;
constexpr std::uint32_t kW0 = 0x9E3779B9u;
constexpr std::uint32_t kW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(product >> 32);
  lo = static_cast<std::uint32_t>(product);
}

}  // namespace

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

Philox Philox::stream(std::uint64_t master, std::initializer_list<std::uint64_t> tags) {
  return stream(master, std::span<const std::uint64_t>(tags.begin(), tags.size()));
}

Philox Philox::stream(std::uint64_t master, std::span<const std::uint64_t> tags) {
  std::uint64_t key = mix64(master);
  for (std::uint64_t tag : tags) key = mix64(key ^ mix64(tag + 0x632BE59BD9B4E019ull));
  return Philox(key);
}

Philox::Block Philox::encrypt(Block ctr, Key key) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kW0;
      key[1] += kW1;
    }
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kM0, ctr[0], hi0, lo0);
    mulhilo(kM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

Philox::result_type Philox::operator()() {
  if (buffered_ == 0) {
    const Block out = encrypt({lo(counter_), hi(counter_), 0u, 0u}, key_);
    ++counter_;
    buffer_[0] = (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
    buffer_[1] = (static_cast<std::uint64_t>(out[3]) << 32) | out[2];
    buffered_ = 2;
  }
  return buffer_[2 - buffered_--];
}

double Sampler::uniform() {
  // 53 random bits, shifted by half an ulp so 0 is never returned.
  return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53;
}

double Sampler::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

int Sampler::binomial(int trials, double p) {
  int count = 0;
  for (int i = 0; i < trials; ++i) count += bernoulli(p) ? 1 : 0;
  return count;
}

double Sampler::exponential(double rate) { return -std::log(uniform()) / rate; }

double Sampler::chi_squared(int df) {
  double sum = 0.0;
  for (int i = 0; i < df; ++i) {
    const double z = normal();
    sum += z * z;
  }
  return sum;
}

double Sampler::student_t(int df) {
  const double z = normal();
  return z / std::sqrt(chi_squared(df) / df);
}

std::uint64_t Sampler::index(std::uint64_t n) {
  // Reject the 2^64 mod n smallest draws so the modulus is exactly uniform.
  const std::uint64_t threshold = (0 - n) % n;
  std::uint64_t draw;
  do {
    draw = gen_();
  } while (draw < threshold);
  return draw % n;
}

}  // namespace excel
