#include "clearner/common.hpp"

#include <utility>

namespace clearner {

DataError::DataError(const std::string& message, std::string column,
                     std::size_t row)
    : Error(message), column_(std::move(column)), row_(row) {}

SingularSystem::SingularSystem(const std::string& message, double condition)
    : Error(message), condition_(condition) {}

ConvergenceError::ConvergenceError(const std::string& message, double residual,
                                   int iterations, Vector best)
    : Error(message),
      residual_(residual),
      iterations_(iterations),
      best_(std::move(best)) {}

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t state = seed;
  std::uint64_t mixed = splitmix64(state) ^ (stream * 0xd1342543de82ef95ULL);
  state = mixed;
  for (auto& word : s_) word = splitmix64(state);
}

Rng::result_type Rng::operator()() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

double empirical_variance(const Vector& v) {
  if (v.size() == 0) return 0.0;
  const double m = v.mean();
  return (v.array() - m).square().mean();
}

}  // namespace clearner
