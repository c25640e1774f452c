#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace clearner {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using RowList = std::vector<Index>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Malformed tabular input. row is the 1-based data row, 0 for header problems.
class DataError : public Error {
 public:
  DataError(const std::string& message, std::string column, std::size_t row);
  const std::string& column() const { return column_; }
  std::size_t row() const { return row_; }

 private:
  std::string column_;
  std::size_t row_;
};

class SingularSystem : public Error {
 public:
  SingularSystem(const std::string& message, double condition);
  double condition() const { return condition_; }

 private:
  double condition_;
};

class SeparationError : public Error {
 public:
  using Error::Error;
};

class DegenerateDirection : public Error {
 public:
  using Error::Error;
};

// An iterative solver ran out of budget. best holds the last usable iterate.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& message, double residual, int iterations,
                   Vector best = Vector());
  double residual() const { return residual_; }
  int iterations() const { return iterations_; }
  const Vector& best() const { return best_; }

 private:
  double residual_;
  int iterations_;
  Vector best_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// xoshiro256** seeded through splitmix64. Satisfies UniformRandomBitGenerator.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }
  result_type operator()();

  // Uniform double on [0, 1) from the top 53 bits.
  double uniform();

 private:
  std::uint64_t s_[4];
};

inline Matrix take_rows(const Matrix& m, const RowList& rows) {
  return m(rows, Eigen::all);
}

inline Vector take(const Vector& v, const RowList& rows) { return v(rows); }

inline double logistic(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

// Sample variance with denominator n (the empirical variance Var_n).
double empirical_variance(const Vector& v);

}  // namespace clearner
