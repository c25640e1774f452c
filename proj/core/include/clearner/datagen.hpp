#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "clearner/common.hpp"

namespace clearner {

// Immutable observation table. a holds 0/1 values stored as doubles.
struct Dataset {
  Matrix x;
  Vector a;
  Vector y;
  std::optional<Vector> true_pi;
  std::optional<double> truth;

  Index n() const { return x.rows(); }
  Index d() const { return x.cols(); }
  Index treated_count() const;

  // Throws InvalidArgument when an invariant is broken.
  void validate() const;
  Dataset subset(const RowList& rows) const;
  // FNV-1a over the raw bytes of x, a and y.
  std::uint64_t hash() const;
};

struct FoldPlan {
  std::vector<int> assignments;
  int k = 1;

  // Rows in fold `fold` (evaluation rows) and in its complement (training rows).
  RowList eval_rows(int fold) const;
  RowList train_rows(int fold) const;
  // Single-split plan: one fold where train = eval = all rows.
  static FoldPlan single(Index n);
  bool single_split() const { return k == 1; }
};

struct KsConfig {
  Index n = 200;
  double c = 1.0;
  bool misspecified = true;
  bool flipped = false;
  std::uint64_t seed = 1;
  std::uint64_t stream = 0;
};

// Population means of the Kang-Schafer outcome law.
inline constexpr double kKsOutcomeMean = 210.0;

Dataset gen_kang_schafer(const KsConfig& cfg);

struct HeavyTailConfig {
  Index n = 500;
  std::uint64_t seed = 1;
  std::uint64_t stream = 0;
  // Forces pi = 1 and A = 1 everywhere.
  bool degenerate_pi_one = false;
};

Dataset gen_heavy_tail(const HeavyTailConfig& cfg);
Dataset gen_heavy_tail(Index n, std::uint64_t seed);

Dataset load_csv(const std::string& path);
void write_csv(const Dataset& data, const std::string& path);

FoldPlan make_folds(Index n, int k, std::uint64_t seed);

}  // namespace clearner
