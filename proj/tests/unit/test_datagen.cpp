#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "clearner/datagen.hpp"

using namespace clearner;

namespace {

std::string temp_file(const std::string& name, const std::string& content) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path) << content;
  return path.string();
}

}  // namespace

TEST(KangSchafer, TreatedArmMeanNear200AndPopulationMean210) {
  KsConfig cfg;
  cfg.n = 1000000;
  cfg.seed = 11;
  const Dataset d = gen_kang_schafer(cfg);
  EXPECT_DOUBLE_EQ(*d.truth, 210.0);
  double treated = 0.0;
  for (Index i = 0; i < d.n(); ++i) treated += d.a[i] * d.y[i];
  EXPECT_NEAR(treated / d.a.sum(), 200.0, 0.2);
  EXPECT_NEAR(d.y.mean(), 210.0, 0.2);
  EXPECT_NEAR(d.a.mean(), 0.5, 0.01);
}

TEST(KangSchafer, ZeroScaleGivesHalf) {
  KsConfig cfg;
  cfg.n = 500;
  cfg.c = 0.0;
  const Dataset d = gen_kang_schafer(cfg);
  for (Index i = 0; i < d.n(); ++i) EXPECT_EQ((*d.true_pi)[i], 0.5);
}

TEST(KangSchafer, Deterministic) {
  KsConfig cfg;
  cfg.seed = 5;
  EXPECT_EQ(gen_kang_schafer(cfg).hash(), gen_kang_schafer(cfg).hash());
  KsConfig other = cfg;
  other.seed = 6;
  EXPECT_NE(gen_kang_schafer(cfg).hash(), gen_kang_schafer(other).hash());
}

TEST(KangSchafer, SpecificationsSharePropensityAndOutcomes) {
  KsConfig mis;
  mis.seed = 3;
  KsConfig well = mis;
  well.misspecified = false;
  const Dataset a = gen_kang_schafer(mis), b = gen_kang_schafer(well);
  EXPECT_EQ(a.a, b.a);
  EXPECT_EQ(a.y, b.y);
  EXPECT_EQ(*a.true_pi, *b.true_pi);
  EXPECT_NE(a.x, b.x);
  // Misspecified covariates: x1 = exp(xi1 / 2) is positive.
  EXPECT_GT(a.x.col(0).minCoeff(), 0.0);
}

TEST(KangSchafer, FlippedRelabelsTreatment) {
  KsConfig cfg;
  cfg.seed = 8;
  KsConfig flipped = cfg;
  flipped.flipped = true;
  const Dataset a = gen_kang_schafer(cfg), b = gen_kang_schafer(flipped);
  for (Index i = 0; i < a.n(); ++i) {
    EXPECT_EQ(a.a[i], 1.0 - b.a[i]);
    EXPECT_NEAR((*a.true_pi)[i], 1.0 - (*b.true_pi)[i], 1e-15);
  }
  EXPECT_EQ(a.y, b.y);
}

TEST(HeavyTail, InverseWeightMeanDoesNotStabilise) {
  // E[1/pi] diverges for uniform pi: the average over many rows keeps growing.
  double small = 0.0, large = 0.0;
  for (std::uint64_t s = 1; s <= 20; ++s) {
    small += gen_heavy_tail(1000, s).true_pi->cwiseInverse().mean();
    large += gen_heavy_tail(100000, s).true_pi->cwiseInverse().mean();
  }
  EXPECT_GT(large / 20, small / 20 + 1.0);
}

TEST(HeavyTail, DeterministicAndTruth) {
  const Dataset a = gen_heavy_tail(300, 4), b = gen_heavy_tail(300, 4);
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.x, b.x);
  EXPECT_DOUBLE_EQ(*a.truth, 210.0);
  for (Index i = 0; i < a.n(); ++i) EXPECT_NEAR(a.x(i, 0), logit((*a.true_pi)[i]), 1e-12);
}

TEST(HeavyTail, DegenerateOverrideTreatsEveryRow) {
  HeavyTailConfig cfg;
  cfg.n = 100;
  cfg.degenerate_pi_one = true;
  const Dataset d = gen_heavy_tail(cfg);
  EXPECT_EQ(d.a.sum(), 100.0);
  EXPECT_EQ(d.true_pi->minCoeff(), 1.0);
}

TEST(LoadCsv, WellFormed) {
  const auto path = temp_file("clearner_ok.csv", "x1,x2,a,y\n1,2,1,3\n4,5,0,0\n7,8,1,9\n");
  const Dataset d = load_csv(path);
  EXPECT_EQ(d.n(), 3);
  EXPECT_EQ(d.d(), 2);
  EXPECT_EQ(d.x(2, 1), 8.0);
  EXPECT_FALSE(d.true_pi.has_value());
}

TEST(LoadCsv, ColumnsMappedByHeader) {
  const auto path = temp_file("clearner_order.csv", "y,pi,x2,a,x1\n3,0.5,2,1,1\n");
  const Dataset d = load_csv(path);
  EXPECT_EQ(d.x(0, 0), 1.0);
  EXPECT_EQ(d.x(0, 1), 2.0);
  EXPECT_EQ(d.y[0], 3.0);
  EXPECT_EQ((*d.true_pi)[0], 0.5);
}

TEST(LoadCsv, MissingColumnNamed) {
  const auto path = temp_file("clearner_missing.csv", "x1,y\n1,2\n");
  try {
    load_csv(path);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.column(), "a");
  }
}

TEST(LoadCsv, NonBinaryTreatmentCitesRow) {
  try {
    load_csv(std::string(CLEARNER_TEST_DATA) + "/bad_a.csv");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.row(), 5u);
    EXPECT_EQ(e.column(), "a");
  }
}

TEST(LoadCsv, NonFiniteCitesRowAndColumn) {
  const auto path = temp_file("clearner_nan.csv", "x1,a,y\n1,1,2\n1,0,nan\n");
  try {
    load_csv(path);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.row(), 2u);
    EXPECT_EQ(e.column(), "y");
  }
}

TEST(Csv, RoundTrip) {
  KsConfig cfg;
  cfg.n = 50;
  const Dataset d = gen_kang_schafer(cfg);
  const auto path = (std::filesystem::temp_directory_path() / "clearner_rt.csv").string();
  write_csv(d, path);
  const Dataset back = load_csv(path);
  EXPECT_EQ(back.x, d.x);
  EXPECT_EQ(back.a, d.a);
  EXPECT_EQ(back.y, d.y);
  EXPECT_EQ(*back.true_pi, *d.true_pi);
}

TEST(MakeFolds, EvenSizes) {
  const FoldPlan p = make_folds(10, 2, 1);
  EXPECT_EQ(p.eval_rows(0).size(), 5u);
  EXPECT_EQ(p.eval_rows(1).size(), 5u);
  const FoldPlan q = make_folds(7, 3, 1);
  std::multiset<std::size_t> sizes;
  for (int k = 0; k < 3; ++k) sizes.insert(q.eval_rows(k).size());
  EXPECT_EQ(sizes, (std::multiset<std::size_t>{2, 2, 3}));
}

TEST(MakeFolds, PartitionAndDeterminism) {
  const FoldPlan a = make_folds(101, 4, 9), b = make_folds(101, 4, 9);
  EXPECT_EQ(a.assignments, b.assignments);
  for (int k = 0; k < 4; ++k)
    EXPECT_EQ(a.eval_rows(k).size() + a.train_rows(k).size(), 101u);
  EXPECT_THROW(make_folds(3, 4, 1), InvalidArgument);
}

TEST(FoldPlan, SingleSplitUsesAllRowsTwice) {
  const FoldPlan p = FoldPlan::single(6);
  EXPECT_TRUE(p.single_split());
  EXPECT_EQ(p.eval_rows(0).size(), 6u);
  EXPECT_EQ(p.train_rows(0).size(), 6u);
}

TEST(Dataset, ValidateRejectsBadPropensity) {
  Dataset d;
  d.x = Matrix::Zero(2, 1);
  d.a = Vector::Ones(2);
  d.y = Vector::Zero(2);
  d.true_pi = Vector::Zero(2);
  EXPECT_THROW(d.validate(), InvalidArgument);
}
