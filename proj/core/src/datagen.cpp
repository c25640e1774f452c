#include "clearner/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace clearner {

Index Dataset::treated_count() const {
  return static_cast<Index>((a.array() > 0.5).count());
}

void Dataset::validate() const {
  const Index rows = x.rows();
  if (rows < 1) throw InvalidArgument("dataset must have at least one row");
  if (a.size() != rows || y.size() != rows)
    throw InvalidArgument("x, a and y must have the same number of rows");
  if (!x.allFinite()) throw InvalidArgument("x contains non-finite values");
  for (Index i = 0; i < rows; ++i) {
    if (a[i] != 0.0 && a[i] != 1.0)
      throw InvalidArgument("a must be binary (row " + std::to_string(i + 1) + ")");
  }
  if (true_pi) {
    if (true_pi->size() != rows)
      throw InvalidArgument("true_pi has the wrong length");
    for (Index i = 0; i < rows; ++i) {
      const double p = (*true_pi)[i];
      if (!(p > 0.0 && p <= 1.0))
        throw InvalidArgument("true_pi must lie in (0,1]");
    }
  }
}

Dataset Dataset::subset(const RowList& rows) const {
  Dataset out;
  out.x = take_rows(x, rows);
  out.a = take(a, rows);
  out.y = take(y, rows);
  if (true_pi) out.true_pi = take(*true_pi, rows);
  out.truth = truth;
  return out;
}

std::uint64_t Dataset::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const double* data, Index count) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < static_cast<std::size_t>(count) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  mix(x.data(), x.size());
  mix(a.data(), a.size());
  mix(y.data(), y.size());
  return h;
}

RowList FoldPlan::eval_rows(int fold) const {
  if (k == 1) {
    RowList all(assignments.size());
    std::iota(all.begin(), all.end(), Index{0});
    return all;
  }
  RowList rows;
  for (std::size_t i = 0; i < assignments.size(); ++i)
    if (assignments[i] == fold) rows.push_back(static_cast<Index>(i));
  return rows;
}

RowList FoldPlan::train_rows(int fold) const {
  if (k == 1) return eval_rows(0);
  RowList rows;
  for (std::size_t i = 0; i < assignments.size(); ++i)
    if (assignments[i] != fold) rows.push_back(static_cast<Index>(i));
  return rows;
}

FoldPlan FoldPlan::single(Index n) {
  FoldPlan plan;
  plan.k = 1;
  plan.assignments.assign(static_cast<std::size_t>(n), 0);
  return plan;
}

Dataset gen_kang_schafer(const KsConfig& cfg) {
  if (cfg.n < 2) throw InvalidArgument("KsConfig.n must be at least 2");
  if (!(cfg.c >= 0.0)) throw InvalidArgument("KsConfig.c must be non-negative");

  Rng rng(cfg.seed, cfg.stream);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index n = cfg.n;
  Dataset data;
  data.x.resize(n, 4);
  data.a.resize(n);
  data.y.resize(n);
  Vector pi(n);

  for (Index i = 0; i < n; ++i) {
    double xi[4];
    for (double& v : xi) v = normal(rng);
    const double eps = normal(rng);
    const double u = rng.uniform();

    data.y[i] = 210.0 + 27.4 * xi[0] + 13.7 * (xi[1] + xi[2] + xi[3]) + eps;
    const double lin = cfg.c * (-xi[0] + 0.5 * xi[1] - 0.25 * xi[2] - 0.1 * xi[3]);
    pi[i] = logistic(lin);
    double treated = u < pi[i] ? 1.0 : 0.0;
    if (cfg.flipped) {
      treated = 1.0 - treated;
      pi[i] = 1.0 - pi[i];
    }
    data.a[i] = treated;

    if (cfg.misspecified) {
      data.x(i, 0) = std::exp(xi[0] / 2.0);
      data.x(i, 1) = xi[1] / (1.0 + std::exp(xi[0])) + 10.0;
      data.x(i, 2) = std::pow(xi[0] * xi[2] / 25.0 + 0.6, 3);
      data.x(i, 3) = std::pow(xi[1] + xi[3] + 20.0, 2);
    } else {
      for (int j = 0; j < 4; ++j) data.x(i, j) = xi[j];
    }
  }
  data.true_pi = std::move(pi);
  // Outcomes are missing at random, so the estimand is E[Y] for either labelling.
  data.truth = kKsOutcomeMean;
  return data;
}

Dataset gen_heavy_tail(const HeavyTailConfig& cfg) {
  if (cfg.n < 2) throw InvalidArgument("heavy-tail n must be at least 2");
  Rng rng(cfg.seed, cfg.stream);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index n = cfg.n;
  Dataset data;
  data.x.resize(n, 1);
  data.a.resize(n);
  data.y.resize(n);
  Vector pi(n);
  for (Index i = 0; i < n; ++i) {
    double p = rng.uniform();
    while (p <= 0.0) p = rng.uniform();
    const double eps = normal(rng);
    const double u = rng.uniform();
    double x1 = logit(p);
    if (cfg.degenerate_pi_one) {
      // Keep x finite: the covariate stays on the logistic scale of the draw.
      p = 1.0;
    }
    data.x(i, 0) = x1;
    pi[i] = p;
    data.a[i] = u < p ? 1.0 : 0.0;
    data.y[i] = 210.0 + 10.0 * x1 + eps;
  }
  data.true_pi = std::move(pi);
  // logit(U) is standard logistic with mean zero.
  data.truth = 210.0;
  return data;
}

Dataset gen_heavy_tail(Index n, std::uint64_t seed) {
  HeavyTailConfig cfg;
  cfg.n = n;
  cfg.seed = seed;
  return gen_heavy_tail(cfg);
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    const auto first = field.find_first_not_of(" \t\r");
    const auto last = field.find_last_not_of(" \t\r");
    fields.push_back(first == std::string::npos ? std::string()
                                                : field.substr(first, last - first + 1));
  }
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_number(const std::string& text, const std::string& column,
                    std::size_t row) {
  double value = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  if (!text.empty() && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (text.empty() || ec != std::errc() || ptr != end)
    throw DataError("row " + std::to_string(row) + ", column '" + column +
                        "': cannot parse '" + text + "' as a number",
                    column, row);
  if (!std::isfinite(value))
    throw DataError("row " + std::to_string(row) + ", column '" + column +
                        "': non-finite value",
                    column, row);
  return value;
}

}  // namespace

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'", "", 0);

  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path + "' is empty", "", 0);
  const auto header = split_fields(line);

  std::map<int, std::size_t> x_columns;
  std::optional<std::size_t> a_col, y_col, pi_col;
  for (std::size_t j = 0; j < header.size(); ++j) {
    const std::string& name = header[j];
    if (name == "a") {
      a_col = j;
    } else if (name == "y") {
      y_col = j;
    } else if (name == "pi") {
      pi_col = j;
    } else if (name.size() > 1 && name[0] == 'x') {
      int k = 0;
      auto [ptr, ec] = std::from_chars(name.data() + 1, name.data() + name.size(), k);
      if (ec != std::errc() || ptr != name.data() + name.size() || k < 1)
        throw DataError("unrecognised column '" + name + "'", name, 0);
      if (!x_columns.emplace(k, j).second)
        throw DataError("duplicate column '" + name + "'", name, 0);
    } else {
      throw DataError("unrecognised column '" + name + "'", name, 0);
    }
  }
  if (!a_col) throw DataError("missing required column 'a'", "a", 0);
  if (!y_col) throw DataError("missing required column 'y'", "y", 0);
  if (x_columns.empty()) throw DataError("missing required column 'x1'", "x1", 0);
  const int d = static_cast<int>(x_columns.size());
  for (int k = 1; k <= d; ++k) {
    if (!x_columns.count(k)) {
      const std::string name = "x" + std::to_string(k);
      throw DataError("missing required column '" + name + "'", name, 0);
    }
  }

  std::vector<std::vector<double>> rows;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++row;
    const auto fields = split_fields(line);
    if (fields.size() != header.size())
      throw DataError("row " + std::to_string(row) + " has " +
                          std::to_string(fields.size()) + " fields, expected " +
                          std::to_string(header.size()),
                      "", row);
    std::vector<double> values(header.size());
    for (std::size_t j = 0; j < header.size(); ++j)
      values[j] = parse_number(fields[j], header[j], row);
    const double a = values[*a_col];
    if (a != 0.0 && a != 1.0)
      throw DataError("row " + std::to_string(row) + ", column 'a': value " +
                          fields[*a_col] + " is not binary",
                      "a", row);
    if (pi_col) {
      const double p = values[*pi_col];
      if (!(p > 0.0 && p <= 1.0))
        throw DataError("row " + std::to_string(row) + ", column 'pi': value " +
                            fields[*pi_col] + " outside (0,1]",
                        "pi", row);
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw DataError("'" + path + "' has no data rows", "", 0);

  const Index n = static_cast<Index>(rows.size());
  Dataset data;
  data.x.resize(n, d);
  data.a.resize(n);
  data.y.resize(n);
  Vector pi(pi_col ? n : 0);
  for (Index i = 0; i < n; ++i) {
    const auto& values = rows[static_cast<std::size_t>(i)];
    for (int k = 1; k <= d; ++k) data.x(i, k - 1) = values[x_columns.at(k)];
    data.a[i] = values[*a_col];
    data.y[i] = values[*y_col];
    if (pi_col) pi[i] = values[*pi_col];
  }
  if (pi_col) data.true_pi = std::move(pi);
  return data;
}

void write_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out.precision(17);
  for (Index j = 0; j < data.d(); ++j) out << 'x' << (j + 1) << ',';
  out << "a,y";
  if (data.true_pi) out << ",pi";
  out << '\n';
  for (Index i = 0; i < data.n(); ++i) {
    for (Index j = 0; j < data.d(); ++j) out << data.x(i, j) << ',';
    out << static_cast<int>(data.a[i]) << ',' << data.y[i];
    if (data.true_pi) out << ',' << (*data.true_pi)[i];
    out << '\n';
  }
  if (!out) throw Error("failed while writing '" + path + "'");
}

FoldPlan make_folds(Index n, int k, std::uint64_t seed) {
  if (k < 2) throw InvalidArgument("fold count must be at least 2");
  if (k > n) throw InvalidArgument("fold count exceeds the number of rows");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(seed, 0x666f6c64ULL);
  std::shuffle(order.begin(), order.end(), rng);
  FoldPlan plan;
  plan.k = k;
  plan.assignments.assign(static_cast<std::size_t>(n), 0);
  for (std::size_t pos = 0; pos < order.size(); ++pos)
    plan.assignments[static_cast<std::size_t>(order[pos])] = static_cast<int>(pos % k);
  return plan;
}

}  // namespace clearner
