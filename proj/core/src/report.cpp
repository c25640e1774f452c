#include <charconv>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "clearner/harness.hpp"

namespace clearner {

namespace {

const char* kRawHeader =
    "replication,dataset_hash,recipe,status,psi_hat,variance,ci_low,ci_high,truth,min_pi,"
    "max_inv_pi,constraint_residual,constraint_scale,error";
const char* kPropensityHeader = "replication,min,max,sd,cvar_low,max_inv,cvar_inv";

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v, int digits) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string with_se(const Metric& m, int digits) {
  return fixed(m.value, digits) + " (" + fixed(m.se, digits) + ")";
}

// Error messages end up in a CSV cell.
std::string sanitize(std::string s) {
  for (char& ch : s)
    if (ch == ',' || ch == '\n' || ch == '\r') ch = ch == ',' ? ';' : ' ';
  return s;
}

std::vector<std::string> split(const std::string& line, std::size_t max_fields) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (out.size() + 1 < max_fields) {
    const auto comma = line.find(',', start);
    if (comma == std::string::npos) break;
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  out.push_back(line.substr(start));
  return out;
}

double number(const std::string& text, std::size_t line) {
  if (text == "nan" || text == "-nan") return std::nan("");
  if (text == "inf") return INFINITY;
  if (text == "-inf") return -INFINITY;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw DataError("line " + std::to_string(line) + ": bad number '" + text + "'", "", line);
  return v;
}

std::optional<double> optional_number(const std::string& text, std::size_t line) {
  if (text.empty()) return std::nullopt;
  return number(text, line);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  return out;
}

}  // namespace

std::string metrics_table(const SimulationReport& report, ReportFormat format) {
  std::ostringstream out;
  if (format == ReportFormat::csv) {
    out << "estimator,runs,failures,extreme,bias,bias_se,mae,mae_se,rmse,rmse_se,median_ae,"
           "median_ae_se,coverage,coverage_se\n";
    for (const auto& s : report.summary) {
      out << s.recipe << ',' << s.runs << ',' << s.failures << ',' << s.extreme;
      for (const Metric* m : {&s.bias, &s.mae, &s.rmse, &s.median_ae, &s.coverage})
        out << ',' << exact(m->value) << ',' << exact(m->se);
      out << '\n';
    }
    return out.str();
  }
  out << "| Estimator | Bias | MAE | RMSE | Median AE | Coverage | Failures |\n";
  out << "|---|---|---|---|---|---|---|\n";
  for (const auto& s : report.summary) {
    out << "| " << s.recipe << " | " << with_se(s.bias, 2) << " | " << with_se(s.mae, 2) << " | "
        << with_se(s.rmse, 2) << " | " << with_se(s.median_ae, 2) << " | "
        << with_se(s.coverage, 2) << " | " << s.failures << " |\n";
  }
  return out.str();
}

std::string render_report(const SimulationReport& report, ReportFormat format,
                          const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory '" + dir + "': " + ec.message());
  const fs::path base(dir);

  const fs::path metrics =
      base / (report.name + (format == ReportFormat::csv ? "_metrics.csv" : "_metrics.md"));
  open_out(metrics) << metrics_table(report, format);

  auto raw = open_out(base / (report.name + "_raw.csv"));
  raw << kRawHeader << '\n';
  for (const auto& r : report.raw) {
    char hash[20];
    std::snprintf(hash, sizeof hash, "%016" PRIx64, r.dataset_hash);
    raw << r.replication << ',' << hash << ',' << r.recipe << ',' << (r.ok ? "ok" : "failed")
        << ',' << exact(r.psi_hat) << ',' << exact(r.variance) << ',' << exact(r.ci_low) << ','
        << exact(r.ci_high) << ',' << exact(r.truth) << ',' << exact(r.min_pi) << ','
        << exact(r.max_inv_pi) << ','
        << (r.constraint_residual ? exact(*r.constraint_residual) : "") << ','
        << (r.constraint_scale ? exact(*r.constraint_scale) : "") << ',' << sanitize(r.error)
        << '\n';
  }

  auto prop = open_out(base / (report.name + "_propensity.csv"));
  prop << kPropensityHeader << '\n';
  for (const auto& p : report.propensity_raw)
    prop << p.replication << ',' << exact(p.min) << ',' << exact(p.max) << ',' << exact(p.sd)
         << ',' << exact(p.cvar_low) << ',' << exact(p.max_inv) << ',' << exact(p.cvar_inv)
         << '\n';

  const PropensitySummary& s = report.propensity;
  auto summary = open_out(base / (report.name + "_propensity_summary.md"));
  summary << "| Datasets | Min | Max | SD | CVaR 5% | Max 1/pi | CVaR 5% 1/pi |\n"
          << "|---|---|---|---|---|---|---|\n"
          << "| " << s.datasets << " | " << with_se(s.min, 4) << " | " << with_se(s.max, 4)
          << " | " << with_se(s.sd, 4) << " | " << with_se(s.cvar_low, 4) << " | "
          << with_se(s.max_inv, 2) << " | " << with_se(s.cvar_inv, 2) << " |\n";
  return metrics.string();
}

std::vector<ReplicationRecord> load_raw_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'", "", 0);
  std::string line;
  if (!std::getline(in, line) || line != kRawHeader)
    throw DataError("'" + path + "' is not a raw replication table", "", 0);
  std::vector<ReplicationRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, 14);
    if (f.size() != 14)
      throw DataError("line " + std::to_string(lineno) + ": expected 14 fields", "", lineno);
    ReplicationRecord r;
    r.replication = static_cast<int>(number(f[0], lineno));
    r.dataset_hash = std::stoull(f[1], nullptr, 16);
    r.recipe = f[2];
    r.ok = f[3] == "ok";
    r.psi_hat = number(f[4], lineno);
    r.variance = number(f[5], lineno);
    r.ci_low = number(f[6], lineno);
    r.ci_high = number(f[7], lineno);
    r.truth = number(f[8], lineno);
    r.min_pi = number(f[9], lineno);
    r.max_inv_pi = number(f[10], lineno);
    r.constraint_residual = optional_number(f[11], lineno);
    r.constraint_scale = optional_number(f[12], lineno);
    r.error = f[13];
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<PropensityStats> load_propensity_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'", "", 0);
  std::string line;
  if (!std::getline(in, line) || line != kPropensityHeader)
    throw DataError("'" + path + "' is not a propensity table", "", 0);
  std::vector<PropensityStats> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, 7);
    if (f.size() != 7)
      throw DataError("line " + std::to_string(lineno) + ": expected 7 fields", "", lineno);
    PropensityStats p;
    p.replication = static_cast<int>(number(f[0], lineno));
    p.min = number(f[1], lineno);
    p.max = number(f[2], lineno);
    p.sd = number(f[3], lineno);
    p.cvar_low = number(f[4], lineno);
    p.max_inv = number(f[5], lineno);
    p.cvar_inv = number(f[6], lineno);
    out.push_back(p);
  }
  return out;
}

std::string render_heavy_tail(const HeavyTailReport& report) {
  std::ostringstream out;
  const auto& o = report.options;
  out << "Heavy-tail diagnostic: n=" << o.n << ", R=" << o.replications << ", K=" << o.folds
      << ", meta-repetitions=" << o.meta_repetitions << "\n\n";
  out << "| Estimator | q50 | q90 | q99 | q99.5 | Failures | var(R)/var(" << o.meta_small
      << ") > 2 | < 1.5 |\n|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : report.recipes)
    out << "| " << r.recipe << " | " << fixed(r.q50, 3) << " | " << fixed(r.q90, 3) << " | "
        << fixed(r.q99, 3) << " | " << fixed(r.q995, 3) << " | " << r.failures << " | "
        << r.meta_above_2 << '/' << o.meta_repetitions << " | " << r.meta_below_1_5 << '/'
        << o.meta_repetitions << " |\n";
  out << "\nRunning variance\n\n| Estimator |";
  for (int c : o.checkpoints) out << " R=" << c << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < o.checkpoints.size(); ++i) out << "---|";
  out << '\n';
  for (const auto& r : report.recipes) {
    out << "| " << r.recipe << " |";
    for (double v : r.running_variance) out << ' ' << fixed(v, 4) << " |";
    out << '\n';
  }
  out << "\nTail ratio q99.5(aipw)/q99.5(clearner_linear): " << fixed(report.tail_ratio, 3)
      << '\n';
  return out.str();
}

}  // namespace clearner
