#include "trajgp/eval/metrics.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

namespace trajgp {

using nlohmann::json;

namespace {

void check_lengths(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": " + std::to_string(a) + " predictions for " +
                               std::to_string(b) + " targets");
  if (a == 0) throw ShapeError(std::string(what) + ": no samples");
}

}  // namespace

PointMetrics point_metrics(const Vector& predictions, const Vector& targets) {
  check_lengths(predictions.size(), targets.size(), "point_metrics");
  const double n = static_cast<double>(targets.size());
  const Eigen::ArrayXd err = predictions.array() - targets.array();
  PointMetrics m;
  m.mse = err.square().sum() / n;
  m.mae = err.abs().sum() / n;
  const double sst = (targets.array() - targets.mean()).square().sum();
  if (sst > 0.0) m.r2 = 1.0 - err.square().sum() / sst;
  m.clinical_accuracy = 100.0 * static_cast<double>((err.abs() <= kClinicalTolerance).count()) / n;
  return m;
}

double crps_gaussian(double mean, double variance, double y) {
  if (!(variance > 0.0)) throw NumericalError("crps_gaussian: variance must be positive");
  const double sd = std::sqrt(variance);
  const double z = (y - mean) / sd;
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  return sd * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - 1.0 / std::sqrt(std::numbers::pi));
}

double mean_crps(const GaussianPrediction& pred, const Vector& targets) {
  check_lengths(pred.mean.size(), targets.size(), "mean_crps");
  double s = 0.0;
  for (Eigen::Index i = 0; i < targets.size(); ++i) s += crps_gaussian(pred.mean(i), pred.variance(i), targets(i));
  return s / static_cast<double>(targets.size());
}

double interval_coverage(const Vector& mean, const Vector& variance, const Vector& targets, double level) {
  check_lengths(mean.size(), targets.size(), "interval_coverage");
  if (variance.size() != mean.size()) throw ShapeError("interval_coverage: variance length mismatch");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("interval_coverage: level must lie in (0, 1)");
  const double z = boost::math::quantile(boost::math::normal(), 0.5 + 0.5 * level);
  std::size_t inside = 0;
  for (Eigen::Index i = 0; i < targets.size(); ++i) {
    if (variance(i) < 0.0) throw NumericalError("interval_coverage: negative variance");
    if (std::abs(targets(i) - mean(i)) <= z * std::sqrt(variance(i))) ++inside;
  }
  return 100.0 * static_cast<double>(inside) / static_cast<double>(targets.size());
}

MetricReport evaluate_predictions(const GaussianPrediction& pred, const Vector& targets) {
  const PointMetrics p = point_metrics(pred.mean, targets);
  MetricReport r;
  r.mse = p.mse;
  r.mae = p.mae;
  r.r2 = p.r2;
  r.clinical_accuracy = p.clinical_accuracy;
  r.crps = mean_crps(pred, targets);
  r.coverage95 = interval_coverage(pred.mean, pred.variance, targets, 0.95);
  r.n_samples = static_cast<std::size_t>(targets.size());
  return r;
}

GaussianPrediction constant_prediction(const Vector& train_targets, Eigen::Index n) {
  if (train_targets.size() == 0) throw ShapeError("constant_prediction: no training targets");
  const double mean = train_targets.mean();
  const double var = std::max((train_targets.array() - mean).square().mean(), 1e-12);
  GaussianPrediction p;
  p.mean = Vector::Constant(n, mean);
  p.latent_variance = Vector::Zero(n);
  p.variance = Vector::Constant(n, var);
  return p;
}

json to_json(const MetricReport& r) {
  json j;
  j["mse"] = r.mse;
  j["mae"] = r.mae;
  j["r2"] = r.r2 ? json(*r.r2) : json(nullptr);
  j["clinical_accuracy"] = r.clinical_accuracy;
  j["crps"] = r.crps;
  j["coverage95"] = r.coverage95;
  j["n_samples"] = r.n_samples;
  return j;
}

SeedSummary summarize_seeds(const std::vector<std::uint64_t>& seeds, const std::vector<MetricReport>& reports) {
  if (reports.empty() || reports.size() != seeds.size()) throw ShapeError("summarize_seeds: need one report per seed");
  SeedSummary s;
  s.seeds = seeds;
  s.per_seed = reports;
  const double n = static_cast<double>(reports.size());
  auto stat = [&](auto get, double& mean_out, double& std_out) {
    // Sum in seed-sorted order so the result does not depend on run order.
    std::vector<std::pair<std::uint64_t, double>> v;
    for (std::size_t i = 0; i < reports.size(); ++i) v.emplace_back(seeds[i], get(reports[i]));
    std::sort(v.begin(), v.end());
    double m = 0.0;
    for (const auto& [seed, x] : v) m += x;
    m /= n;
    double ss = 0.0;
    for (const auto& [seed, x] : v) ss += (x - m) * (x - m);
    mean_out = m;
    std_out = reports.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  };
  stat([](const MetricReport& r) { return r.mse; }, s.mean.mse, s.std.mse);
  stat([](const MetricReport& r) { return r.mae; }, s.mean.mae, s.std.mae);
  stat([](const MetricReport& r) { return r.clinical_accuracy; }, s.mean.clinical_accuracy, s.std.clinical_accuracy);
  stat([](const MetricReport& r) { return r.crps; }, s.mean.crps, s.std.crps);
  stat([](const MetricReport& r) { return r.coverage95; }, s.mean.coverage95, s.std.coverage95);
  const bool all_r2 = std::all_of(reports.begin(), reports.end(), [](const MetricReport& r) { return r.r2.has_value(); });
  if (all_r2) {
    double m = 0.0, sd = 0.0;
    stat([](const MetricReport& r) { return *r.r2; }, m, sd);
    s.mean.r2 = m;
    s.std.r2 = sd;
  }
  std::size_t total = 0;
  for (const auto& r : reports) total += r.n_samples;
  s.mean.n_samples = total / reports.size();
  return s;
}

json to_json(const SeedSummary& s) {
  json j;
  j["seeds"] = s.seeds;
  json rows = json::array();
  for (std::size_t i = 0; i < s.per_seed.size(); ++i) {
    json r = to_json(s.per_seed[i]);
    r["seed"] = s.seeds[i];
    rows.push_back(std::move(r));
  }
  j["per_seed"] = std::move(rows);
  j["mean"] = to_json(s.mean);
  j["std"] = to_json(s.std);
  j["std"].erase("n_samples");
  return j;
}

std::string format_number(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::string format_seed_table(const std::vector<std::pair<std::string, SeedSummary>>& rows) {
  const std::vector<std::string> header = {"Model", "MSE", "MAE", "R2", "+-0.1 (%)", "CRPS", "Cov95 (%)"};
  std::vector<std::vector<std::string>> cells;
  cells.push_back(header);
  auto pm = [](double m, double s, int p) { return format_number(m, p) + " +- " + format_number(s, p); };
  for (const auto& [label, s] : rows) {
    cells.push_back({label, pm(s.mean.mse, s.std.mse, 4), pm(s.mean.mae, s.std.mae, 4),
                     s.mean.r2 ? pm(*s.mean.r2, *s.std.r2, 4) : std::string("n/a"),
                     pm(s.mean.clinical_accuracy, s.std.clinical_accuracy, 2), pm(s.mean.crps, s.std.crps, 4),
                     pm(s.mean.coverage95, s.std.coverage95, 2)});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      const std::string& s = cells[r][c];
      if (c == 0) out << s << std::string(width[c] - s.size(), ' ');
      else out << "  " << std::string(width[c] - s.size(), ' ') << s;
    }
    out << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c ? 2 : 0);
      out << std::string(total, '-') << '\n';
    }
  }
  return out.str();
}

}  // namespace trajgp
