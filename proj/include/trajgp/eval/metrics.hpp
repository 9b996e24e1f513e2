#pragma once

#include "trajgp/common.hpp"
#include "trajgp/gp/kernel.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace trajgp {

/// Half-width of the clinical-accuracy band in logMAR (closed interval).
inline constexpr double kClinicalTolerance = 0.1;

struct PointMetrics {
  double mse = 0.0;
  double mae = 0.0;
  std::optional<double> r2;  // absent when the targets have zero variance
  double clinical_accuracy = 0.0;  // percent
};

PointMetrics point_metrics(const Vector& predictions, const Vector& targets);

/// Closed-form CRPS of N(mean, variance) at `y`. Throws for variance <= 0.
double crps_gaussian(double mean, double variance, double y);
/// Average CRPS over samples (observation-level variance).
double mean_crps(const GaussianPrediction& pred, const Vector& targets);

/// Percentage of targets inside mean +- z_{(1+level)/2} * sd.
double interval_coverage(const Vector& mean, const Vector& variance, const Vector& targets, double level = 0.95);

struct MetricReport {
  double mse = 0.0;
  double mae = 0.0;
  std::optional<double> r2;
  double clinical_accuracy = 0.0;
  double crps = 0.0;
  double coverage95 = 0.0;
  std::size_t n_samples = 0;
};

MetricReport evaluate_predictions(const GaussianPrediction& pred, const Vector& targets);

/// Constant predictor at the training-target mean with the training-target
/// variance as predictive variance.
GaussianPrediction constant_prediction(const Vector& train_targets, Eigen::Index n);

nlohmann::json to_json(const MetricReport& r);

/// Per-metric mean and sample standard deviation across seeds.
struct SeedSummary {
  std::vector<std::uint64_t> seeds;
  std::vector<MetricReport> per_seed;
  MetricReport mean;
  MetricReport std;
};

SeedSummary summarize_seeds(const std::vector<std::uint64_t>& seeds, const std::vector<MetricReport>& reports);
nlohmann::json to_json(const SeedSummary& s);

/// Aligned text table: one row per (label, summary) with mean ± std columns
/// for MSE, MAE, R², ±0.1 accuracy, CRPS and 95% coverage.
std::string format_seed_table(const std::vector<std::pair<std::string, SeedSummary>>& rows);

/// Fixed-precision rendering used in every text report.
std::string format_number(double v, int precision = 4);

}  // namespace trajgp
