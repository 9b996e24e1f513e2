#include "doctest.h"

#include "trajgp/data/synthetic.hpp"
#include "trajgp/eval/experiment.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <limits>
#include <random>

using namespace trajgp;

namespace {

double normal_cdf(double x, double mu, double sd) { return 0.5 * std::erfc(-(x - mu) / (sd * std::sqrt(2.0))); }

// Direct integral of (F(x) - 1{x >= y})^2 split at y.
double crps_quadrature(double mu, double sd, double y) {
  using Q = boost::math::quadrature::gauss_kronrod<double, 61>;
  const double inf = std::numeric_limits<double>::infinity();
  const double lower = Q::integrate([&](double x) { return std::pow(normal_cdf(x, mu, sd), 2); }, -inf, y, 15, 1e-13);
  const double upper = Q::integrate([&](double x) { return std::pow(1.0 - normal_cdf(x, mu, sd), 2); }, y, inf, 15, 1e-13);
  return lower + upper;
}

const std::vector<RawEncounter>& small_cohort() {
  static const std::vector<RawEncounter> enc = [] {
    SyntheticConfig c;
    c.n_patients = 60;
    c.weights = {0.5, 0.3, 0.2};
    c.embedding_dim = 4;
    c.max_visits = 8;
    return generate_synthetic_cohort(c, 17).encounters;
  }();
  return enc;
}

PreprocessConfig small_preprocess() {
  PreprocessConfig pc;
  pc.layout.embedding_dim = 4;
  return pc;
}

TrainConfig small_train() {
  TrainConfig t;
  t.extractor.arch = Architecture::transformer;
  t.extractor.hidden_dim = 8;
  t.extractor.num_layers = 1;
  t.extractor.num_heads = 2;
  t.extractor.feedforward_dim = 16;
  t.extractor.decoder_dim = 8;
  t.extractor.latent_dim = 2;
  t.extractor.dropout = 0.0;
  t.num_inducing = 16;
  t.epochs = 15;
  t.learning_rate = 1e-2;
  t.max_prefix = 6;
  return t;
}

}  // namespace

TEST_CASE("point metrics on hand-checked examples") {
  Vector y(3);
  y << 0.1, 0.4, 1.2;
  const PointMetrics same = point_metrics(y, y);
  CHECK(same.mse == 0.0);
  CHECK(same.mae == 0.0);
  REQUIRE(same.r2);
  CHECK(*same.r2 == 1.0);
  CHECK(same.clinical_accuracy == 100.0);

  Vector p(2), t(2);
  p << 0.0, 0.5;
  t << 0.05, 0.7;
  CHECK(point_metrics(p, t).clinical_accuracy == 50.0);

  const PointMetrics flat = point_metrics(Vector::Constant(3, y.mean()), y);
  CHECK(*flat.r2 == doctest::Approx(0.0).epsilon(1e-15));

  CHECK_FALSE(point_metrics(p, Vector::Constant(2, 0.3)).r2.has_value());
  CHECK_THROWS_AS(point_metrics(p, y), ShapeError);
  CHECK_THROWS_AS(point_metrics(Vector(), Vector()), ShapeError);
}

TEST_CASE("accuracy band is closed at 0.1") {
  Vector p(2), t(2);
  p << 0.1, 0.5;
  t << 0.0, 0.5 + 0.1000001;
  CHECK(std::abs(p(0) - t(0)) == 0.1);
  CHECK(point_metrics(p, t).clinical_accuracy == 50.0);
}

TEST_CASE("point metrics agree with a loop-based re-implementation") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.3, 0.4);
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 5 + rep * 7;
    Vector p(n), t(n);
    for (int i = 0; i < n; ++i) {
      t(i) = g(rng);
      p(i) = rep % 3 == 0 ? std::round(t(i) * 10.0) / 10.0 : g(rng);
    }
    double sse = 0.0, sae = 0.0, mean = 0.0;
    int within = 0;
    for (int i = 0; i < n; ++i) mean += t(i);
    mean /= n;
    double sst = 0.0;
    for (int i = 0; i < n; ++i) {
      const double e = p(i) - t(i);
      sse += e * e;
      sae += std::fabs(e);
      sst += (t(i) - mean) * (t(i) - mean);
      if (std::fabs(e) <= 0.1) ++within;
    }
    const PointMetrics m = point_metrics(p, t);
    CHECK(m.mse == doctest::Approx(sse / n).epsilon(1e-12));
    CHECK(m.mae == doctest::Approx(sae / n).epsilon(1e-12));
    CHECK(std::abs(*m.r2 - (1.0 - sse / sst)) < 1e-12);
    CHECK(m.clinical_accuracy == doctest::Approx(100.0 * within / n).epsilon(1e-12));
  }
}

TEST_CASE("Gaussian CRPS matches numerical quadrature") {
  CHECK(std::abs(crps_quadrature(0.0, 1.0, 0.0) - 0.233695) < 1e-6);
  CHECK(std::abs(crps_gaussian(0.0, 1.0, 0.0) - 0.233695) < 1e-6);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> mu(-1.0, 2.0), sd(0.05, 1.5), z(-3.0, 3.0);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double m = mu(rng), s = sd(rng), y = m + s * z(rng);
    worst = std::max(worst, std::abs(crps_gaussian(m, s * s, y) - crps_quadrature(m, s, y)));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("CRPS scaling and limits") {
  const double base = crps_gaussian(0.2, 0.25, 0.7);  // z = 1, sd = 0.5
  CHECK(crps_gaussian(0.2, 1.0, 1.2) == doctest::Approx(2.0 * base).epsilon(1e-14));
  CHECK(crps_gaussian(1.0, 1e-16, 1.0) < 1e-8);
  CHECK(crps_gaussian(0.0, 1.0, 5.0) > 0.0);
  CHECK_THROWS_AS(crps_gaussian(0.0, 0.0, 0.0), NumericalError);
  CHECK_THROWS_AS(crps_gaussian(0.0, -1.0, 0.0), NumericalError);
}

TEST_CASE("interval coverage") {
  const int n = 100000;
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0), v(0.01, 0.5);
  std::normal_distribution<double> g;
  Vector mean(n), var(n), y(n);
  for (int i = 0; i < n; ++i) {
    mean(i) = u(rng);
    var(i) = v(rng);
    y(i) = mean(i) + std::sqrt(var(i)) * g(rng);
  }
  const double c = interval_coverage(mean, var, y, 0.95);
  CHECK(c >= 94.5);
  CHECK(c <= 95.5);
  CHECK(interval_coverage(mean, var, mean) == 100.0);
  CHECK(interval_coverage(mean, Vector::Zero(n), y) == 0.0);
  CHECK(interval_coverage(mean, var, y, 0.5) == doctest::Approx(50.0).epsilon(0.02));
  CHECK_THROWS_AS(interval_coverage(mean, var, y, 1.0), ConfigError);
}

TEST_CASE("seed summaries use the sample standard deviation and ignore seed order") {
  std::vector<MetricReport> reps(3);
  const double mses[] = {0.1, 0.2, 0.6};
  for (int i = 0; i < 3; ++i) {
    reps[i].mse = mses[i];
    reps[i].r2 = 1.0 - mses[i];
    reps[i].n_samples = 10;
  }
  const SeedSummary s = summarize_seeds({1, 2, 3}, reps);
  CHECK(s.mean.mse == doctest::Approx(0.3));
  CHECK(s.std.mse == doctest::Approx(std::sqrt(((0.2 * 0.2) + (0.1 * 0.1) + (0.3 * 0.3)) / 2.0)));
  REQUIRE(s.mean.r2);
  CHECK(*s.mean.r2 == doctest::Approx(0.7));

  const SeedSummary r = summarize_seeds({3, 1, 2}, {reps[2], reps[0], reps[1]});
  CHECK(r.mean.mse == s.mean.mse);
  CHECK(r.std.mse == s.std.mse);
  CHECK(r.mean.crps == s.mean.crps);

  const std::string table = format_seed_table({{"DKL", s}});
  for (const char* col : {"MSE", "MAE", "R2", "+-0.1"}) CHECK(table.find(col) != std::string::npos);
  CHECK(to_json(s)["per_seed"].size() == 3);
}

TEST_CASE("seed protocol runs in parallel and keeps partial results") {
  auto fake = [](std::uint64_t seed) {
    SeedOutcome o;
    o.seed = seed;
    o.model.mse = 0.01 * static_cast<double>(seed % 17);
    o.baseline.mse = 1.0;
    return o;
  };
  const auto serial = run_seed_protocol(kProtocolSeeds, fake, 1);
  const auto parallel = run_seed_protocol(kProtocolSeeds, fake, 4);
  REQUIRE(serial.model);
  REQUIRE(parallel.model);
  CHECK(serial.model->mean.mse == parallel.model->mean.mse);
  CHECK(serial.model->std.mse == parallel.model->std.mse);
  CHECK(serial.baseline->std.mse == 0.0);
  CHECK(to_json(serial).dump() == to_json(parallel).dump());

  const auto partial = run_seed_protocol(
      kProtocolSeeds,
      [&](std::uint64_t seed) {
        if (seed == 789) throw NumericalError("diverged");
        return fake(seed);
      },
      1);
  REQUIRE(partial.failure);
  CHECK(partial.failure->find("789") != std::string::npos);
  CHECK(partial.completed.size() == 3);
  CHECK(to_json(partial)["complete"] == false);
  CHECK_THROWS_AS(run_seed_protocol({}, fake), ConfigError);
}

TEST_CASE("per-seed pipeline beats the constant predictor; forced splits fix the baseline") {
  const auto& enc = small_cohort();
  const auto result = run_seed_protocol(
      {42, 123}, [&](std::uint64_t s) { return run_single_seed(enc, small_preprocess(), small_train(), s, 7); }, 2);
  REQUIRE_FALSE(result.failure);
  REQUIRE(result.model);
  CHECK(result.baseline->std.mse == 0.0);
  CHECK(result.baseline->std.clinical_accuracy == 0.0);
  CHECK(result.model->mean.mse < result.baseline->mean.mse);
  const auto again = run_single_seed(enc, small_preprocess(), small_train(), 42, 7);
  CHECK(to_json(again.model).dump() == to_json(result.completed.front().model).dump());
}

TEST_CASE("ablation and permutation importance") {
  PreprocessConfig pc = small_preprocess();
  const Dataset data = build_dataset(small_cohort(), pc);
  const TrainConfig cfg = small_train();

  try {
    ablate_feature_group(data, cfg, "SHOE_SIZE");
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("LAB_RESULTS") != std::string::npos);
  }

  const auto rows = ablate_feature_groups(data, cfg, {"SURGERIES", "LAB_RESULTS"});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].baseline.mse == rows[1].baseline.mse);
  CHECK(rows[0].delta_mse() > 0.0);
  CHECK(format_ablation_table(rows).find("LAB_RESULTS") != std::string::npos);

  const DklModel model = train_dkl(data, cfg).model;
  const auto imp = permutation_importance(model, data.layout, data.test, "PROC_NAME", 42);
  CHECK(imp.delta_mse() > 0.0);
  const auto imp2 = permutation_importance(model, data.layout, data.test, "PROC_NAME", 42);
  CHECK(imp2.delta_mse() == imp.delta_mse());

  Dataset flat = data;
  ablate_group(flat, "MED_NAME");
  const auto zero = permutation_importance(model, flat.layout, flat.test, "MED_NAME", 3);
  CHECK(zero.delta_mse() == 0.0);
  CHECK_THROWS_AS(permutation_importance(model, data.layout, data.test, "NOPE", 1), ConfigError);
}
