// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include "fd_oracle.hpp"

#include "trajgp/cli/config.hpp"
#include "trajgp/cluster/clustering.hpp"
#include "trajgp/data/snellen.hpp"
#include "trajgp/data/synthetic.hpp"
#include "trajgp/eval/experiment.hpp"
#include "trajgp/eval/metrics.hpp"
#include "trajgp/gp/exact.hpp"
#include "trajgp/gp/svgp.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>

using namespace trajgp;
using trajgp::testing::check_gradients;
using trajgp::testing::random_matrix;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Vector random_vector(Eigen::Index n, std::mt19937_64& rng, double sd = 1.0) {
  return random_matrix(n, 1, rng, sd).col(0);
}

double condition_number(const Eigen::MatrixXd& a) {
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  return svd.singularValues()(0) / svd.singularValues()(svd.singularValues().size() - 1);
}

SvgpState random_state(Eigen::Index m_ind, Eigen::Index dim, std::mt19937_64& rng) {
  SvgpState s;
  s.var_mean = random_vector(m_ind, rng);
  Matrix l = random_matrix(m_ind, m_ind, rng, 0.3);
  l = l.triangularView<Eigen::Lower>();
  for (Eigen::Index i = 0; i < m_ind; ++i) l(i, i) = 0.5 + std::abs(l(i, i));
  s.var_chol = l;
  std::uniform_real_distribution<double> u(0.5, 1.5);
  s.kernel.lengthscale = u(rng);
  s.kernel.outputscale = u(rng);
  s.noise = 0.3 * u(rng);
  s.mean = 0.2 * u(rng);
  // Redraw Z until K_ZZ is well conditioned.
  do {
    s.inducing = random_matrix(m_ind, dim, rng);
  } while (condition_number(kernel_matrix(s.kernel, s.inducing, s.inducing)) > 1e4);
  return s;
}

// ---- 1 ----------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0;
  std::string where;
  const Architecture archs[] = {Architecture::rnn, Architecture::gru, Architecture::lstm, Architecture::transformer};
  for (int trial = 0; trial < 8; ++trial) {
    ExtractorConfig c;
    c.arch = archs[trial % 4];
    c.input_dim = 3;
    c.hidden_dim = 4;
    c.num_layers = 1 + trial / 4;
    c.num_heads = 2;
    c.feedforward_dim = 6;
    c.decoder_dim = 4;
    c.latent_dim = 1 + trial % 3;
    c.dropout = 0.0;
    const Extractor ex(c);
    ad::ParamStore p;
    ex.init_params(p, 11 + trial);
    for (auto& [name, value] : p) value += random_matrix(value.rows(), value.cols(), rng, 0.3);

    const Eigen::Index b = 1 + trial % 6;
    const Eigen::Index m_ind = 1 + trial % 4;
    store_state(random_state(m_ind, c.latent_dim, rng), p);
    std::vector<Matrix> seqs;
    std::uniform_int_distribution<int> len(1, 4);
    for (Eigen::Index i = 0; i < b; ++i) seqs.push_back(random_matrix(len(rng), 3, rng));
    const Vector y = random_vector(b, rng);

    auto build = [&](ad::Tape& tape, std::map<std::string, ad::Var>& vars) {
      std::vector<ad::Var> rows;
      for (const auto& s : seqs) rows.push_back(ex.encode(tape, vars, s));
      const ad::Var h = rows.size() == 1 ? rows.front() : ad::concat_rows(rows);
      return elbo_terms(tape, vars, h, y, 4.0 * double(b)).elbo;
    };
    // 16 entries cover every GP tensor (M <= 4) and sample the extractor weights.
    const auto res = check_gradients(p, build, 1e-5, 1e-3, 16, 200 + trial);
    if (res.max_rel_error > worst) {
      worst = res.max_rel_error;
      where = to_string(c.arch) + ":" + res.worst_param;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0,
          fmt::format("max rel err {:.2e} at {} (< 1e-4), {:.1f} s (< 60 s)", worst, where, secs)};
}

// ---- 2, 3 -------------------------------------------------------------------

// Collapsed optimum of q(u) for Z = X, in closed form.
void set_optimal_q(SvgpState& s, const Matrix& x, const Vector& y) {
  const Eigen::MatrixXd kzz = kernel_matrix(s.kernel, s.inducing, s.inducing);
  const Eigen::MatrixXd kzx = kernel_matrix(s.kernel, s.inducing, x);
  const Eigen::MatrixXd prec = kzz + kzx * kzx.transpose() / s.noise;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(prec);
  const Eigen::VectorXd r = y.array() - s.mean;
  s.var_mean = (kzz * ldlt.solve(kzx * r) / s.noise).array() + s.mean;
  Eigen::MatrixXd S = kzz * ldlt.solve(kzz);
  S = 0.5 * (S + S.transpose());
  s.var_chol = Eigen::LLT<Eigen::MatrixXd>(S).matrixL();
}

struct OracleRun {
  double worst_mean = 0.0;
  double worst_var = 0.0;
  double worst_gap = -std::numeric_limits<double>::infinity();  // ELBO - log evidence
};

const OracleRun& oracle_run() {
  static const OracleRun run = [] {
    OracleRun r;
    std::mt19937_64 rng(202);
    std::uniform_real_distribution<double> u(0.5, 1.5);
    for (int trial = 0; trial < 20; ++trial) {
      const Eigen::Index n = 10 + trial;
      ExactGpModel g;
      g.kernel = {u(rng), u(rng)};
      // Zero jitter needs K_XX invertible in floating point.
      do {
        g.inputs = random_matrix(n, 2 + trial % 2, rng, 1.5);
      } while (condition_number(kernel_matrix(g.kernel, g.inputs, g.inputs)) > 1e8);
      g.targets = random_vector(n, rng);
      g.noise = 0.1 * u(rng);
      g.mean = 0.3 * (u(rng) - 1.0);
      SvgpState s;
      s.inducing = g.inputs;
      s.kernel = g.kernel;
      s.noise = g.noise;
      s.mean = g.mean;
      s.jitter.initial = 0.0;
      set_optimal_q(s, g.inputs, g.targets);
      const Matrix q = random_matrix(50, g.inputs.cols(), rng, 1.5);
      const auto pe = exact_gp_posterior(g, q);
      const auto ps = svgp_predict(s, q);
      r.worst_mean = std::max(r.worst_mean, (pe.mean - ps.mean).cwiseAbs().maxCoeff());
      r.worst_var = std::max(r.worst_var, (pe.latent_variance - ps.latent_variance).cwiseAbs().maxCoeff());
      r.worst_gap = std::max(r.worst_gap, elbo(s, g.inputs, g.targets, double(n)) - log_marginal_likelihood(g));
    }
    return r;
  }();
  return run;
}

Outcome oracle_equivalence() {
  const OracleRun& r = oracle_run();
  return {r.worst_mean < 1e-6 && r.worst_var < 1e-6,
          fmt::format("20 instances, max |dmean| {:.2e}, max |dvar| {:.2e} (< 1e-6)", r.worst_mean, r.worst_var)};
}

Outcome bound_property() {
  const OracleRun& r = oracle_run();
  return {r.worst_gap <= 1e-6, fmt::format("max ELBO - log evidence {:.2e} (<= 1e-6)", r.worst_gap)};
}

// ---- 4 ----------------------------------------------------------------------

double normal_cdf(double x, double mu, double sd) { return 0.5 * std::erfc(-(x - mu) / (sd * std::numbers::sqrt2)); }

double crps_quadrature(double mu, double sd, double y) {
  using Q = boost::math::quadrature::gauss_kronrod<double, 61>;
  const double inf = std::numeric_limits<double>::infinity();
  const double lo = Q::integrate([&](double x) { return std::pow(normal_cdf(x, mu, sd), 2); }, -inf, y, 15, 1e-13);
  const double hi = Q::integrate([&](double x) { return std::pow(1.0 - normal_cdf(x, mu, sd), 2); }, y, inf, 15, 1e-13);
  return lo + hi;
}

Outcome crps_correctness() {
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> mu(-2.0, 2.0), sd(0.05, 2.0), z(-3.0, 3.0);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double m = mu(rng), s = sd(rng), y = m + s * z(rng);
    worst = std::max(worst, std::abs(crps_gaussian(m, s * s, y) - crps_quadrature(m, s, y)));
  }
  const double unit = crps_gaussian(0.7, 1.0, 0.7);
  const bool pass = worst < 1e-6 && std::abs(unit - 0.233695) <= 1e-6;
  return {pass, fmt::format("max |closed - quadrature| {:.2e} (< 1e-6), CRPS(y, 1) = {:.7f}", worst, unit)};
}

// ---- 5 ----------------------------------------------------------------------

// Draw from an SE-kernel GP prior via random Fourier features, observed with
// Gaussian noise: exactly the model class of the sparse GP.
Outcome calibration_sanity() {
  const double lengthscale = 0.8, outputscale = 1.0, noise = 0.04;
  const int n_features = 2000;
  std::mt19937_64 rng(404);
  std::normal_distribution<double> omega(0.0, 1.0 / lengthscale), std_normal;
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi), xdist(-4.0, 4.0);
  Vector w(n_features), b(n_features), a(n_features);
  for (int j = 0; j < n_features; ++j) {
    w(j) = omega(rng);
    b(j) = phase(rng);
    a(j) = std_normal(rng);
  }
  const double scale = std::sqrt(2.0 * outputscale / n_features);
  auto sample = [&](Eigen::Index n, Matrix& x, Vector& y) {
    x.resize(n, 1);
    y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      x(i, 0) = xdist(rng);
      y(i) = scale * ((w.array() * x(i, 0) + b.array()).cos() * a.array()).sum() + std::sqrt(noise) * std_normal(rng);
    }
  };
  Matrix xtr, xte;
  Vector ytr, yte;
  sample(2000, xtr, ytr);
  sample(6000, xte, yte);

  SvgpFitConfig cfg;
  cfg.num_inducing = 32;
  cfg.epochs = 150;
  cfg.batch_size = 100;
  cfg.learning_rate = 0.02;
  cfg.seed = 5;
  const SvgpFit fit = fit_svgp(xtr, ytr, cfg);
  const GaussianPrediction p = svgp_predict(fit.state, xte);
  const double cov = interval_coverage(p.mean, p.variance, yte, 0.95);
  return {cov >= 90.0 && cov <= 98.0 && yte.size() >= 5000,
          fmt::format("coverage {:.2f}% on {} test samples (in [90, 98])", cov, yte.size())};
}

// ---- shared planted cohort (6, 7, 8) ----------------------------------------

const char* kCohortConfig = R"({
  "seed": 42,
  "data": {"embedding_dim": 16},
  "synthetic": {"n_patients": 1000, "weights": [0.34, 0.33, 0.33], "stratified": true},
  "extractor": {"arch": "transformer", "hidden_dim": 16, "num_layers": 1, "num_heads": 2,
                "feedforward_dim": 32, "decoder_dim": 16, "latent_dim": 2, "dropout": 0.0},
  "train": {"epochs": 20, "learning_rate": 0.005, "num_inducing": 64, "max_prefix": 16}
})";

PreprocessConfig preprocess_for(const ExperimentConfig& cfg, std::uint64_t split_seed) {
  PreprocessConfig pc;
  pc.layout.embedding_dim = cfg.data.embedding_dim;
  pc.codes = cfg.data.codes;
  pc.split_seed = split_seed;
  return pc;
}

std::vector<PatientSequence> all_patients(const Dataset& d) {
  std::vector<PatientSequence> all;
  for (const auto* split : {&d.train, &d.val, &d.test}) all.insert(all.end(), split->begin(), split->end());
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.patient_id < b.patient_id; });
  return all;
}

struct PlantedRun {
  ExperimentConfig cfg;
  SyntheticCohort cohort;
  Dataset data;
  TrainResult trained;
  double train_seconds = 0.0;
  MetricReport model, baseline;
  ProfileSet profiles;
  std::vector<int> truth;
  ModelSelection selection;
};

const PlantedRun& planted() {
  static const PlantedRun run = [] {
    PlantedRun r;
    r.cfg = parse_config(nlohmann::json::parse(kCohortConfig));
    r.cfg.validate();
    const auto t0 = Clock::now();
    r.cohort = generate_synthetic_cohort(r.cfg.synthetic, r.cfg.seed);
    r.data = build_dataset(r.cohort.encounters, preprocess_for(r.cfg, r.cfg.seed));
    r.trained = train_dkl(r.data, r.cfg.train);
    const SamplePredictions p = predict_samples(r.trained.model, r.data.test);
    r.model = evaluate_predictions(p.prediction, p.targets);
    const Vector train_y = sample_targets(r.data.train, enumerate_samples(r.data.train));
    r.baseline = evaluate_predictions(constant_prediction(train_y, p.targets.size()), p.targets);
    r.train_seconds = seconds_since(t0);

    r.profiles = build_profiles(r.trained.model, all_patients(r.data), r.cfg.clustering.profile);
    for (const auto& id : r.profiles.patient_ids) r.truth.push_back(r.cohort.labels.at(id));
    r.selection = model_select(r.profiles.profiles, r.cfg.seed, r.cfg.clustering.c_values, r.cfg.clustering.methods);
    return r;
  }();
  return run;
}

// ---- 6 ----------------------------------------------------------------------

Outcome end_to_end_learning() {
  const PlantedRun& r = planted();
  const bool pass = !r.trained.diverged && r.model.mse < r.baseline.mse &&
                    r.model.clinical_accuracy > r.baseline.clinical_accuracy && r.train_seconds < 1800.0;
  return {pass, fmt::format("1000 patients: MSE {:.4f} vs constant {:.4f}, +-0.1 accuracy {:.2f}% vs {:.2f}%, {:.0f} s",
                            r.model.mse, r.baseline.mse, r.model.clinical_accuracy, r.baseline.clinical_accuracy,
                            r.train_seconds)};
}

// ---- 7 ----------------------------------------------------------------------

// Direct-definition validity indices.
ValidityReport brute_validity(const Matrix& x, const std::vector<int>& labels) {
  const Eigen::Index n = x.rows();
  const int k = *std::max_element(labels.begin(), labels.end()) + 1;
  auto dist = [&](Eigen::Index i, Eigen::Index j) { return (x.row(i) - x.row(j)).norm(); };
  std::vector<int> count(static_cast<std::size_t>(k), 0);
  for (int l : labels) ++count[static_cast<std::size_t>(l)];

  double sil = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int li = labels[static_cast<std::size_t>(i)];
    if (count[static_cast<std::size_t>(li)] == 1) continue;
    std::vector<double> sum(static_cast<std::size_t>(k), 0.0);
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) sum[static_cast<std::size_t>(labels[static_cast<std::size_t>(j)])] += dist(i, j);
    const double a = sum[static_cast<std::size_t>(li)] / (count[static_cast<std::size_t>(li)] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c)
      if (c != li) b = std::min(b, sum[static_cast<std::size_t>(c)] / count[static_cast<std::size_t>(c)]);
    sil += (b - a) / std::max(a, b);
  }

  Matrix centroid = Matrix::Zero(k, x.cols());
  for (Eigen::Index i = 0; i < n; ++i) centroid.row(labels[static_cast<std::size_t>(i)]) += x.row(i);
  for (int c = 0; c < k; ++c) centroid.row(c) /= count[static_cast<std::size_t>(c)];
  std::vector<double> scatter(static_cast<std::size_t>(k), 0.0);
  double within = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    scatter[static_cast<std::size_t>(c)] += (x.row(i) - centroid.row(c)).norm() / count[static_cast<std::size_t>(c)];
    within += (x.row(i) - centroid.row(c)).squaredNorm();
  }
  double db = 0.0;
  for (int c = 0; c < k; ++c) {
    double worst = 0.0;
    for (int o = 0; o < k; ++o)
      if (o != c)
        worst = std::max(worst, (scatter[static_cast<std::size_t>(c)] + scatter[static_cast<std::size_t>(o)]) /
                                    (centroid.row(c) - centroid.row(o)).norm());
    db += worst;
  }
  const RowVector grand = x.colwise().mean();
  double between = 0.0;
  for (int c = 0; c < k; ++c) between += count[static_cast<std::size_t>(c)] * (centroid.row(c) - grand).squaredNorm();

  ValidityReport v;
  v.silhouette = sil / double(n);
  v.davies_bouldin = db / k;
  v.calinski_harabasz = (between / (k - 1)) / (within / double(n - k));
  return v;
}

Outcome cluster_recovery() {
  const PlantedRun& r = planted();
  const SelectionRow& best = r.selection.best();
  std::optional<double> ward_ari;
  for (const auto& row : r.selection.rows)
    if (row.method == ClusterMethod::ward && row.c == 3) ward_ari = ari(row.labels, r.truth);

  // Validity on the first 200 profiles: ward labels restricted to them plus random labelings.
  const Eigen::Index n = 200;
  const Matrix sub = r.profiles.profiles.topRows(n);
  std::vector<std::vector<int>> labelings{
      canonical_labels(agglomerative_cluster(sub, 3, Linkage::ward).labels)};
  std::mt19937_64 rng(707);
  for (int k : {2, 4, 5}) {
    std::vector<int> l(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) l[static_cast<std::size_t>(i)] = static_cast<int>(i % k);
    std::shuffle(l.begin(), l.end(), rng);
    labelings.push_back(canonical_labels(l));
  }
  double worst = 0.0;
  for (const auto& l : labelings) {
    const ValidityReport a = validity_metrics(sub, l);
    const ValidityReport b = brute_validity(sub, l);
    worst = std::max({worst, std::abs(a.silhouette - b.silhouette),
                      std::abs(a.davies_bouldin - b.davies_bouldin) / std::max(1.0, std::abs(b.davies_bouldin)),
                      std::abs(a.calinski_harabasz - b.calinski_harabasz) /
                          std::max(1.0, std::abs(b.calinski_harabasz))});
  }
  const bool pass = best.c == 3 && ward_ari && *ward_ari >= 0.8 && worst <= 1e-9;
  return {pass, fmt::format("selected {} c = {} (silhouette {:.4f}), ward c = 3 ARI {:.4f} (>= 0.8), "
                            "validity vs brute force {:.1e} (<= 1e-9)",
                            to_string(best.method), best.c, best.validity.silhouette, ward_ari.value_or(-1.0), worst)};
}

// ---- 8 ----------------------------------------------------------------------

Outcome stability() {
  const PlantedRun& r = planted();
  StabilityConfig sc;
  sc.n_runs = 100;
  sc.subsample = 0.9;
  sc.seed = r.cfg.seed;
  const StabilityReport boot = stability_protocol(r.profiles.profiles, ClusterMethod::ward, 3, sc);
  sc.subsample = 1.0;
  sc.n_runs = 10;
  const StabilityReport same = stability_protocol(r.profiles.profiles, ClusterMethod::ward, 3, sc);
  const bool pass = boot.ari_mean >= 0.95 && same.nmi_mean == 1.0 && same.ari_mean == 1.0 && same.ari_std == 0.0;
  return {pass, fmt::format("ward c = 3 over 100 subsampled runs: ARI {:.3f} +- {:.3f} (>= 0.95); identical inputs: "
                            "NMI {} ARI {}",
                            boot.ari_mean, boot.ari_std, same.nmi_mean, same.ari_mean)};
}

// ---- 9 ----------------------------------------------------------------------

Outcome ablation_discriminates() {
  ExperimentConfig cfg = parse_config(nlohmann::json::parse(kCohortConfig));
  cfg.synthetic.n_patients = 400;
  cfg.synthetic.signal_fields = {"procedures"};
  const SyntheticCohort cohort = generate_synthetic_cohort(cfg.synthetic, cfg.seed);
  const std::vector<std::uint64_t> seeds{42, 123, 456};
  std::vector<double> base, signal, noise;
  for (std::uint64_t seed : seeds) {
    const Dataset data = build_dataset(cohort.encounters, preprocess_for(cfg, seed));
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    const auto rows = ablate_feature_groups(data, tc, {"PROC_NAME", "DX_NAME"});
    base.push_back(rows[0].baseline.mse);
    signal.push_back(rows[0].delta_mse());
    noise.push_back(rows[1].delta_mse());
  }
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); };
  const double mb = mean(base);
  double ss = 0.0;
  for (double b : base) ss += (b - mb) * (b - mb);
  const double sd = std::sqrt(ss / double(base.size() - 1));
  const double ds = mean(signal), dn = mean(noise);
  const bool pass = ds > 0.0 && std::abs(dn) < 2.0 * sd;
  return {pass, fmt::format("3 seeds: signal group dMSE {:+.4f} (> 0), noise group dMSE {:+.4f} (|.| < 2 x seed std "
                            "{:.4f})",
                            ds, dn, sd)};
}

// ---- 10 ---------------------------------------------------------------------

Outcome metric_oracles() {
  std::mt19937_64 rng(1010);
  std::uniform_real_distribution<double> u(0.0, 1.5), e(-0.3, 0.3);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 10 + 50 * trial;
    Vector t(n), p(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      t(i) = u(rng);
      p(i) = t(i) + e(rng);
    }
    double se = 0.0, ae = 0.0, tm = 0.0, hits = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      se += (p(i) - t(i)) * (p(i) - t(i));
      ae += std::abs(p(i) - t(i));
      tm += t(i);
      if (std::abs(p(i) - t(i)) <= 0.1) hits += 1.0;
    }
    tm /= double(n);
    double tv = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) tv += (t(i) - tm) * (t(i) - tm);
    const PointMetrics m = point_metrics(p, t);
    worst = std::max({worst, std::abs(m.mse - se / double(n)), std::abs(m.mae - ae / double(n)),
                      std::abs(m.r2.value_or(1e9) - (1.0 - se / tv)),
                      std::abs(m.clinical_accuracy - 100.0 * hits / double(n))});
  }

  std::uniform_int_distribution<int> den(10, 800);
  bool snellen_ok = true;
  for (int i = 0; i < 20; ++i) {
    const int d = den(rng);
    const auto v = snellen_to_logmar("20/" + std::to_string(d));
    snellen_ok = snellen_ok && v && *v == std::log10(d / 20.0);
  }
  const SpecialCodes codes;
  snellen_ok = snellen_ok && snellen_to_logmar("CF") == codes.count_fingers &&
               snellen_to_logmar("HM") == codes.hand_motion && snellen_to_logmar("LP") == codes.light_perception &&
               snellen_to_logmar("NLP") == codes.no_light_perception;
  return {worst <= 1e-12 && snellen_ok,
          fmt::format("max metric deviation {:.1e} (<= 1e-12); Snellen 20 fractions + 4 codes {}", worst,
                      snellen_ok ? "exact" : "MISMATCH")};
}

// ---- 11 ---------------------------------------------------------------------

struct PipelineOutput {
  std::string metrics;
  std::string assignments;
};

PipelineOutput small_pipeline() {
  ExperimentConfig cfg = parse_config(nlohmann::json::parse(kCohortConfig));
  cfg.synthetic.n_patients = 200;
  cfg.train.epochs = 5;
  const SyntheticCohort cohort = generate_synthetic_cohort(cfg.synthetic, cfg.seed);
  const Dataset data = build_dataset(cohort.encounters, preprocess_for(cfg, cfg.seed));
  const TrainResult tr = train_dkl(data, cfg.train);
  const SamplePredictions p = predict_samples(tr.model, data.test);
  const ProfileSet prof = build_profiles(tr.model, all_patients(data), cfg.clustering.profile);
  const ModelSelection sel = model_select(prof.profiles, cfg.seed, cfg.clustering.c_values, cfg.clustering.methods, 2);
  return {to_json(evaluate_predictions(p.prediction, p.targets)).dump(2) + to_json(sel).dump(2),
          assignments_csv(prof.patient_ids, sel.best().labels)};
}

Outcome determinism() {
  const PipelineOutput a = small_pipeline();
  const PipelineOutput b = small_pipeline();
  const bool same_metrics = a.metrics == b.metrics;
  const bool same_assign = a.assignments == b.assignments;
  return {same_metrics && same_assign,
          fmt::format("metric report {} bytes {}, assignments {} bytes {}", a.metrics.size(),
                      same_metrics ? "identical" : "DIFFER", a.assignments.size(),
                      same_assign ? "identical" : "DIFFER")};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"oracle equivalence", oracle_equivalence},
      {"bound property", bound_property},
      {"CRPS correctness", crps_correctness},
      {"calibration sanity", calibration_sanity},
      {"end-to-end learning", end_to_end_learning},
      {"cluster recovery", cluster_recovery},
      {"stability protocol", stability},
      {"ablation discriminates", ablation_discriminates},
      {"metric oracles", metric_oracles},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("[%s] %2zu %-24s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
