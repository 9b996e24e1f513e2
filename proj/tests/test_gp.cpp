#include "doctest.h"
#include "fd_oracle.hpp"

#include "trajgp/gp/exact.hpp"
#include "trajgp/gp/svgp.hpp"
#include "trajgp/kmeans.hpp"

#include <numbers>

using namespace trajgp;
using trajgp::testing::check_gradients;
using trajgp::testing::random_matrix;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

Vector random_vector(Eigen::Index n, std::mt19937_64& rng, double sd = 1.0) {
  return random_matrix(n, 1, rng, sd).col(0);
}

SvgpState random_state(Eigen::Index m_ind, Eigen::Index dim, std::mt19937_64& rng) {
  SvgpState s;
  s.inducing = random_matrix(m_ind, dim, rng);
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
  return s;
}

// Dense ELBO written with explicit inverses; independent of the tape path.
double dense_elbo(const SvgpState& s, const Matrix& x, const Vector& y, double n_total) {
  const Eigen::Index m = s.num_inducing();
  Eigen::MatrixXd kzz = kernel_matrix(s.kernel, s.inducing, s.inducing);
  const double eps = cholesky_with_jitter(kzz, s.jitter).jitter;
  kzz.diagonal().array() += eps;
  const Eigen::MatrixXd kinv = kzz.inverse();
  const Eigen::MatrixXd kzx = kernel_matrix(s.kernel, s.inducing, x);
  const Eigen::MatrixXd lv = s.var_chol;
  const Eigen::MatrixXd S = lv * lv.transpose();
  const Eigen::VectorXd d = s.var_mean.array() - s.mean;
  double ell = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::VectorXd k = kzx.col(i);
    const double mu = s.mean + k.dot(kinv * d);
    const double v = s.kernel.outputscale - k.dot(kinv * k) + k.dot(kinv * S * kinv * k);
    ell += -0.5 * std::log(2 * std::numbers::pi * s.noise) - ((y(i) - mu) * (y(i) - mu) + v) / (2 * s.noise);
  }
  const double kl = 0.5 * ((kinv * S).trace() + d.dot(kinv * d) - double(m) + std::log(kzz.determinant()) -
                           std::log(S.determinant()));
  return n_total / double(x.rows()) * ell - kl;
}

// Collapsed optimum of q(u) for the given Z, in closed form.
void set_optimal_q(SvgpState& s, const Matrix& x, const Vector& y) {
  Eigen::MatrixXd kzz = kernel_matrix(s.kernel, s.inducing, s.inducing);
  kzz.diagonal().array() += cholesky_with_jitter(kzz, s.jitter).jitter;
  const Eigen::MatrixXd kzx = kernel_matrix(s.kernel, s.inducing, x);
  const Eigen::MatrixXd prec = kzz + kzx * kzx.transpose() / s.noise;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(prec);
  const Eigen::VectorXd r = y.array() - s.mean;
  s.var_mean = (kzz * ldlt.solve(kzx * r) / s.noise).array() + s.mean;
  Eigen::MatrixXd S = kzz * ldlt.solve(kzz);
  S = 0.5 * (S + S.transpose());
  s.var_chol = Eigen::LLT<Eigen::MatrixXd>(S).matrixL();
}

}  // namespace

TEST_CASE("kernel examples") {
  KernelParams k{2.0, 1.0};
  Matrix a(1, 2), b(1, 2);
  a << 0.0, 0.0;
  b << 2.0, 0.0;
  CHECK(kernel_matrix(k, a, b)(0, 0) == doctest::Approx(0.606531).epsilon(1e-6));
  CHECK(kernel_matrix(k, a, a)(0, 0) == 1.0);
  KernelParams k2{0.7, 2.5};
  CHECK(kernel_matrix(k2, b, b)(0, 0) == 2.5);
  double prev = 2.5;
  for (double d = 0.1; d < 20.0; d += 0.1) {
    Matrix c(1, 2);
    c << d, 0.0;
    const double v = kernel_matrix(k2, a, c)(0, 0);
    CHECK(v < prev);
    CHECK(v >= 0.0);
    prev = v;
  }
  CHECK(prev < 1e-100);
  CHECK_THROWS_AS(kernel_matrix(k, a, Matrix(1, 3)), ShapeError);
  Matrix bad = a;
  bad(0, 1) = std::nan("");
  CHECK_THROWS_AS(kernel_matrix(k, bad, a), NumericalError);
}

TEST_CASE("kernel matrices are symmetric and positive semidefinite") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix x = random_matrix(25, 3, rng);
    KernelParams k{0.3 + 0.2 * trial, 1.0 + trial};
    const Matrix kxx = kernel_matrix(k, x, x);
    CHECK((kxx - kxx.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(kxx);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8);
    CHECK_NOTHROW(cholesky_with_jitter(kxx));
  }
}

TEST_CASE("differentiable kernel matches the dense kernel") {
  std::mt19937_64 rng(2);
  const Matrix a = random_matrix(4, 3, rng);
  const Matrix b = random_matrix(6, 3, rng);
  KernelParams k{0.8, 1.7};
  ad::Tape tape(false);
  const Matrix got = kernel_matrix(tape.constant(k.lengthscale), tape.constant(k.outputscale), tape.constant(a),
                                   tape.constant(b))
                         .value();
  CHECK((got - kernel_matrix(k, a, b)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("exact posterior examples") {
  ExactGpModel one;
  one.inputs = Matrix::Zero(1, 1);
  one.targets = Vector::Ones(1);
  one.noise = 1.0;
  const auto p = exact_gp_posterior(one, Matrix::Zero(1, 1));
  CHECK(p.mean(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p.latent_variance(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p.variance(0) == doctest::Approx(1.5).epsilon(1e-12));

  ExactGpModel prior;
  prior.inputs = Matrix(0, 2);
  prior.targets = Vector(0);
  prior.mean = 0.4;
  prior.kernel.outputscale = 2.0;
  const auto pp = exact_gp_posterior(prior, Matrix::Ones(3, 2));
  CHECK(pp.mean(2) == 0.4);
  CHECK(pp.latent_variance(1) == 2.0);

  ExactGpModel interp;
  std::mt19937_64 rng(3);
  interp.inputs.resize(4, 1);
  interp.inputs << -3.0, -1.0, 1.0, 3.0;
  interp.targets = random_vector(4, rng);
  interp.noise = 1e-10;
  const auto pi = exact_gp_posterior(interp, interp.inputs);
  CHECK((pi.mean - interp.targets).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("log marginal likelihood") {
  ExactGpModel m;
  m.inputs = Matrix::Zero(1, 1);
  m.targets = Vector::Zero(1);
  m.kernel.outputscale = 0.5;
  m.noise = 0.5;
  CHECK(log_marginal_likelihood(m) == doctest::Approx(-0.918939).epsilon(1e-6));

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    ExactGpModel g;
    g.inputs = random_matrix(5, 2, rng);
    g.targets = random_vector(5, rng);
    g.kernel = {0.5 + 0.1 * trial, 1.3};
    g.noise = 0.2;
    g.mean = 0.3;
    // Eigendecomposition oracle.
    Eigen::MatrixXd lambda = kernel_matrix(g.kernel, g.inputs, g.inputs);
    lambda.diagonal().array() += g.noise;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lambda);
    const Eigen::VectorXd proj = es.eigenvectors().transpose() * (g.targets.array() - g.mean).matrix();
    double oracle = -2.5 * kLog2Pi;
    for (int i = 0; i < 5; ++i) {
      oracle -= 0.5 * proj(i) * proj(i) / es.eigenvalues()(i) + 0.5 * std::log(es.eigenvalues()(i));
    }
    const double got = log_marginal_likelihood(g);
    CHECK(std::abs(got - oracle) < 1e-8);
    ExactGpModel doubled = g;
    doubled.targets = (2.0 * (g.targets.array() - g.mean) + g.mean).matrix();
    CHECK(log_marginal_likelihood(doubled) < got);
  }
}

TEST_CASE("removing a training point never shrinks predictive variance") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 15; ++trial) {
    const Eigen::Index n = 2 + trial % 9;
    ExactGpModel full;
    full.inputs = random_matrix(n, 2, rng);
    full.targets = random_vector(n, rng);
    full.noise = 0.05;
    const Matrix queries = random_matrix(30, 2, rng);
    const auto pf = exact_gp_posterior(full, queries);
    for (Eigen::Index drop = 0; drop < n; ++drop) {
      ExactGpModel less = full;
      less.inputs.resize(n - 1, 2);
      less.targets.resize(n - 1);
      for (Eigen::Index i = 0, j = 0; i < n; ++i) {
        if (i == drop) continue;
        less.inputs.row(j) = full.inputs.row(i);
        less.targets(j++) = full.targets(i);
      }
      const auto pl = exact_gp_posterior(less, queries);
      CHECK((pl.latent_variance - pf.latent_variance).minCoeff() >= -1e-12);
    }
  }
}

TEST_CASE("KL divergence") {
  std::mt19937_64 rng(6);
  SvgpState s = random_state(4, 2, rng);
  // q equal to the prior.
  s.var_mean.setConstant(s.mean);
  s.var_chol = cholesky_with_jitter(kernel_matrix(s.kernel, s.inducing, s.inducing), s.jitter).factor;
  CHECK(std::abs(kl_divergence(s)) < 1e-10);
  Matrix x = random_matrix(3, 2, rng);
  Vector y = random_vector(3, rng);
  ad::ParamStore p;
  store_state(s, p);
  ad::Tape tape(false);
  auto vars = ad::bind_params(tape, p);
  CHECK(std::abs(elbo_terms(tape, vars, tape.constant(x), y, 3.0).kl.item()) < 1e-10);

  for (int trial = 0; trial < 50; ++trial) {
    SvgpState r = random_state(1 + trial % 5, 3, rng);
    const double kl = kl_divergence(r);
    CHECK(kl >= 0.0);
    CHECK(kl > 1e-10);
  }
}

TEST_CASE("scalar ELBO matches the hand formula") {
  SvgpState s;
  s.inducing = Matrix::Constant(1, 1, 0.3);
  s.var_mean = Vector::Constant(1, 0.8);
  s.var_chol = Matrix::Constant(1, 1, 0.6);
  s.kernel = {1.2, 1.5};
  s.noise = 0.25;
  s.mean = 0.1;
  const Matrix x = Matrix::Constant(1, 1, -0.4);
  const Vector y = Vector::Constant(1, 0.7);
  const double kzz = 1.5 + 1e-6;  // default jitter
  const double k = 1.5 * std::exp(-0.49 / (2 * 1.44));
  const double mu = 0.1 + k / kzz * 0.7;
  const double v = 1.5 - k * k / kzz + (k / kzz) * (k / kzz) * 0.36;
  const double ell = -0.5 * std::log(2 * std::numbers::pi * 0.25) - ((0.7 - mu) * (0.7 - mu) + v) / 0.5;
  const double kl = 0.5 * (0.36 / kzz + 0.49 / kzz - 1.0 + std::log(kzz) - std::log(0.36));
  CHECK(std::abs(elbo(s, x, y, 1.0) - (ell - kl)) < 1e-10);
  CHECK(std::abs(kl_divergence(s) - kl) < 1e-10);
}

TEST_CASE("ELBO matches a dense re-implementation") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    SvgpState s = random_state(2 + trial % 4, 2, rng);
    const Matrix x = random_matrix(6, 2, rng);
    const Vector y = random_vector(6, rng);
    const double n_total = 6.0 + 10.0 * trial;
    CHECK(std::abs(elbo(s, x, y, n_total) - dense_elbo(s, x, y, n_total)) < 1e-9 * (1.0 + n_total));
  }
}

TEST_CASE("ELBO gradients match finite differences") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 8; ++trial) {
    const Eigen::Index m_ind = 1 + trial % 4;
    const Eigen::Index dim = 1 + trial % 3;
    const Eigen::Index b = 1 + trial % 6;
    SvgpState s = random_state(m_ind, dim, rng);
    ad::ParamStore p;
    store_state(s, p);
    p["latents"] = random_matrix(b, dim, rng);
    const Vector y = random_vector(b, rng);
    auto build = [&](ad::Tape& tape, std::map<std::string, ad::Var>& vars) {
      return elbo_terms(tape, vars, vars.at("latents"), y, 3.0 * double(b)).elbo;
    };
    const auto res = check_gradients(p, build);
    CAPTURE(res.worst_param);
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("optimal sparse posterior at Z = X reproduces the exact GP") {
  std::mt19937_64 rng(9);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 5 + trial;
    ExactGpModel g;
    g.inputs = random_matrix(n, 2, rng);
    g.targets = random_vector(n, rng);
    g.kernel = {0.8, 1.2};
    g.noise = 0.1;
    g.mean = 0.25;
    SvgpState s;
    s.inducing = g.inputs;
    s.kernel = g.kernel;
    s.noise = g.noise;
    s.mean = g.mean;
    s.jitter.initial = 0.0;
    set_optimal_q(s, g.inputs, g.targets);
    const Matrix queries = random_matrix(40, 2, rng);
    const auto pe = exact_gp_posterior(g, queries);
    const auto ps = svgp_predict(s, queries);
    worst = std::max({worst, (pe.mean - ps.mean).cwiseAbs().maxCoeff(),
                      (pe.latent_variance - ps.latent_variance).cwiseAbs().maxCoeff()});
    const double bound = elbo(s, g.inputs, g.targets, double(n));
    const double lml = log_marginal_likelihood(g);
    CHECK(bound <= lml + 1e-6);
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("sparse predictions revert to the prior and stay positive") {
  std::mt19937_64 rng(10);
  SvgpState s = random_state(5, 2, rng);
  const Matrix far = Matrix::Constant(1, 2, 1e3);
  const auto pf = svgp_predict(s, far);
  CHECK(std::abs(pf.mean(0) - s.mean) < 1e-12);
  CHECK(std::abs(pf.latent_variance(0) - s.kernel.outputscale) < 1e-12);
  CHECK(pf.variance(0) == doctest::Approx(s.kernel.outputscale + s.noise));
  const auto pr = svgp_predict(s, random_matrix(1000, 2, rng, 2.0));
  CHECK(pr.latent_variance.minCoeff() > 0.0);
  CHECK(pr.variance.minCoeff() > 0.0);
  CHECK_THROWS_AS(svgp_predict(s, Matrix::Zero(2, 3)), ShapeError);
}

TEST_CASE("state round-trips through the parameter store") {
  std::mt19937_64 rng(11);
  SvgpState s = random_state(4, 3, rng);
  ad::ParamStore p;
  store_state(s, p);
  const SvgpState r = load_state(p);
  CHECK((r.inducing - s.inducing).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r.var_chol - s.var_chol).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(std::abs(r.kernel.lengthscale - s.kernel.lengthscale) < 1e-14);
  CHECK(std::abs(r.noise - s.noise) < 1e-14);
  p.erase(gp_param::noise_raw);
  CHECK_THROWS_AS(load_state(p), Error);
}

TEST_CASE("initial state matches the prior") {
  std::mt19937_64 rng(12);
  const Matrix x = random_matrix(60, 2, rng);
  const Vector y = random_vector(60, rng).array() + 3.0;
  const SvgpState s = init_svgp(x, y, 8, 5);
  CHECK(s.num_inducing() == 8);
  CHECK(s.mean == doctest::Approx(y.mean()));
  CHECK(s.kernel.lengthscale == doctest::Approx(std::sqrt(2.0)));
  CHECK(std::abs(kl_divergence(s)) < 1e-10);
  const SvgpState small = init_svgp(x.topRows(3), y.head(3), 5, 5);
  CHECK(small.num_inducing() == 5);
}

TEST_CASE("optimized ELBO stays below the exact evidence") {
  std::mt19937_64 rng(13);
  const Eigen::Index n = 12;
  ExactGpModel g;
  g.inputs = random_matrix(n, 1, rng, 2.0);
  g.targets = g.inputs.col(0).array().sin() + 0.1 * random_vector(n, rng).array();
  SvgpFitConfig cfg;
  cfg.num_inducing = n;
  cfg.epochs = 300;
  cfg.batch_size = n;
  cfg.learning_rate = 0.02;
  cfg.seed = 3;
  SvgpState init = init_svgp(g.inputs, g.targets, n, 3);
  init.inducing = g.inputs;
  init.var_chol = cholesky_with_jitter(kernel_matrix(init.kernel, init.inducing, init.inducing)).factor;
  const SvgpFit fit = fit_svgp(g.inputs, g.targets, cfg, &init);
  CHECK(fit.epoch_elbo.back() > fit.epoch_elbo.front());
  g.kernel = fit.state.kernel;
  g.noise = fit.state.noise;
  g.mean = fit.state.mean;
  CHECK(fit.epoch_elbo.back() <= log_marginal_likelihood(g) + 1e-6);
}

TEST_CASE("mini-batch training beats the constant predictor and is deterministic") {
  std::mt19937_64 rng(14);
  const Eigen::Index n = 200;
  const Matrix x = random_matrix(n, 1, rng, 1.5);
  const Vector f = (2.0 * x.col(0).array()).sin();
  const Vector y = f + 0.1 * random_vector(n, rng);
  SvgpFitConfig cfg;
  cfg.num_inducing = 10;
  cfg.epochs = 60;
  cfg.batch_size = 32;
  cfg.learning_rate = 0.03;
  cfg.seed = 21;
  const SvgpFit a = fit_svgp(x, y, cfg);
  const SvgpFit b = fit_svgp(x, y, cfg);
  CHECK(a.epoch_elbo.front() == b.epoch_elbo.front());
  CHECK(a.epoch_elbo.back() > a.epoch_elbo.front());
  const Matrix xv = random_matrix(100, 1, rng, 1.5);
  const Vector yv = (2.0 * xv.col(0).array()).sin();
  const Vector pred = svgp_predict(a.state, xv).mean;
  const double mse = (pred - yv).squaredNorm() / 100.0;
  const double var = (yv.array() - yv.mean()).square().mean();
  CHECK(mse < var);
}

TEST_CASE("k-means recovers separated blobs") {
  std::mt19937_64 rng(15);
  Matrix x(90, 2);
  for (int i = 0; i < 90; ++i) {
    x.row(i) = random_matrix(1, 2, rng, 0.1);
    x(i, 0) += 5.0 * (i / 30);
  }
  const auto res = kmeans(x, 3, 1, 300, 3);
  for (int blob = 0; blob < 3; ++blob) {
    for (int i = 1; i < 30; ++i) CHECK(res.labels[blob * 30 + i] == res.labels[blob * 30]);
  }
  CHECK(res.labels[0] != res.labels[30]);
  CHECK(res.labels[30] != res.labels[60]);
  CHECK_THROWS_AS(kmeans(x, 0, 1), ConfigError);
  CHECK_THROWS_AS(kmeans(x, 91, 1), ConfigError);
}
