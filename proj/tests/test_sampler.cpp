#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include <boost/math/distributions/inverse_gamma.hpp>

#include "lerca/errors.hpp"
#include "lerca/likelihood.hpp"
#include "lerca/priors.hpp"
#include "lerca/sampler.hpp"
#include "lerca/stats.hpp"
#include "oracles.hpp"

using namespace lerca;

namespace {

Dataset fixture(int n, std::uint64_t seed, double x_lo = 0.0, double x_hi = 10.0) {
  Rng rng(seed);
  Dataset d;
  d.x.resize(n);
  d.y.resize(n);
  d.covariates.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    const double x = draw_uniform(rng, x_lo, x_hi);
    const double c1 = 0.3 * (x - 5.0) + draw_normal(rng, 0.0, 1.0);
    const double c2 = draw_normal(rng, 0.0, 1.0);
    d.x[i] = x;
    d.covariates(i, 0) = c1;
    d.covariates(i, 1) = c2;
    d.y[i] = 1.0 + 0.5 * x + 0.8 * c1 - 0.4 * c2 + draw_normal(rng, 0.0, 1.0);
  }
  d.names = {"C1", "C2"};
  return center_covariates(d);
}

ExperimentSlice whole(const Dataset& d, double lo = 0.0, double hi = 10.0) {
  return make_slice(d, lo, hi, true);
}

Eigen::MatrixXd design(const ExperimentSlice& s, bool intercept, bool slope) {
  const Eigen::Index n = s.y.size();
  const Eigen::Index extra = (intercept ? 1 : 0) + (slope ? 1 : 0);
  Eigen::MatrixXd w(n, extra + s.covariates.cols());
  Eigen::Index c = 0;
  if (intercept) w.col(c++).setOnes();
  if (slope) w.col(c++) = s.x.array() - s.lower;
  w.rightCols(s.covariates.cols()) = s.covariates;
  return w;
}

// Conditional Normal for theta in r = W theta + e with known variance.
std::pair<Eigen::VectorXd, Eigen::MatrixXd> normal_conditional(const Eigen::MatrixXd& w, const Eigen::VectorXd& r,
                                                               double s2, const Hyperparameters& h) {
  const double var0 = h.sigma0 * h.sigma0;
  Eigen::MatrixXd a = w.transpose() * w / s2;
  a.diagonal().array() += 1.0 / var0;
  const Eigen::MatrixXd cov = a.inverse();
  const Eigen::VectorXd b = w.transpose() * r / s2 + Eigen::VectorXd::Constant(w.cols(), h.mu0 / var0);
  return {cov * b, cov};
}

double ig_cdf(double v, double shape, double rate) {
  return boost::math::cdf(boost::math::inverse_gamma(shape, rate), v);
}

}  // namespace

TEST_CASE("exposure block: coefficients match the Normal conditional and variance the IG") {
  const Dataset d = fixture(60, 1);
  const auto s = whole(d);
  Hyperparameters h;
  h.sigma0 = 3.0;
  h.mu0 = 0.2;
  auto e = ExperimentParams::zeros(2);
  e.alpha_x = {1, 0};
  e.sigma2_x = 2.0;

  Eigen::MatrixXd w(s.y.size(), 2);
  w.col(0).setOnes();
  w.col(1) = s.covariates.col(0);
  const auto [mean, cov] = normal_conditional(w, s.x, e.sigma2_x, h);

  Rng rng(7);
  const int draws = 40000;
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(2);
  Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(2, 2);
  std::vector<double> u;
  for (int i = 0; i < draws; ++i) {
    const auto out = gibbs_update_exposure_params(e, s, h, rng);
    CHECK(out.delta_x[1] == 0.0);
    Eigen::Vector2d th(out.delta_x0, out.delta_x[0]);
    m1 += th;
    m2 += th * th.transpose();
    // Given the drawn coefficients the variance is IG(a0 + n/2, b0 + rss/2).
    const double rss = (s.x - w * th).squaredNorm();
    u.push_back(ig_cdf(out.sigma2_x, h.a0 + 0.5 * s.n(), h.b0 + 0.5 * rss));
  }
  m1 /= draws;
  const Eigen::MatrixXd c = m2 / draws - m1 * m1.transpose();
  for (int j = 0; j < 2; ++j) {
    const double sd = std::sqrt(cov(j, j));
    CHECK(std::abs(m1[j] - mean[j]) < 4.0 * sd / std::sqrt(draws));
    CHECK(std::sqrt(c(j, j)) == doctest::Approx(sd).epsilon(0.02));
  }
  CHECK(c(0, 1) / std::sqrt(c(0, 0) * c(1, 1)) ==
        doctest::Approx(cov(0, 1) / std::sqrt(cov(0, 0) * cov(1, 1))).epsilon(0.03));
  CHECK(ks_one_sample(u, [](double t) { return t; }).p_value > 0.01);

  const auto fixed = gibbs_update_exposure_params(e, s, h, rng, false);
  CHECK(fixed.sigma2_x == e.sigma2_x);
}

TEST_CASE("diffuse coefficient prior gives the least-squares mean") {
  const Dataset d = fixture(80, 2);
  const auto s = whole(d);
  Hyperparameters h;
  h.sigma0 = 1e6;
  auto e = ExperimentParams::zeros(2);
  e.alpha_x = {1, 1};
  e.sigma2_x = 1e-8;
  const Eigen::MatrixXd w = design(s, true, false);
  const Eigen::VectorXd ols = w.colPivHouseholderQr().solve(s.x);
  Rng rng(3);
  const auto out = gibbs_update_exposure_params(e, s, h, rng, false);
  CHECK(out.delta_x0 == doctest::Approx(ols[0]).epsilon(1e-3));
  CHECK(out.delta_x[0] == doctest::Approx(ols[1]).epsilon(1e-3));
  CHECK(out.delta_x[1] == doctest::Approx(ols[2]).epsilon(1e-3));
}

TEST_CASE("outcome covariate block works on the residual without an intercept") {
  const Dataset d = fixture(60, 4);
  const auto s = whole(d);
  Hyperparameters h;
  h.sigma0 = 2.0;
  auto e = ExperimentParams::zeros(2);
  e.alpha_y = {0, 1};
  e.delta_y0 = 1.1;
  e.beta = 0.45;
  e.sigma2_y = 1.5;
  const Eigen::VectorXd r = s.y.array() - e.delta_y0 - e.beta * (s.x.array() - s.lower);
  const Eigen::MatrixXd w = s.covariates.col(1);
  const auto [mean, cov] = normal_conditional(w, r, e.sigma2_y, h);

  Rng rng(9);
  const int draws = 40000;
  std::vector<double> v, u;
  for (int i = 0; i < draws; ++i) {
    const auto out = gibbs_update_outcome_covariate_params(e, s, h, rng);
    CHECK(out.delta_y[0] == 0.0);
    CHECK(out.delta_y0 == e.delta_y0);
    v.push_back(out.delta_y[1]);
    const double rss = (r - w * out.delta_y[1]).squaredNorm();
    u.push_back(ig_cdf(out.sigma2_y, h.a0 + 0.5 * s.n(), h.b0 + 0.5 * rss));
  }
  const auto m = oracle::moments(v);
  CHECK(std::abs(m.mean - mean[0]) < 4.0 * std::sqrt(cov(0, 0) / draws));
  CHECK(m.sd == doctest::Approx(std::sqrt(cov(0, 0))).epsilon(0.02));
  CHECK(ks_one_sample(u, [](double t) { return t; }).p_value > 0.01);
}

TEST_CASE("inclusion update probability matches the Gaussian marginal ratio") {
  const Dataset d = fixture(40, 5);
  const auto s = whole(d);
  Hyperparameters h;
  h.sigma0 = 1.5;
  h.omega = 4.0;
  Rng rng(11);
  for (Side side : {Side::Exposure, Side::Outcome}) {
    for (int partner : {0, 1}) {
      auto e = ExperimentParams::zeros(2);
      e.alpha_x = {0, 1};
      e.delta_x = Eigen::Vector2d(0.0, 0.3);
      e.delta_x0 = 4.8;
      e.alpha_y = {0, 1};
      e.delta_y = Eigen::Vector2d(0.0, -0.35);
      e.delta_y0 = 1.0;
      e.beta = 0.5;
      e.sigma2_x = 7.0;
      e.sigma2_y = 1.2;
      (side == Side::Exposure ? e.alpha_y : e.alpha_x)[0] = static_cast<std::uint8_t>(partner);
      const bool exposure = side == Side::Exposure;
      const double s2 = exposure ? e.sigma2_x : e.sigma2_y;
      Eigen::VectorXd r = exposure ? Eigen::VectorXd(s.x.array() - e.delta_x0 - s.covariates.col(1).array() * 0.3)
                                   : Eigen::VectorXd(s.y.array() - e.delta_y0 - e.beta * (s.x.array() - s.lower) +
                                                     0.35 * s.covariates.col(1).array());
      // Full n-dimensional Gaussian densities with and without the column.
      const Eigen::VectorXd c = s.covariates.col(0);
      const Eigen::Index n = r.size();
      auto log_mvn = [&](const Eigen::MatrixXd& cov, const Eigen::VectorXd& mean) {
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        const Eigen::VectorXd z = llt.matrixL().solve(r - mean);
        return -0.5 * n * std::log(2 * M_PI) - Eigen::VectorXd(llt.matrixL().toDenseMatrix().diagonal()).array().log().sum() -
               0.5 * z.squaredNorm();
      };
      const Eigen::MatrixXd i_n = Eigen::MatrixXd::Identity(n, n);
      const double l0 = log_mvn(s2 * i_n, Eigen::VectorXd::Zero(n));
      const double l1 = log_mvn(s2 * i_n + h.sigma0 * h.sigma0 * c * c.transpose(), h.mu0 * c);
      const double p1 = exposure ? inclusion_pair_log_prior(true, partner, h) : inclusion_pair_log_prior(partner, true, h);
      const double p0 = exposure ? inclusion_pair_log_prior(false, partner, h) : inclusion_pair_log_prior(partner, false, h);
      const double expected = 1.0 / (1.0 + std::exp(p0 + l0 - p1 - l1));
      auto copy = e;
      const double prob = gibbs_update_alpha(copy, s, h, 0, side, rng);
      INFO("side=" << (exposure ? "x" : "y") << " partner=" << partner);
      CHECK(prob == doctest::Approx(expected).epsilon(1e-8));
      const auto& bits = exposure ? copy.alpha_x : copy.alpha_y;
      const auto& coef = exposure ? copy.delta_x : copy.delta_y;
      if (!bits[0]) CHECK(coef[0] == 0.0);
      CHECK(copy.consistent());
    }
  }
}

TEST_CASE("large omega forces outcome inclusion when the exposure side includes") {
  const Dataset d = fixture(40, 6);
  const auto s = whole(d);
  Hyperparameters h;
  h.omega = 1e12;
  auto e = ExperimentParams::zeros(2);
  e.alpha_x = {0, 1};
  e.delta_x[1] = 0.1;
  Rng rng(2);
  // C2 has no effect on the residual once its true coefficient is removed.
  e.delta_y0 = 1.0;
  e.beta = 0.5;
  const double prob = gibbs_update_alpha(e, s, h, 1, Side::Outcome, rng);
  CHECK(prob > 0.999);
  CHECK(e.alpha_y[1] == 1);
}

TEST_CASE("shared outcome parameters: conditional draws and continuity") {
  const Dataset d = fixture(120, 8);
  Hyperparameters h;
  h.sigma0 = 5.0;
  ChainState st{ExperimentConfiguration::with_default_gaps({3.0, 6.5}, 0.0, 10.0), {}};
  Rng rng(13);
  for (int k = 0; k < 3; ++k) {
    auto e = ExperimentParams::zeros(2);
    e.alpha_y = {1, static_cast<std::uint8_t>(k % 2)};
    e.delta_y[0] = 0.7;
    if (k % 2) e.delta_y[1] = -0.3;
    e.beta = 0.3 + 0.1 * k;
    e.sigma2_y = 0.8 + 0.4 * k;
    st.experiments.push_back(e);
  }
  st.experiments[0].delta_y0 = 0.5;
  st.refresh_intercepts();
  const auto slices = slice_by_experiment(d, st.config);

  // Mean of observation i as a function of one parameter; linear, so two
  // evaluations give the coefficient and offset.
  auto means = [&](const ChainState& s) {
    Eigen::VectorXd m(d.n());
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const auto k = locate_experiment(d.x[i], s.config);
      const auto& e = s.experiments[k];
      m[i] = e.delta_y0 + e.beta * (d.x[i] - s.config.bound(k)) + d.covariates.row(i).dot(e.delta_y);
    }
    return m;
  };
  Eigen::VectorXd var(d.n());
  for (Eigen::Index i = 0; i < var.size(); ++i) var[i] = st.experiments[locate_experiment(d.x[i], st.config)].sigma2_y;

  auto check_param = [&](auto set, auto update, const char* label) {
    ChainState s0 = st, s1 = st;
    set(s0, 0.0);
    set(s1, 1.0);
    const Eigen::VectorXd b = means(s0);
    const Eigen::VectorXd a = means(s1) - b;
    const double var0 = h.sigma0 * h.sigma0;
    const double prec = 1.0 / var0 + (a.array().square() / var.array()).sum();
    const double mean = (h.mu0 / var0 + (a.array() * (d.y - b).array() / var.array()).sum()) / prec;
    INFO(label);
    Eigen::Index idx;
    a.cwiseAbs().maxCoeff(&idx);
    std::vector<double> v;
    double worst = 0.0;
    for (int i = 0; i < 20000; ++i) {
      ChainState t = st;
      update(t);
      worst = std::max(worst, t.recursion_residual());
      // Recover the drawn value from the mean vector.
      v.push_back((means(t) - b)[idx] / a[idx]);
    }
    CHECK(worst < 1e-12);
    const auto m = oracle::moments(v);
    CHECK(std::abs(m.mean - mean) < 4.0 / std::sqrt(prec * v.size()));
    CHECK(m.sd == doctest::Approx(1.0 / std::sqrt(prec)).epsilon(0.03));
  };

  check_param([](ChainState& s, double v) { s.experiments[0].delta_y0 = v; s.refresh_intercepts(); },
              [&](ChainState& s) { gibbs_update_delta10(s, slices, h, rng); }, "delta10");
  for (std::size_t k = 0; k < 3; ++k) {
    check_param([k](ChainState& s, double v) { s.experiments[k].beta = v; s.refresh_intercepts(); },
                [&, k](ChainState& s) { gibbs_update_beta(s, slices, h, k, rng); }, "beta");
  }
}

TEST_CASE("run_chain is deterministic per seed and handles K = 0") {
  const Dataset d = fixture(150, 21);
  Hyperparameters h;
  Schedule sch{400, 200, 2};
  SamplerOptions o;
  o.bounds = {{0.0, 10.0}};
  const auto a = run_chain(d, 1, h, sch, 99, o);
  const auto b = run_chain(d, 1, h, sch, 99, o);
  const auto c = run_chain(d, 1, h, sch, 100, o);
  REQUIRE(a.draws.size() == 100);
  CHECK(a.loglik == b.loglik);
  CHECK(a.pointwise == b.pointwise);
  for (std::size_t i = 0; i < a.draws.size(); ++i) {
    CHECK(a.draws[i].config.cuts() == b.draws[i].config.cuts());
    CHECK(a.draws[i].experiments[1].beta == b.draws[i].experiments[1].beta);
  }
  CHECK(a.loglik != c.loglik);
  CHECK(a.loglik.size() == sch.iterations);
  CHECK(a.pointwise.rows() == 100);
  CHECK(a.pointwise.cols() == 150);

  // Move bookkeeping: one configuration proposal per iteration when K > 0.
  const auto& st = a.stats;
  CHECK(st.separate.proposed + st.jump_over.proposed + st.jump_within.proposed == sch.iterations);
  CHECK(st.separate.accepted <= st.separate.proposed);
  CHECK(st.gibbs_sweeps == sch.iterations);
  CHECK(st.alpha_updates == sch.iterations * 2 * 2 * 2);

  const auto k0 = run_chain(d, 0, h, sch, 5, o);
  CHECK(k0.stats.separate.proposed + k0.stats.jump_over.proposed + k0.stats.jump_within.proposed == 0);
  for (const auto& s : k0.draws) {
    CHECK(s.config.num_cuts() == 0);
    CHECK(s.experiments.size() == 1);
  }
}

TEST_CASE("conjugate fixture: posterior moments within Monte Carlo error") {
  const Dataset d = fixture(50, 31);
  Hyperparameters h;
  SamplerOptions o;
  o.bounds = {{0.0, 10.0}};
  o.fixed_alpha = {{Bits{1, 1}, Bits{1, 1}}};
  o.record_pointwise = false;
  const auto out = run_chain(d, 0, h, Schedule{21000, 1000, 2}, 77, o);
  const auto s = whole(d);
  const auto px = oracle::semi_conjugate_posterior(design(s, true, false), s.x, h);
  const auto py = oracle::semi_conjugate_posterior(design(s, true, true), s.y, h);

  auto series = [&](auto get) {
    std::vector<double> v;
    for (const auto& st : out.draws) v.push_back(get(st.experiments[0]));
    return v;
  };
  auto check = [&](const std::vector<double>& v, double mean, double sd, const char* label) {
    const auto m = oracle::moments(v);
    INFO(label << " mean " << m.mean << " vs " << mean << " (se " << m.mean_se << "), sd " << m.sd << " vs " << sd
               << " (se " << m.sd_se << ")");
    CHECK(std::abs(m.mean - mean) < 3.0 * m.mean_se);
    CHECK(std::abs(m.sd - sd) < 3.0 * m.sd_se);
  };
  check(series([](const ExperimentParams& e) { return e.delta_x0; }), px.mean[0], px.sd[0], "delta_x0");
  check(series([](const ExperimentParams& e) { return e.delta_x[0]; }), px.mean[1], px.sd[1], "delta_x1");
  check(series([](const ExperimentParams& e) { return e.delta_x[1]; }), px.mean[2], px.sd[2], "delta_x2");
  check(series([](const ExperimentParams& e) { return e.sigma2_x; }), px.sigma2_mean, px.sigma2_sd, "sigma2_x");
  check(series([](const ExperimentParams& e) { return e.delta_y0; }), py.mean[0], py.sd[0], "delta_y0");
  check(series([](const ExperimentParams& e) { return e.beta; }), py.mean[1], py.sd[1], "beta");
  check(series([](const ExperimentParams& e) { return e.delta_y[0]; }), py.mean[2], py.sd[2], "delta_y1");
  check(series([](const ExperimentParams& e) { return e.delta_y[1]; }), py.mean[3], py.sd[3], "delta_y2");
  check(series([](const ExperimentParams& e) { return e.sigma2_y; }), py.sigma2_mean, py.sigma2_sd, "sigma2_y");
}

TEST_CASE("run_chains matches run_chain and ignores the thread count") {
  const Dataset d = fixture(150, 22);
  Hyperparameters h;
  Schedule sch{200, 100, 5};
  SamplerOptions o;
  o.bounds = {{0.0, 10.0}};
  const auto single = run_chain(d, 1, h, sch, 40, o);
  const auto one = run_chains(d, 1, h, sch, 1, 40, o);
  REQUIRE(one.chains.size() == 1);
  CHECK(one.chains[0].loglik == single.loglik);
  const auto t1 = run_chains(d, 1, h, sch, 3, 40, o, 1);
  const auto t3 = run_chains(d, 1, h, sch, 3, 40, o, 3);
  REQUIRE(t1.chains.size() == 3);
  REQUIRE(t3.chains.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(t1.chains[i].seed == 40 + i);
    CHECK(t1.chains[i].loglik == t3.chains[i].loglik);
  }
  CHECK_THROWS_AS(run_chains(d, 1, h, sch, 0, 40, o), ConfigError);
}

TEST_CASE("run_chain input errors") {
  Dataset d = fixture(150, 23);
  Hyperparameters h;
  Schedule sch{50, 10, 1};
  Dataset raw = d;
  raw.centered = false;
  CHECK_THROWS_AS(run_chain(raw, 0, h, sch, 1), ConfigError);
  CHECK_THROWS_AS(run_chain(d, 0, h, Schedule{10, 10, 1}, 1), ConfigError);
  // 150 observations cannot host 20 experiments of at least 10.
  CHECK_THROWS_AS(run_chain(d, 19, h, sch, 1), InsufficientDataError);
  SamplerOptions o;
  o.fixed_alpha = {{Bits{1}, Bits{1}}};
  CHECK_THROWS_AS(run_chain(d, 0, h, sch, 1, o), ConfigError);

  // A failing chain is reported without aborting the others.
  SamplerOptions bad;
  bad.initial_cuts = std::vector<double>{5.0, 6.0};
  const auto multi = run_chains(d, 1, h, sch, 2, 1, bad);
  CHECK(multi.chains.empty());
  CHECK(multi.failures.size() == 2);
}
