#include "lerca/simulator.hpp"

#include <cmath>
#include <sstream>

#include "lerca/errors.hpp"

namespace lerca {

double apply_basis(Basis phi, double x) { return phi == Basis::Square ? x * x : x; }

void ScenarioSpec::validate() const {
  const auto rows = static_cast<Eigen::Index>(num_experiments());
  const auto pp = static_cast<Eigen::Index>(p);
  if (var_c.size() != pp) throw ConfigError("var_c must have p entries");
  if (cor_xc.rows() != rows || cor_xc.cols() != pp) throw ConfigError("cor_xc must be (K+1) x p");
  if (xi.rows() != rows || xi.cols() != pp + 2) throw ConfigError("xi must be (K+1) x (p+2)");
  if (first_covariate_means.size() != 0 && first_covariate_means.size() != pp) {
    throw ConfigError("first_covariate_means must have p entries");
  }
  if ((var_c.array() <= 0.0).any()) throw ConfigError("covariate variances must be positive");
  if ((cor_xc.array().abs() >= 1.0).any()) throw ConfigError("target correlations must lie in (-1, 1)");
  if (!(sigma2_y > 0.0)) throw ConfigError("outcome variance must be positive");
}

double delta_from_correlation(double cor, double var_x, double var_c) {
  if (!(var_x > 0.0) || !(var_c > 0.0)) throw ConfigError("variances must be positive");
  if (!(std::abs(cor) < 1.0)) throw ConfigError("correlation must lie in (-1, 1)");
  return cor * std::sqrt(var_x / var_c);
}

Eigen::VectorXd outcome_intercepts(const ScenarioSpec& spec) {
  const auto rows = static_cast<Eigen::Index>(spec.num_experiments());
  Eigen::VectorXd icpt(rows);
  icpt[0] = spec.xi(0, 0);
  for (Eigen::Index k = 0; k + 1 < rows; ++k) {
    const double s = apply_basis(spec.phi, spec.config.bound(static_cast<std::size_t>(k + 1)));
    icpt[k + 1] = icpt[k] + (spec.xi(k, 1) - spec.xi(k + 1, 1)) * s;
  }
  return icpt;
}

double true_er(const ScenarioSpec& spec, double x) {
  const auto k = static_cast<Eigen::Index>(locate_experiment(x, spec.config));
  return outcome_intercepts(spec)[k] + spec.xi(k, 1) * apply_basis(spec.phi, x);
}

namespace {

// Within-experiment linear model of C on X: E(C | x) = offset + slope (x - mid).
struct CovariateModel {
  std::vector<Eigen::VectorXd> offset;
  std::vector<Eigen::VectorXd> slope;
  std::vector<double> mid;
  std::vector<Eigen::MatrixXd> root;  // root * root' = conditional covariance
};

CovariateModel covariate_model(const ScenarioSpec& spec) {
  spec.validate();
  const std::size_t kk = spec.num_experiments();
  const auto p = static_cast<Eigen::Index>(spec.p);
  CovariateModel m;
  for (std::size_t k = 0; k < kk; ++k) {
    const double w = spec.config.width(k);
    const double var_x = w * w / 12.0;
    m.mid.push_back(spec.config.bound(k) + 0.5 * w);
    Eigen::VectorXd cov(p);
    for (Eigen::Index j = 0; j < p; ++j) {
      cov[j] = delta_from_correlation(spec.cor_xc(static_cast<Eigen::Index>(k), j), var_x,
                                      spec.var_c[j]) *
               spec.var_c[j];
    }
    m.slope.push_back(cov / var_x);
    Eigen::MatrixXd sigma = spec.var_c.asDiagonal();
    sigma -= cov * cov.transpose() / var_x;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma);
    const double tol = 1e-12 * spec.var_c.maxCoeff();
    if (p > 0 && eig.eigenvalues().minCoeff() < -tol) {
      std::ostringstream msg;
      msg << "conditional covariate covariance is not positive semidefinite in experiment "
          << k + 1;
      throw ConfigError(msg.str());
    }
    const Eigen::VectorXd ev = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    m.root.push_back(eig.eigenvectors() * ev.asDiagonal());
  }
  m.offset.push_back(spec.first_covariate_means.size() == p ? spec.first_covariate_means
                                                            : Eigen::VectorXd::Zero(p));
  for (std::size_t k = 0; k + 1 < kk; ++k) {
    const double s = spec.config.bound(k + 1);
    m.offset.push_back(m.offset[k] + m.slope[k] * (s - m.mid[k]) - m.slope[k + 1] * (s - m.mid[k + 1]));
  }
  return m;
}

}  // namespace

Eigen::VectorXd conditional_covariate_mean(const ScenarioSpec& spec, double x) {
  const auto m = covariate_model(spec);
  const std::size_t k = locate_experiment(x, spec.config);
  return m.offset[k] + m.slope[k] * (x - m.mid[k]);
}

Eigen::VectorXd generate_exposure(std::size_t n, double lo, double hi, Rng& rng) {
  if (!(lo < hi)) throw ConfigError("exposure bounds must satisfy lo < hi");
  Eigen::VectorXd x(static_cast<Eigen::Index>(n));
  for (auto& v : x) v = draw_uniform(rng, lo, hi);
  return x;
}

Eigen::MatrixXd generate_covariates(const Eigen::VectorXd& x, const ScenarioSpec& spec, Rng& rng) {
  const auto m = covariate_model(spec);
  const auto p = static_cast<Eigen::Index>(spec.p);
  Eigen::MatrixXd c(x.size(), p);
  Eigen::VectorXd z(p);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const std::size_t k = locate_experiment(x[i], spec.config);
    for (auto& v : z) v = draw_normal(rng, 0.0, 1.0);
    c.row(i) = (m.offset[k] + m.slope[k] * (x[i] - m.mid[k]) + m.root[k] * z).transpose();
  }
  if (x.size() > 0) c.rowwise() -= c.colwise().mean();
  return c;
}

Eigen::VectorXd generate_outcome(const Eigen::VectorXd& x, const Eigen::MatrixXd& covariates,
                                 const ScenarioSpec& spec, Rng& rng) {
  spec.validate();
  if (covariates.rows() != x.size() || covariates.cols() != static_cast<Eigen::Index>(spec.p)) {
    throw DataError("covariate table does not match exposure length and p");
  }
  const Eigen::VectorXd icpt = outcome_intercepts(spec);
  const double sd = std::sqrt(spec.sigma2_y);
  Eigen::VectorXd y(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(locate_experiment(x[i], spec.config));
    const double mean = icpt[k] + spec.xi(k, 1) * apply_basis(spec.phi, x[i]) +
                        covariates.row(i).dot(spec.xi.row(k).tail(spec.p));
    y[i] = draw_normal(rng, mean, sd);
  }
  return y;
}

Dataset simulate(const ScenarioSpec& spec, Rng& rng, const ExposureSampler& exposure) {
  if (spec.n == 0) throw ConfigError("sample size must be positive");
  spec.validate();
  Dataset d;
  d.x = exposure ? exposure(spec.n, rng)
                 : generate_exposure(spec.n, spec.config.s_min(), spec.config.s_max(), rng);
  if (d.x.size() != static_cast<Eigen::Index>(spec.n)) throw ConfigError("exposure sampler returned wrong length");
  d.covariates = generate_covariates(d.x, spec, rng);
  d.y = generate_outcome(d.x, d.covariates, spec, rng);
  for (std::size_t j = 0; j < spec.p; ++j) d.names.push_back("C" + std::to_string(j + 1));
  d.centered = true;
  d.column_means = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.p));
  return d;
}

namespace {

// Rows: experiments; columns C1..C8.
constexpr double kLocalCor[4][8] = {
    {0.423, 0.524, 0.522, 0, 0, 0, 0, 0},
    {0.525, 0.572, 0, 0.528, 0, 0, 0, 0},
    {0.402, 0, 0.447, 0, 0.533, 0, 0, 0},
    {0, 0.503, 0, 0, 0.539, 0.509, 0, 0},
};
constexpr double kLocalCoef[4][8] = {
    {0.641, 0.962, 0.646, 0, 0, 0, 0, 0},
    {0, 0.919, 0.643, 0.633, 0, 0, 0, 0},
    {0, 0.593, 0.616, 0, 0.658, 0, 0, 0},
    {0, 0.651, 0.58, 0, 0, 0.52, 0, 0},
};
constexpr double kGlobalCor[8] = {0.423, 0.524, 0.522, 0, 0, 0, 0, 0};
constexpr double kGlobalCoef[8] = {0, 0.812, 0.93, 0.82, 0, 0, 0, 0};

// Secant slopes of (x / 10)^2 between the knots 0, 2, 4, 7, 10.
constexpr double kQuadraticSlopes[4] = {0.02, 0.06, 0.11, 0.17};

// Residual variances giving a whole-sample outcome-model R^2 of about 0.9.
constexpr double kLocalSigma2 = 0.9;
constexpr double kGlobalSigma2 = 1.8;

ScenarioSpec base_scenario(const std::string& name) {
  ScenarioSpec s;
  s.name = name;
  s.config = ExperimentConfiguration::with_default_gaps({2.0, 4.0, 7.0}, 0.0, 10.0);
  s.n = 800;
  s.p = 8;
  s.var_c = Eigen::VectorXd::Ones(8);
  s.cor_xc = Eigen::MatrixXd::Zero(4, 8);
  s.xi = Eigen::MatrixXd::Zero(4, 10);
  for (int k = 0; k < 4; ++k) s.xi(k, 1) = kQuadraticSlopes[k];
  s.first_covariate_means = Eigen::VectorXd::Zero(8);
  return s;
}

}  // namespace

ScenarioSpec preset_scenario(const std::string& name) {
  ScenarioSpec s = base_scenario(name);
  if (name == "local_table3" || name == "local_reversed") {
    const bool rev = name == "local_reversed";
    for (int k = 0; k < 4; ++k) {
      const int src = rev ? 3 - k : k;
      for (int j = 0; j < 8; ++j) {
        s.cor_xc(k, j) = kLocalCor[src][j];
        s.xi(k, j + 2) = kLocalCoef[src][j];
      }
    }
    s.sigma2_y = kLocalSigma2;
  } else if (name == "global_tableC3") {
    for (int k = 0; k < 4; ++k) {
      for (int j = 0; j < 8; ++j) {
        s.cor_xc(k, j) = kGlobalCor[j];
        s.xi(k, j + 2) = kGlobalCoef[j];
      }
    }
    s.sigma2_y = kGlobalSigma2;
  } else {
    throw ConfigError("unknown scenario '" + name + "'");
  }
  s.validate();
  return s;
}

std::vector<std::string> preset_names() { return {"local_table3", "local_reversed", "global_tableC3"}; }

}  // namespace lerca
