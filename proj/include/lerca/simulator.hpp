#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lerca/model.hpp"
#include "lerca/stats.hpp"

namespace lerca {

enum class Basis { Identity, Square };

double apply_basis(Basis phi, double x);

/// Data-generating mechanism with exposure drawn first and covariates drawn
/// conditional on exposure, experiment by experiment.
struct ScenarioSpec {
  std::string name;
  ExperimentConfiguration config = ExperimentConfiguration::with_default_gaps({}, 0.0, 1.0);
  std::size_t n = 0;
  std::size_t p = 0;
  Eigen::VectorXd var_c;          // p marginal covariate variances
  Eigen::MatrixXd cor_xc;         // (K+1) x p within-experiment Cor(X, C_j)
  // (K+1) x (p+2): intercept, exposure coefficient, covariate coefficients.
  // Intercepts of experiments after the first are overwritten by the
  // continuity recursion.
  Eigen::MatrixXd xi;
  Basis phi = Basis::Identity;
  double sigma2_y = 1.0;
  Eigen::VectorXd first_covariate_means;  // E(C) in the first experiment; zeros by default

  std::size_t num_experiments() const { return config.num_experiments(); }
  /// Throws ConfigError on shape mismatches, |cor| >= 1 or non-positive variances.
  void validate() const;
};

/// delta_j with Cor(X, C_j) = delta_j sqrt(Var(C_j) / Var(X)).
double delta_from_correlation(double cor, double var_x, double var_c);

/// Outcome intercepts of all experiments, first one taken from spec.xi(0, 0).
Eigen::VectorXd outcome_intercepts(const ScenarioSpec& spec);

/// Causal mean response at x (covariates have mean zero).
double true_er(const ScenarioSpec& spec, double x);

/// E(C | X = x) before the final centering step.
Eigen::VectorXd conditional_covariate_mean(const ScenarioSpec& spec, double x);

/// i.i.d. uniform on (lo, hi).
Eigen::VectorXd generate_exposure(std::size_t n, double lo, double hi, Rng& rng);

/// Covariates given exposure, then centered column by column.
Eigen::MatrixXd generate_covariates(const Eigen::VectorXd& x, const ScenarioSpec& spec, Rng& rng);

Eigen::VectorXd generate_outcome(const Eigen::VectorXd& x, const Eigen::MatrixXd& covariates,
                                 const ScenarioSpec& spec, Rng& rng);

using ExposureSampler = std::function<Eigen::VectorXd(std::size_t, Rng&)>;

/// Full dataset (covariates named C1..Cp, flagged centered). Exposure is
/// uniform over the configuration bounds unless a sampler is given.
Dataset simulate(const ScenarioSpec& spec, Rng& rng, const ExposureSampler& exposure = {});

/// "local_table3", "local_reversed" or "global_tableC3".
ScenarioSpec preset_scenario(const std::string& name);

std::vector<std::string> preset_names();

}  // namespace lerca
