#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "lerca/model.hpp"

namespace lerca {

/// Observations falling in one experiment, materialized as local copies.
struct ExperimentSlice {
  std::vector<Eigen::Index> indices;
  Eigen::VectorXd y;
  Eigen::VectorXd x;
  Eigen::MatrixXd covariates;
  double lower = 0.0;  // left end of the experiment, s_{k-1}

  std::size_t n() const { return indices.size(); }
};

/// Observations with lower <= x < upper (x <= upper when closed_right).
ExperimentSlice make_slice(const Dataset& data, double lower, double upper,
                           bool closed_right);
ExperimentSlice make_slice(const Dataset& data,
                           const ExperimentConfiguration& config,
                           std::size_t experiment);
std::vector<ExperimentSlice> slice_by_experiment(const Dataset& data,
                                                 const ExperimentConfiguration& config);

/// Per-observation log p(x_i, y_i | theta): exposure plus outcome density at
/// the observation's experiment.
Eigen::VectorXd pointwise_log_density(const ChainState& state, const Dataset& data);

/// Log-likelihood contribution of one experiment's observations under
/// `params`; the slice's `lower` is used as the slope origin.
double experiment_loglik(const ExperimentSlice& slice, const ExperimentParams& params);

/// Full conditional data log-likelihood; 0 for an empty dataset.
double conditional_loglik(const ChainState& state, const Dataset& data);

/// Which regression a marginal likelihood refers to.
struct ResponseModel {
  enum class Kind {
    Exposure,         // x on (1, C_included)
    OutcomeResidual,  // y - delta_y0 - beta (x - lower) on C_included, no intercept
    Outcome,          // y on (1, x - lower, C_included)
  };
  Kind kind = Kind::Exposure;
  double delta_y0 = 0.0;
  double beta = 0.0;

  static ResponseModel exposure() { return {Kind::Exposure, 0.0, 0.0}; }
  static ResponseModel outcome_residual(double delta_y0, double beta) {
    return {Kind::OutcomeResidual, delta_y0, beta};
  }
  static ResponseModel outcome() { return {Kind::Outcome, 0.0, 0.0}; }
};

struct RegressionProblem {
  Eigen::VectorXd response;
  Eigen::MatrixXd design;
  std::vector<std::string> column_labels;
};

RegressionProblem build_regression(const ExperimentSlice& slice, const Bits& included,
                                   const ResponseModel& model);

/// log of the marginal density of the response with every coefficient given
/// an independent N(mu0, sigma0^2) prior and the variance an IG(a0, b0) prior.
/// Coefficients are integrated analytically and the variance by adaptive
/// quadrature on log sigma^2. Throws NumericalError for collinear columns.
double log_marginal_exact(const RegressionProblem& problem, const Hyperparameters& hyper);
double marginal_loglik_exact(const ExperimentSlice& slice, const Bits& included,
                             const ResponseModel& model, const Hyperparameters& hyper);

/// Floor applied to the residual sum of squares before taking logs.
inline constexpr double kRssFloor = 1e-12;

/// -BIC/2 of the least-squares fit; BIC = n log(RSS/n) + q log n with q the
/// number of design columns. Throws InsufficientDataError when n <= q + 1.
double log_marginal_bic(const RegressionProblem& problem);
double marginal_loglik_bic(const ExperimentSlice& slice, const Bits& included,
                           const ResponseModel& model);

/// Smallest experiment size accepted by the configuration moves for p
/// covariates: max(10, q + 3) with q = p + 1 the largest design.
std::size_t min_experiment_size(std::size_t p);

}  // namespace lerca
