#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lerca/model.hpp"
#include "lerca/sampler.hpp"

namespace lerca {

/// WAIC from a (draws x observations) matrix of log p(x_i, y_i | theta_t).
double waic_from_pointwise(const Eigen::MatrixXd& log_density);

/// WAIC over all retained draws of all chains, pooled.
double waic(const std::vector<ChainOutput>& chains);

/// Potential scale reduction of one scalar traced across chains of equal
/// length: sqrt((W + B/n) / W) with W the mean within-chain variance
/// (divisor n) and B/n the variance of the chain means (divisor m - 1).
/// A quantity with zero within-chain variance yields 1.
double potential_scale_reduction(const std::vector<std::vector<double>>& traces);

enum class PsrTarget { MeanResponse, Slope };

/// PSR at every grid point of the mean response (or of the local slope).
std::vector<double> psr(const std::vector<ChainOutput>& chains, const std::vector<double>& grid,
                        PsrTarget target = PsrTarget::MeanResponse);

bool psr_converged(const std::vector<double>& values, double threshold = 0.1);

/// n equally spaced points from lo to hi inclusive.
std::vector<double> default_grid(double lo, double hi, std::size_t n = 100);

struct PosteriorSummary {
  std::vector<double> grid;
  std::vector<double> er_mean, er_lower, er_upper;
  std::vector<double> delta_mean, delta_lower, delta_upper;
  // covariates x grid points
  Eigen::MatrixXd inclusion_x;
  Eigen::MatrixXd inclusion_y;
  std::vector<double> s_draws;
  double waic = 0.0;       // NaN when no pointwise densities were recorded
  std::vector<double> psr;  // empty with fewer than two chains
};

PosteriorSummary summarize(const std::vector<ChainOutput>& chains,
                           const std::vector<double>& grid, double credible_level = 0.95);

/// Same summaries computed from bare draws (no WAIC or PSR).
PosteriorSummary summarize_draws(const std::vector<std::vector<ChainState>>& chains,
                                 const std::vector<double>& grid, double credible_level = 0.95);

struct ScreenRow {
  std::string covariate;
  std::string stratum;  // "low" or "high"
  std::size_t n = 0;
  bool defined = true;  // false when the covariate is constant in the stratum
  double exposure_coef = 0.0;  // |slope| of x on the standardized covariate
  double exposure_p = 1.0;
  double outcome_coef = 0.0;   // |slope| of y on the standardized covariate
  double outcome_p = 1.0;
};

/// Per-covariate simple regressions of x and of y on the standardized
/// covariate within x < low_cut and x > high_cut, with two-sided t-test
/// p-values on n - 2 degrees of freedom.
std::vector<ScreenRow> exploratory_screen(const Dataset& data, double low_cut, double high_cut);

/// Two-sided p-value and slope of the simple regression of `response` on
/// `predictor` with an intercept. Throws NumericalError for a constant predictor.
struct SimpleRegression {
  double slope = 0.0;
  double t = 0.0;
  double p_value = 1.0;
};
SimpleRegression simple_regression(const Eigen::VectorXd& predictor, const Eigen::VectorXd& response);

struct InclusionPattern {
  Bits alpha_y;
  double frequency = 0.0;
  double beta_mean = 0.0;  // mean slope among draws with this pattern
};

/// Outcome-model inclusion patterns of the experiment containing x_ref,
/// pooled across draws and sorted by decreasing frequency.
std::vector<InclusionPattern> inclusion_patterns(const std::vector<ChainOutput>& chains,
                                                 double x_ref);

}  // namespace lerca
