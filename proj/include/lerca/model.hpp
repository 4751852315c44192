#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace lerca {

using Bits = std::vector<std::uint8_t>;

/// Outcome, exposure and covariate table for n units.
///
/// Covariates are expected to be centered (see center_covariates) before any
/// model computation; the intercept recursion relies on it.
struct Dataset {
  Eigen::VectorXd y;
  Eigen::VectorXd x;
  Eigen::MatrixXd covariates;  // n x p
  std::vector<std::string> names;
  bool centered = false;
  // Column means removed by centering (zeros before centering).
  Eigen::VectorXd column_means;

  std::size_t n() const { return static_cast<std::size_t>(y.size()); }
  std::size_t p() const { return static_cast<std::size_t>(covariates.cols()); }

  /// Throws DataError on length mismatch, n == 0 or non-finite entries.
  void validate() const;
};

/// Internal cut points s_1 < ... < s_K strictly inside (s_min, s_max).
///
/// Experiment k (0-based) covers [bound(k), bound(k+1)); the last experiment
/// also contains s_max. Minimum spacings are stored but not enforced here:
/// a configuration violating them is representable and simply has zero
/// prior mass.
class ExperimentConfiguration {
 public:
  ExperimentConfiguration(std::vector<double> cuts, double s_min, double s_max,
                          std::vector<double> min_gaps);

  /// Uses the default spacing (s_max - s_min) / (4 (K + 1)) for every gap.
  static ExperimentConfiguration with_default_gaps(std::vector<double> cuts,
                                                   double s_min, double s_max);
  static std::vector<double> default_gaps(std::size_t num_cuts, double s_min,
                                          double s_max);

  std::size_t num_cuts() const { return cuts_.size(); }
  std::size_t num_experiments() const { return cuts_.size() + 1; }
  const std::vector<double>& cuts() const { return cuts_; }
  const std::vector<double>& min_gaps() const { return min_gaps_; }
  double s_min() const { return s_min_; }
  double s_max() const { return s_max_; }
  double range() const { return s_max_ - s_min_; }

  /// bound(0) = s_min, bound(k) = s_k, bound(K+1) = s_max.
  double bound(std::size_t i) const;
  double width(std::size_t experiment) const {
    return bound(experiment + 1) - bound(experiment);
  }

  /// True when every consecutive spacing exceeds its minimum gap.
  bool satisfies_gaps() const;

 private:
  std::vector<double> cuts_;
  double s_min_;
  double s_max_;
  std::vector<double> min_gaps_;
};

/// Exposure and outcome model parameters of one experiment.
struct ExperimentParams {
  Bits alpha_x;
  Bits alpha_y;
  double delta_x0 = 0.0;
  Eigen::VectorXd delta_x;
  double delta_y0 = 0.0;  // derived from the recursion for k >= 1
  double beta = 0.0;
  Eigen::VectorXd delta_y;
  double sigma2_x = 1.0;
  double sigma2_y = 1.0;

  static ExperimentParams zeros(std::size_t p);
  std::size_t p() const { return alpha_x.size(); }
  /// alpha = 0 implies delta = 0 for both models, and positive variances.
  bool consistent() const;
};

/// Complete parameter vector at one iteration.
struct ChainState {
  ExperimentConfiguration config;
  std::vector<ExperimentParams> experiments;

  /// Recomputes delta_y0 for experiments 1..K from experiment 0 and the slopes.
  void refresh_intercepts();
  /// Largest deviation from the continuity recursion.
  double recursion_residual() const;
  /// Value of the mean response at every bound s_0 .. s_{K+1}.
  std::vector<double> er_at_bounds() const;
};

struct MoveProbabilities {
  double separate = 0.8;
  double jump_over = 0.1;
  double jump_within = 0.1;
};

struct Hyperparameters {
  double mu0 = 0.0;
  double sigma0 = 100.0;
  double a0 = 0.001;
  double b0 = 0.001;
  double omega = 1000.0;
  double alpha_x_marginal = 0.5;
  MoveProbabilities move_probs;
  // Slope perturbation SD for jump-over; <= 0 means derive from the data
  // as 0.25 * sd(y) / (s_max - s_min).
  double sigma_tune = 0.0;
  // Jump-within inclusion proposal when 0, 1 or 2 current experiments include.
  double within_include[3] = {0.05, 0.5, 0.95};
  // Jump-over inclusion proposal for the combined experiment (0, 1, 2 sources).
  double combine_include[3] = {0.01, 0.5, 0.99};
  // Jump-over inclusion proposal for each split half (source excludes, includes).
  double split_include[2] = {0.2, 0.95};

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
};

/// 0-based experiment index k with bound(k) <= x < bound(k+1); x == s_max maps
/// to the last experiment. Throws RangeError outside [s_min, s_max].
std::size_t locate_experiment(double x, const ExperimentConfiguration& config);

/// Outcome intercepts of all experiments from the first intercept and slopes.
std::vector<double> intercept_recursion(double delta_y0_first,
                                        std::span<const double> betas,
                                        const ExperimentConfiguration& config);

/// Mean exposure response at x in closed form (covariates centered).
double eval_er(double x, const ChainState& state);

/// Mean exposure response computed as the average over units of the
/// unit-level conditional mean. Equals eval_er on centered data.
double eval_er_unit_average(double x, const ChainState& state,
                            const Dataset& data);

/// Slope of the experiment containing x.
double instantaneous_effect(double x, const ChainState& state);

/// eval_er(x + delta) - eval_er(x).
double shift_effect(double x, double delta, const ChainState& state);

/// Returns a copy with zero-mean covariate columns; records the removed means.
Dataset center_covariates(const Dataset& data);

}  // namespace lerca
