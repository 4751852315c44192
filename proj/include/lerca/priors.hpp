#pragma once

#include <cstddef>
#include <vector>

#include "lerca/model.hpp"
#include "lerca/stats.hpp"

namespace lerca {

/// Unnormalized log-density of the internal cut points: the sum of log
/// spacings when every spacing exceeds its minimum gap, kLogZero otherwise.
double config_log_prior(const ExperimentConfiguration& config);

/// Even-numbered order statistics of 2K+1 uniforms on (s_min, s_max),
/// rejection-resampled until every minimum gap holds. Throws ConfigError
/// when the gaps cannot be met.
ExperimentConfiguration sample_config_prior(std::size_t num_cuts, double s_min,
                                            double s_max,
                                            const std::vector<double>& min_gaps,
                                            Rng& rng);

/// log P(alpha_x = ax) + log P(alpha_y = ay | alpha_x = ax) for one covariate.
double inclusion_pair_log_prior(bool ax, bool ay, const Hyperparameters& hyper);

/// Sum of the pair log-priors over covariates.
double inclusion_log_prior(const Bits& alpha_x, const Bits& alpha_y,
                           const Hyperparameters& hyper);

/// Normal priors on delta_x0, beta and included coefficients, inverse-gamma
/// priors on both variances. The outcome intercept enters only when
/// `include_outcome_intercept` is set (first experiment). Throws ConfigError
/// when an excluded coefficient is nonzero.
double coefficient_variance_log_priors(const ExperimentParams& params,
                                       const Hyperparameters& hyper,
                                       bool include_outcome_intercept);

}  // namespace lerca
