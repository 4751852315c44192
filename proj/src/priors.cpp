#include "lerca/priors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lerca/errors.hpp"

namespace lerca {

double config_log_prior(const ExperimentConfiguration& config) {
  double total = 0.0;
  for (std::size_t k = 0; k < config.num_experiments(); ++k) {
    const double gap = config.width(k);
    if (!(gap > config.min_gaps()[k])) return kLogZero;
    total += std::log(gap);
  }
  return total;
}

ExperimentConfiguration sample_config_prior(std::size_t num_cuts, double s_min,
                                            double s_max,
                                            const std::vector<double>& min_gaps,
                                            Rng& rng) {
  if (min_gaps.size() != num_cuts + 1) {
    throw ConfigError("min_gaps must have K + 1 entries");
  }
  if (std::accumulate(min_gaps.begin(), min_gaps.end(), 0.0) >= s_max - s_min) {
    throw ConfigError("minimum gaps exceed the exposure range");
  }
  constexpr long kMaxAttempts = 1'000'000;
  std::vector<double> draws(2 * num_cuts + 1);
  std::vector<double> cuts(num_cuts);
  for (long attempt = 0; attempt < kMaxAttempts; ++attempt) {
    for (double& d : draws) d = draw_uniform(rng, s_min, s_max);
    std::sort(draws.begin(), draws.end());
    for (std::size_t k = 0; k < num_cuts; ++k) cuts[k] = draws[2 * k + 1];
    double prev = s_min;
    bool ok = true;
    for (std::size_t k = 0; k <= num_cuts && ok; ++k) {
      const double next = k < num_cuts ? cuts[k] : s_max;
      ok = next - prev > min_gaps[k];
      prev = next;
    }
    if (ok) return ExperimentConfiguration(cuts, s_min, s_max, min_gaps);
  }
  throw ConfigError("configuration prior acceptance rate below 1e-4: minimum gaps infeasible");
}

double inclusion_pair_log_prior(bool ax, bool ay, const Hyperparameters& hyper) {
  const double px = hyper.alpha_x_marginal;
  double out = std::log(ax ? px : 1.0 - px);
  if (ax) {
    const double py = hyper.omega / (1.0 + hyper.omega);
    out += std::log(ay ? py : 1.0 - py);
  } else {
    out += std::log(0.5);
  }
  return out;
}

double inclusion_log_prior(const Bits& alpha_x, const Bits& alpha_y,
                           const Hyperparameters& hyper) {
  double total = 0.0;
  for (std::size_t j = 0; j < alpha_x.size(); ++j) {
    total += inclusion_pair_log_prior(alpha_x[j] != 0, alpha_y[j] != 0, hyper);
  }
  return total;
}

double coefficient_variance_log_priors(const ExperimentParams& params,
                                       const Hyperparameters& hyper,
                                       bool include_outcome_intercept) {
  const double var0 = hyper.sigma0 * hyper.sigma0;
  double total = log_normal_pdf(params.delta_x0, hyper.mu0, var0) +
                 log_normal_pdf(params.beta, hyper.mu0, var0);
  if (include_outcome_intercept) {
    total += log_normal_pdf(params.delta_y0, hyper.mu0, var0);
  }
  for (std::size_t j = 0; j < params.p(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    if (params.alpha_x[j]) {
      total += log_normal_pdf(params.delta_x[jj], hyper.mu0, var0);
    } else if (params.delta_x[jj] != 0.0) {
      throw ConfigError("excluded exposure coefficient is nonzero");
    }
    if (params.alpha_y[j]) {
      total += log_normal_pdf(params.delta_y[jj], hyper.mu0, var0);
    } else if (params.delta_y[jj] != 0.0) {
      throw ConfigError("excluded outcome coefficient is nonzero");
    }
  }
  total += log_inv_gamma_pdf(params.sigma2_x, hyper.a0, hyper.b0);
  total += log_inv_gamma_pdf(params.sigma2_y, hyper.a0, hyper.b0);
  return total;
}

}  // namespace lerca
