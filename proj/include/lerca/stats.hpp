#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <vector>

namespace lerca {

using Rng = std::mt19937_64;

// Log of zero probability. Propagates through sums and loses every
// Metropolis-Hastings comparison.
inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

inline bool is_log_zero(double v) { return v == kLogZero; }

double log_normal_pdf(double x, double mean, double var);
double log_inv_gamma_pdf(double v, double shape, double rate);

double log_sum_exp(std::span<const double> values);

// Sample quantile with linear interpolation between order statistics
// (R's type 7). `sorted` must be ascending and non-empty.
double quantile_sorted(std::span<const double> sorted, double prob);

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

// Asymptotic Kolmogorov tail probability with Stephens' small-sample
// correction, for effective sample size n_eff.
double kolmogorov_pvalue(double statistic, double n_eff);

KsResult ks_one_sample(std::vector<double> sample,
                       const std::function<double(double)>& cdf);
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);

// Random draws. All samplers take the chain-owned engine explicitly.
double draw_uniform(Rng& rng, double lo, double hi);
double draw_normal(Rng& rng, double mean, double sd);
double draw_inv_gamma(Rng& rng, double shape, double rate);
bool draw_bernoulli(Rng& rng, double prob);

}  // namespace lerca
