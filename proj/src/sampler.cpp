#include "lerca/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

#include "lerca/errors.hpp"
#include "lerca/priors.hpp"

namespace lerca {

std::size_t Schedule::retained() const {
  return iterations > burn_in ? (iterations - burn_in) / thin : 0;
}

void Schedule::validate() const {
  if (thin == 0) throw ConfigError("thin must be at least 1");
  if (burn_in >= iterations) throw ConfigError("burn_in must be smaller than iterations");
}

namespace {

double sample_variance(const Eigen::VectorXd& v) {
  if (v.size() < 2) return 1.0;
  const double var = (v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1);
  return var > 0.0 ? var : 1.0;
}

double clamp_variance(double v) { return std::clamp(v, 1e-300, 1e300); }

// Draw from N(P^{-1} rhs, P^{-1}); retries once with a small diagonal jitter.
Eigen::VectorXd draw_from_precision(const Eigen::MatrixXd& precision, const Eigen::VectorXd& rhs,
                                    Rng& rng) {
  const auto q = precision.rows();
  if (q == 0) return Eigen::VectorXd(0);
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) {
    llt.compute(precision + 1e-10 * Eigen::MatrixXd::Identity(q, q));
    if (llt.info() != Eigen::Success) {
      throw NumericalError("conditional precision matrix is not positive definite");
    }
  }
  const Eigen::VectorXd mean = llt.solve(rhs);
  Eigen::VectorXd z(q);
  for (Eigen::Index i = 0; i < q; ++i) z[i] = draw_normal(rng, 0.0, 1.0);
  return mean + llt.matrixU().solve(z);
}

// Coefficients of a Gaussian regression with N(mu0, sigma0^2) priors.
Eigen::VectorXd draw_coefficients(const RegressionProblem& prob, double sigma2,
                                  const Hyperparameters& hyper, Rng& rng) {
  const auto q = prob.design.cols();
  const double var0 = hyper.sigma0 * hyper.sigma0;
  Eigen::MatrixXd precision = prob.design.transpose() * prob.design / sigma2;
  precision.diagonal().array() += 1.0 / var0;
  const Eigen::VectorXd rhs = prob.design.transpose() * prob.response / sigma2 +
                              Eigen::VectorXd::Constant(q, hyper.mu0 / var0);
  return draw_from_precision(precision, rhs, rng);
}

double draw_variance(std::size_t n, double rss, const Hyperparameters& hyper, Rng& rng) {
  return clamp_variance(
      draw_inv_gamma(rng, hyper.a0 + 0.5 * static_cast<double>(n), hyper.b0 + 0.5 * rss));
}

void scatter(const Bits& included, const Eigen::VectorXd& theta, Eigen::Index offset,
             Eigen::VectorXd& coef) {
  coef.setZero();
  Eigen::Index next = offset;
  for (std::size_t j = 0; j < included.size(); ++j) {
    if (included[j]) coef[static_cast<Eigen::Index>(j)] = theta[next++];
  }
}

std::size_t count_in(const std::vector<double>& sorted, double lo, double hi, bool closed) {
  const auto first = std::lower_bound(sorted.begin(), sorted.end(), lo);
  const auto last = closed ? std::upper_bound(sorted.begin(), sorted.end(), hi)
                           : std::lower_bound(sorted.begin(), sorted.end(), hi);
  return last > first ? static_cast<std::size_t>(last - first) : 0;
}

double log_beta_prior(double beta, const Hyperparameters& hyper) {
  return log_normal_pdf(beta, hyper.mu0, hyper.sigma0 * hyper.sigma0);
}

double log_bernoulli(bool bit, double prob) { return std::log(bit ? prob : 1.0 - prob); }

bool accept(double log_ratio, Rng& rng) {
  if (std::isnan(log_ratio)) return false;
  if (log_ratio >= 0.0) return true;
  return std::log(draw_uniform(rng, 0.0, 1.0)) < log_ratio;
}

// Sum of per-experiment conditional log-likelihoods over experiments lo..hi.
double experiments_loglik(const SamplerContext& ctx, const ChainState& state, std::size_t lo,
                          std::size_t hi) {
  double total = 0.0;
  for (std::size_t k = lo; k <= hi; ++k) {
    total += experiment_loglik(make_slice(ctx.data, state.config, k), state.experiments[k]);
  }
  return total;
}

// BIC-approximated marginal log-likelihood of one experiment, exposure plus
// outcome, with the outcome measured around its intercept and slope.
double experiment_bic(const SamplerContext& ctx, const ChainState& state, std::size_t k) {
  const auto slice = make_slice(ctx.data, state.config, k);
  const auto& e = state.experiments[k];
  return marginal_loglik_bic(slice, e.alpha_x, ResponseModel::exposure()) +
         marginal_loglik_bic(slice, e.alpha_y, ResponseModel::outcome_residual(e.delta_y0, e.beta));
}

double experiment_inclusion_prior(const ExperimentParams& e, const Hyperparameters& hyper) {
  return inclusion_log_prior(e.alpha_x, e.alpha_y, hyper);
}

// Interval from which the mean response at location t is proposed when the
// knot bound(cut + 1) moves to t: between the current curve at t and the
// neighbouring segment's line extended to t.
std::pair<double, double> shift_interval(const ChainState& st, std::size_t cut, double t) {
  const auto& cfg = st.config;
  const double a = cfg.bound(cut);
  const double c = cfg.bound(cut + 2);
  const double s = cfg.bound(cut + 1);
  const auto er = st.er_at_bounds();
  const double beta_l = st.experiments[cut].beta;
  const double beta_r = st.experiments[cut + 1].beta;
  const double here = t < s ? er[cut] + beta_l * (t - a) : er[cut + 1] + beta_r * (t - s);
  const double other = t < s ? er[cut + 2] - beta_r * (c - t) : er[cut] + beta_l * (t - a);
  return {std::min(here, other), std::max(here, other)};
}

bool within(double v, std::pair<double, double> iv) {
  const double tol = 1e-12 * std::max({1.0, std::abs(iv.first), std::abs(iv.second)});
  return v >= iv.first - tol && v <= iv.second + tol;
}

// Moves the knot and sets both adjacent slopes so that the curve passes
// through (s_new, e_new) with the mean response at the outer bounds fixed.
// Returns the log of the reverse-to-forward proposal density ratio times the
// Jacobian of the slope map, or nullopt when the draw has zero density.
std::optional<double> apply_knot_shift(const ChainState& current, const KnotShiftDraw& draw,
                                       ChainState& next) {
  const auto& cfg = current.config;
  if (draw.cut >= cfg.num_cuts()) return std::nullopt;
  const double a = cfg.bound(draw.cut);
  const double c = cfg.bound(draw.cut + 2);
  const double s = cfg.bound(draw.cut + 1);
  if (!(draw.s_new > a && draw.s_new < c)) return std::nullopt;
  const auto fwd = shift_interval(current, draw.cut, draw.s_new);
  if (!within(draw.e_new, fwd)) return std::nullopt;

  const auto er = current.er_at_bounds();
  auto cuts = cfg.cuts();
  cuts[draw.cut] = draw.s_new;
  next = ChainState{ExperimentConfiguration(cuts, cfg.s_min(), cfg.s_max(), cfg.min_gaps()),
                    current.experiments};
  next.experiments[draw.cut].beta = (draw.e_new - er[draw.cut]) / (draw.s_new - a);
  next.experiments[draw.cut + 1].beta = (er[draw.cut + 2] - draw.e_new) / (c - draw.s_new);
  next.refresh_intercepts();

  const auto rev = shift_interval(next, draw.cut, s);
  double out = std::log((s - a) * (c - s)) - std::log((draw.s_new - a) * (c - draw.s_new));
  if (fwd.second > fwd.first && rev.second > rev.first) {
    out += std::log(fwd.second - fwd.first) - std::log(rev.second - rev.first);
  }
  return out;
}

// Independent Bernoulli draws with per-covariate inclusion probabilities.
Bits draw_bits(const std::vector<double>& probs, Rng& rng) {
  Bits out(probs.size());
  for (std::size_t j = 0; j < probs.size(); ++j) out[j] = draw_bernoulli(rng, probs[j]) ? 1 : 0;
  return out;
}

double bits_log_prob(const Bits& bits, const std::vector<double>& probs) {
  double lq = 0.0;
  for (std::size_t j = 0; j < bits.size(); ++j) lq += log_bernoulli(bits[j] != 0, probs[j]);
  return lq;
}

std::vector<double> pair_probs(const Bits& a, const Bits& b, const double table[3]) {
  std::vector<double> out(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) out[j] = table[(a[j] != 0) + (b[j] != 0)];
  return out;
}

std::vector<double> single_probs(const Bits& a, const double table[2]) {
  std::vector<double> out(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) out[j] = table[a[j] != 0];
  return out;
}

void redraw_coefficients(ChainState& state, const SamplerContext& ctx, std::size_t k, Rng& rng) {
  const auto slice = context_slice(ctx, state.config, k);
  auto e = gibbs_update_exposure_params(state.experiments[k], slice, ctx.hyper, rng, false);
  e = gibbs_update_outcome_covariate_params(e, slice, ctx.hyper, rng, false);
  state.experiments[k] = std::move(e);
}

}  // namespace

SamplerContext make_context(const Dataset& data, const Hyperparameters& hyper,
                            const SamplerOptions& options, std::size_t num_cuts) {
  SamplerContext ctx{data, hyper, options, 0.0, 0.0, {}, 0.0, 0, {}};
  if (options.bounds) {
    ctx.s_min = options.bounds->first;
    ctx.s_max = options.bounds->second;
  } else {
    if (data.x.size() == 0) throw DataError("cannot derive exposure bounds from an empty dataset");
    ctx.s_min = data.x.minCoeff();
    ctx.s_max = data.x.maxCoeff();
  }
  if (!(ctx.s_min < ctx.s_max)) throw ConfigError("exposure bounds must satisfy s_min < s_max");
  ctx.min_gaps = options.min_gaps ? *options.min_gaps
                                  : ExperimentConfiguration::default_gaps(num_cuts, ctx.s_min,
                                                                          ctx.s_max);
  if (ctx.min_gaps.size() != num_cuts + 1) throw ConfigError("min_gaps must have K + 1 entries");
  ctx.sorted_x.assign(data.x.data(), data.x.data() + data.x.size());
  std::sort(ctx.sorted_x.begin(), ctx.sorted_x.end());
  if (!ctx.sorted_x.empty() && (ctx.sorted_x.front() < ctx.s_min || ctx.sorted_x.back() > ctx.s_max)) {
    throw RangeError("exposure values fall outside the configured bounds");
  }
  ctx.min_n = min_experiment_size(data.p());
  ctx.sigma_tune = hyper.sigma_tune;
  if (!(ctx.sigma_tune > 0.0)) {
    const double sd = std::sqrt(sample_variance(data.y));
    ctx.sigma_tune = 0.25 * sd / (ctx.s_max - ctx.s_min);
  }
  return ctx;
}

ExperimentSlice context_slice(const SamplerContext& ctx, const ExperimentConfiguration& config,
                              std::size_t k) {
  if (ctx.options.prior_only) {
    ExperimentSlice empty;
    empty.lower = config.bound(k);
    empty.covariates.resize(0, static_cast<Eigen::Index>(ctx.data.p()));
    return empty;
  }
  return make_slice(ctx.data, config, k);
}

bool experiments_large_enough(const SamplerContext& ctx, const ExperimentConfiguration& config) {
  if (ctx.options.prior_only) return true;
  for (std::size_t k = 0; k < config.num_experiments(); ++k) {
    const bool last = k + 1 == config.num_experiments();
    if (count_in(ctx.sorted_x, config.bound(k), config.bound(k + 1), last) < ctx.min_n) {
      return false;
    }
  }
  return true;
}

ChainState initial_state(const SamplerContext& ctx, std::size_t num_cuts, Rng& rng) {
  std::optional<ExperimentConfiguration> config;
  if (ctx.options.initial_cuts) {
    if (ctx.options.initial_cuts->size() != num_cuts) {
      throw ConfigError("initial cut points do not match K");
    }
    config.emplace(*ctx.options.initial_cuts, ctx.s_min, ctx.s_max, ctx.min_gaps);
  } else {
    for (int attempt = 0; attempt < 10000 && !config; ++attempt) {
      auto draw = sample_config_prior(num_cuts, ctx.s_min, ctx.s_max, ctx.min_gaps, rng);
      if (experiments_large_enough(ctx, draw)) config.emplace(std::move(draw));
    }
    if (!config) {
      throw InsufficientDataError("no prior configuration leaves enough observations per experiment");
    }
  }
  const std::size_t p = ctx.data.p();
  ChainState state{*config, {}};
  for (std::size_t k = 0; k <= num_cuts; ++k) {
    auto e = ExperimentParams::zeros(p);
    e.sigma2_x = sample_variance(ctx.data.x);
    e.sigma2_y = sample_variance(ctx.data.y);
    if (ctx.options.fixed_alpha) {
      e.alpha_x = ctx.options.fixed_alpha->first;
      e.alpha_y = ctx.options.fixed_alpha->second;
    }
    state.experiments.push_back(std::move(e));
  }
  state.refresh_intercepts();
  return state;
}

ExperimentParams gibbs_update_exposure_params(const ExperimentParams& params,
                                              const ExperimentSlice& slice,
                                              const Hyperparameters& hyper, Rng& rng,
                                              bool update_variance) {
  ExperimentParams out = params;
  const auto prob = build_regression(slice, params.alpha_x, ResponseModel::exposure());
  const Eigen::VectorXd theta = draw_coefficients(prob, params.sigma2_x, hyper, rng);
  out.delta_x0 = theta[0];
  scatter(params.alpha_x, theta, 1, out.delta_x);
  if (update_variance) {
    const double rss = (prob.response - prob.design * theta).squaredNorm();
    out.sigma2_x = draw_variance(slice.n(), rss, hyper, rng);
  }
  return out;
}

ExperimentParams gibbs_update_outcome_covariate_params(const ExperimentParams& params,
                                                       const ExperimentSlice& slice,
                                                       const Hyperparameters& hyper, Rng& rng,
                                                       bool update_variance) {
  ExperimentParams out = params;
  const auto prob = build_regression(slice, params.alpha_y,
                                     ResponseModel::outcome_residual(params.delta_y0, params.beta));
  const Eigen::VectorXd theta = draw_coefficients(prob, params.sigma2_y, hyper, rng);
  scatter(params.alpha_y, theta, 0, out.delta_y);
  if (update_variance) {
    const double rss = (prob.response - prob.design * theta).squaredNorm();
    out.sigma2_y = draw_variance(slice.n(), rss, hyper, rng);
  }
  return out;
}

double gibbs_update_alpha(ExperimentParams& params, const ExperimentSlice& slice,
                          const Hyperparameters& hyper, std::size_t j, Side side, Rng& rng) {
  const bool exposure = side == Side::Exposure;
  Bits& bits = exposure ? params.alpha_x : params.alpha_y;
  Eigen::VectorXd& coef = exposure ? params.delta_x : params.delta_y;
  const double sigma2 = exposure ? params.sigma2_x : params.sigma2_y;
  const auto jj = static_cast<Eigen::Index>(j);
  const double var0 = hyper.sigma0 * hyper.sigma0;

  Eigen::VectorXd resid;
  if (exposure) {
    resid = slice.x.array() - params.delta_x0;
  } else {
    resid = slice.y.array() - params.delta_y0 - params.beta * (slice.x.array() - slice.lower);
  }
  resid -= slice.covariates * coef;
  const auto cj = slice.covariates.col(jj);
  resid += cj * coef[jj];

  const double v = 1.0 / (cj.squaredNorm() / sigma2 + 1.0 / var0);
  const double m = v * (cj.dot(resid) / sigma2 + hyper.mu0 / var0);
  if (!(v > 0.0) || !std::isfinite(v) || !std::isfinite(m)) {
    throw NumericalError("degenerate conditional for an inclusion indicator");
  }
  const bool partner = (exposure ? params.alpha_y[j] : params.alpha_x[j]) != 0;
  const double lp1 = exposure ? inclusion_pair_log_prior(true, partner, hyper)
                              : inclusion_pair_log_prior(partner, true, hyper);
  const double lp0 = exposure ? inclusion_pair_log_prior(false, partner, hyper)
                              : inclusion_pair_log_prior(partner, false, hyper);
  const double log_w1 = log_normal_pdf(0.0, hyper.mu0, var0) + lp1 - log_normal_pdf(0.0, m, v);
  const double prob = 1.0 / (1.0 + std::exp(lp0 - log_w1));
  const bool include = draw_bernoulli(rng, prob);
  bits[j] = include ? 1 : 0;
  coef[jj] = include ? draw_normal(rng, m, std::sqrt(v)) : 0.0;
  return prob;
}

namespace {

// Draws one shared outcome parameter theta entering observation i's mean
// linearly with coefficient deriv(l, x_i) for experiment l.
template <class Deriv>
double draw_linear_outcome_param(const ChainState& state, const std::vector<ExperimentSlice>& slices,
                                 const Hyperparameters& hyper, double theta, Deriv deriv,
                                 Rng& rng) {
  const double var0 = hyper.sigma0 * hyper.sigma0;
  double precision = 1.0 / var0;
  double rhs = hyper.mu0 / var0;
  for (std::size_t l = 0; l < slices.size(); ++l) {
    const auto& sl = slices[l];
    const auto& e = state.experiments[l];
    for (Eigen::Index i = 0; i < sl.x.size(); ++i) {
      const double a = deriv(l, sl.x[i]);
      if (a == 0.0) continue;
      const double mean = e.delta_y0 + e.beta * (sl.x[i] - sl.lower) + sl.covariates.row(i).dot(e.delta_y);
      const double r = sl.y[i] - mean + a * theta;
      precision += a * a / e.sigma2_y;
      rhs += a * r / e.sigma2_y;
    }
  }
  const double v = 1.0 / precision;
  return draw_normal(rng, v * rhs, std::sqrt(v));
}

}  // namespace

void gibbs_update_delta10(ChainState& state, const std::vector<ExperimentSlice>& slices,
                          const Hyperparameters& hyper, Rng& rng) {
  state.experiments[0].delta_y0 = draw_linear_outcome_param(
      state, slices, hyper, state.experiments[0].delta_y0,
      [](std::size_t, double) { return 1.0; }, rng);
  state.refresh_intercepts();
}

void gibbs_update_beta(ChainState& state, const std::vector<ExperimentSlice>& slices,
                       const Hyperparameters& hyper, std::size_t k, Rng& rng) {
  const double lower = state.config.bound(k);
  const double width = state.config.width(k);
  state.experiments[k].beta = draw_linear_outcome_param(
      state, slices, hyper, state.experiments[k].beta,
      [&](std::size_t l, double x) { return l < k ? 0.0 : (l == k ? x - lower : width); }, rng);
  state.refresh_intercepts();
}

void gibbs_sweep(ChainState& state, const SamplerContext& ctx, Rng& rng, MoveStats* stats) {
  const std::size_t n_exp = state.config.num_experiments();
  std::vector<ExperimentSlice> slices;
  slices.reserve(n_exp);
  for (std::size_t k = 0; k < n_exp; ++k) slices.push_back(context_slice(ctx, state.config, k));
  const bool update_alpha = !ctx.options.fixed_alpha;

  for (std::size_t k = 0; k < n_exp; ++k) {
    auto& e = state.experiments[k];
    e = gibbs_update_exposure_params(e, slices[k], ctx.hyper, rng);
    if (update_alpha) {
      for (std::size_t j = 0; j < e.p(); ++j) {
        gibbs_update_alpha(e, slices[k], ctx.hyper, j, Side::Exposure, rng);
      }
      for (std::size_t j = 0; j < e.p(); ++j) {
        gibbs_update_alpha(e, slices[k], ctx.hyper, j, Side::Outcome, rng);
      }
      if (stats) stats->alpha_updates += 2 * e.p();
    }
    e = gibbs_update_outcome_covariate_params(e, slices[k], ctx.hyper, rng);
  }
  gibbs_update_delta10(state, slices, ctx.hyper, rng);
  for (std::size_t k = 0; k < n_exp; ++k) gibbs_update_beta(state, slices, ctx.hyper, k, rng);
  if (stats) ++stats->gibbs_sweeps;
}

std::optional<MoveProposal> evaluate_separate(const ChainState& state, const SamplerContext& ctx,
                                              const KnotShiftDraw& draw) {
  MoveProposal prop{state, 0.0};
  const auto geometry = apply_knot_shift(state, draw, prop.state);
  if (!geometry) return std::nullopt;
  const auto& next = prop.state;
  if (!next.config.satisfies_gaps() || !experiments_large_enough(ctx, next.config)) {
    return std::nullopt;
  }
  const std::size_t cut = draw.cut;
  prop.log_ratio = config_log_prior(next.config) - config_log_prior(state.config) + *geometry;
  for (std::size_t k = cut; k <= cut + 1; ++k) {
    prop.log_ratio += log_beta_prior(next.experiments[k].beta, ctx.hyper) -
                      log_beta_prior(state.experiments[k].beta, ctx.hyper);
  }
  if (!ctx.options.prior_only) {
    prop.log_ratio += experiments_loglik(ctx, next, cut, cut + 1) -
                      experiments_loglik(ctx, state, cut, cut + 1);
  }
  return prop;
}

std::optional<MoveProposal> evaluate_jump_within(const ChainState& state, const SamplerContext& ctx,
                                                 const KnotShiftDraw& draw) {
  MoveProposal prop{state, 0.0};
  const auto geometry = apply_knot_shift(state, draw, prop.state);
  if (!geometry) return std::nullopt;
  auto& next = prop.state;
  const std::size_t cut = draw.cut;

  double log_alpha_proposal = 0.0;
  if (!ctx.options.fixed_alpha) {
    const auto& old_l = state.experiments[cut];
    const auto& old_r = state.experiments[cut + 1];
    auto& new_l = next.experiments[cut];
    auto& new_r = next.experiments[cut + 1];
    new_l.alpha_x = draw.left_x;
    new_l.alpha_y = draw.left_y;
    new_r.alpha_x = draw.right_x;
    new_r.alpha_y = draw.right_y;
    const auto* tbl = ctx.hyper.within_include;
    const auto px = pair_probs(old_l.alpha_x, old_r.alpha_x, tbl);
    const auto py = pair_probs(old_l.alpha_y, old_r.alpha_y, tbl);
    const auto rx = pair_probs(new_l.alpha_x, new_r.alpha_x, tbl);
    const auto ry = pair_probs(new_l.alpha_y, new_r.alpha_y, tbl);
    const double fwd = bits_log_prob(new_l.alpha_x, px) + bits_log_prob(new_r.alpha_x, px) +
                       bits_log_prob(new_l.alpha_y, py) + bits_log_prob(new_r.alpha_y, py);
    const double rev = bits_log_prob(old_l.alpha_x, rx) + bits_log_prob(old_r.alpha_x, rx) +
                       bits_log_prob(old_l.alpha_y, ry) + bits_log_prob(old_r.alpha_y, ry);
    log_alpha_proposal = rev - fwd;
  }
  if (!next.config.satisfies_gaps() || !experiments_large_enough(ctx, next.config)) {
    return std::nullopt;
  }
  prop.log_ratio = config_log_prior(next.config) - config_log_prior(state.config) + *geometry +
                   log_alpha_proposal;
  for (std::size_t k = cut; k <= cut + 1; ++k) {
    prop.log_ratio += log_beta_prior(next.experiments[k].beta, ctx.hyper) -
                      log_beta_prior(state.experiments[k].beta, ctx.hyper) +
                      experiment_inclusion_prior(next.experiments[k], ctx.hyper) -
                      experiment_inclusion_prior(state.experiments[k], ctx.hyper);
    if (!ctx.options.prior_only) {
      prop.log_ratio += experiment_bic(ctx, next, k) - experiment_bic(ctx, state, k);
    }
  }
  return prop;
}

std::optional<MoveProposal> evaluate_jump_over(const ChainState& state, const SamplerContext& ctx,
                                               const JumpOverDraw& draw) {
  const auto& cfg = state.config;
  const std::size_t n_cuts = cfg.num_cuts();
  const std::size_t cut = draw.cut;
  if (cut >= n_cuts) return std::nullopt;
  const double span_lo = cfg.bound(cut);
  const double span_hi = cfg.bound(cut + 2);
  const double free_len = cfg.range() - (span_hi - span_lo);
  const double s_new = draw.s_new;
  if (!(free_len > 0.0) || !(s_new > cfg.s_min() && s_new < cfg.s_max()) ||
      (s_new >= span_lo && s_new <= span_hi)) {
    return std::nullopt;
  }
  const std::size_t j = locate_experiment(s_new, cfg);
  if (s_new == cfg.bound(j)) return std::nullopt;

  const auto er = state.er_at_bounds();
  const auto& src_l = state.experiments[cut];
  const auto& src_r = state.experiments[cut + 1];
  const auto& src_j = state.experiments[j];

  ExperimentParams merged = src_l;
  merged.beta = (er[cut + 2] - er[cut]) / (span_hi - span_lo);
  const double u_rev = src_l.beta - merged.beta;
  ExperimentParams first = src_j;
  ExperimentParams second = src_j;
  first.beta = src_j.beta + draw.u;
  const double e_new = er[j] + first.beta * (s_new - cfg.bound(j));
  second.beta = (er[j + 1] - e_new) / (cfg.bound(j + 1) - s_new);

  double log_alpha_proposal = 0.0;
  if (!ctx.options.fixed_alpha) {
    merged.alpha_x = draw.merged_x;
    merged.alpha_y = draw.merged_y;
    first.alpha_x = draw.first_x;
    first.alpha_y = draw.first_y;
    second.alpha_x = draw.second_x;
    second.alpha_y = draw.second_y;
    const auto* comb = ctx.hyper.combine_include;
    const auto* split = ctx.hyper.split_include;
    const auto cx = pair_probs(src_l.alpha_x, src_r.alpha_x, comb);
    const auto cy = pair_probs(src_l.alpha_y, src_r.alpha_y, comb);
    const auto sx = single_probs(src_j.alpha_x, split);
    const auto sy = single_probs(src_j.alpha_y, split);
    const double fwd = bits_log_prob(merged.alpha_x, cx) + bits_log_prob(merged.alpha_y, cy) +
                       bits_log_prob(first.alpha_x, sx) + bits_log_prob(first.alpha_y, sy) +
                       bits_log_prob(second.alpha_x, sx) + bits_log_prob(second.alpha_y, sy);
    // Reverse: merge the split halves back into j, split the merged one at the old knot.
    const auto rcx = pair_probs(first.alpha_x, second.alpha_x, comb);
    const auto rcy = pair_probs(first.alpha_y, second.alpha_y, comb);
    const auto rsx = single_probs(merged.alpha_x, split);
    const auto rsy = single_probs(merged.alpha_y, split);
    const double rev = bits_log_prob(src_j.alpha_x, rcx) + bits_log_prob(src_j.alpha_y, rcy) +
                       bits_log_prob(src_l.alpha_x, rsx) + bits_log_prob(src_l.alpha_y, rsy) +
                       bits_log_prob(src_r.alpha_x, rsx) + bits_log_prob(src_r.alpha_y, rsy);
    log_alpha_proposal = rev - fwd;
  }

  std::vector<double> cuts;
  std::vector<ExperimentParams> experiments;
  std::size_t merged_idx = 0;
  std::size_t first_idx = 0;
  for (std::size_t l = 0; l < cfg.num_experiments(); ++l) {
    if (l == cut + 1) continue;
    if (l == cut) {
      merged_idx = experiments.size();
      experiments.push_back(merged);
    } else if (l == j) {
      first_idx = experiments.size();
      experiments.push_back(first);
      experiments.push_back(second);
    } else {
      experiments.push_back(state.experiments[l]);
    }
  }
  for (std::size_t i = 1; i <= n_cuts; ++i) {
    if (i != cut + 1) cuts.push_back(cfg.bound(i));
  }
  cuts.push_back(s_new);
  std::sort(cuts.begin(), cuts.end());
  MoveProposal prop{ChainState{ExperimentConfiguration(cuts, cfg.s_min(), cfg.s_max(), cfg.min_gaps()),
                               std::move(experiments)},
                    0.0};
  auto& next = prop.state;
  next.refresh_intercepts();
  if (!next.config.satisfies_gaps() || !experiments_large_enough(ctx, next.config)) {
    return std::nullopt;
  }

  const double sig2 = ctx.sigma_tune * ctx.sigma_tune;
  const double width_j = cfg.width(j);
  prop.log_ratio =
      config_log_prior(next.config) - config_log_prior(cfg) +
      log_beta_prior(merged.beta, ctx.hyper) + log_beta_prior(first.beta, ctx.hyper) +
      log_beta_prior(second.beta, ctx.hyper) - log_beta_prior(src_l.beta, ctx.hyper) -
      log_beta_prior(src_r.beta, ctx.hyper) - log_beta_prior(src_j.beta, ctx.hyper) +
      std::log(free_len) - std::log(cfg.range() - width_j) +
      (draw.u * draw.u - u_rev * u_rev) / (2.0 * sig2) +
      std::log((span_hi - cfg.bound(cut + 1)) * width_j) -
      std::log((span_hi - span_lo) * (cfg.bound(j + 1) - s_new)) + log_alpha_proposal;
  const std::size_t new_ids[3] = {merged_idx, first_idx, first_idx + 1};
  const std::size_t old_ids[3] = {cut, cut + 1, j};
  for (int i = 0; i < 3; ++i) {
    prop.log_ratio += experiment_inclusion_prior(next.experiments[new_ids[i]], ctx.hyper) -
                      experiment_inclusion_prior(state.experiments[old_ids[i]], ctx.hyper);
    if (!ctx.options.prior_only) {
      prop.log_ratio +=
          experiment_bic(ctx, next, new_ids[i]) - experiment_bic(ctx, state, old_ids[i]);
    }
  }
  return prop;
}

namespace {

KnotShiftDraw draw_knot_shift(const ChainState& state, Rng& rng) {
  KnotShiftDraw draw;
  const auto& cfg = state.config;
  draw.cut = std::uniform_int_distribution<std::size_t>(0, cfg.num_cuts() - 1)(rng);
  draw.s_new = draw_uniform(rng, cfg.bound(draw.cut), cfg.bound(draw.cut + 2));
  const auto iv = shift_interval(state, draw.cut, draw.s_new);
  draw.e_new = iv.second > iv.first ? draw_uniform(rng, iv.first, iv.second) : iv.first;
  return draw;
}

// Coefficients of experiments whose indicators were replaced are redrawn from
// their conditionals with the inherited variances.
void finish_jump(ChainState& next, const SamplerContext& ctx, const ChainState& before, Rng& rng) {
  for (std::size_t k = 0; k < next.config.num_experiments(); ++k) {
    const bool same = k < before.config.num_experiments() &&
                      next.config.bound(k) == before.config.bound(k) &&
                      next.config.bound(k + 1) == before.config.bound(k + 1) &&
                      next.experiments[k].alpha_x == before.experiments[k].alpha_x &&
                      next.experiments[k].alpha_y == before.experiments[k].alpha_y;
    if (!same) redraw_coefficients(next, ctx, k, rng);
  }
}

}  // namespace

bool move_separate(ChainState& state, const SamplerContext& ctx, Rng& rng) {
  if (state.config.num_cuts() == 0) return false;
  const auto draw = draw_knot_shift(state, rng);
  auto prop = evaluate_separate(state, ctx, draw);
  if (!prop || !accept(prop->log_ratio, rng)) return false;
  state = std::move(prop->state);
  return true;
}

bool move_jump_within(ChainState& state, const SamplerContext& ctx, Rng& rng) {
  if (state.config.num_cuts() == 0) return false;
  auto draw = draw_knot_shift(state, rng);
  if (!ctx.options.fixed_alpha) {
    const auto& l = state.experiments[draw.cut];
    const auto& r = state.experiments[draw.cut + 1];
    const auto px = pair_probs(l.alpha_x, r.alpha_x, ctx.hyper.within_include);
    const auto py = pair_probs(l.alpha_y, r.alpha_y, ctx.hyper.within_include);
    draw.left_x = draw_bits(px, rng);
    draw.right_x = draw_bits(px, rng);
    draw.left_y = draw_bits(py, rng);
    draw.right_y = draw_bits(py, rng);
  }
  auto prop = evaluate_jump_within(state, ctx, draw);
  if (!prop || !accept(prop->log_ratio, rng)) return false;
  finish_jump(prop->state, ctx, state, rng);
  state = std::move(prop->state);
  return true;
}

bool move_jump_over(ChainState& state, const SamplerContext& ctx, Rng& rng) {
  const auto& cfg = state.config;
  if (cfg.num_cuts() == 0) return false;
  JumpOverDraw draw;
  draw.cut = std::uniform_int_distribution<std::size_t>(0, cfg.num_cuts() - 1)(rng);
  const double span_lo = cfg.bound(draw.cut);
  const double span_hi = cfg.bound(draw.cut + 2);
  const double free_len = cfg.range() - (span_hi - span_lo);
  if (!(free_len > 0.0)) return false;
  const double v = draw_uniform(rng, 0.0, free_len);
  draw.s_new = cfg.s_min() + v < span_lo ? cfg.s_min() + v : span_hi + (v - (span_lo - cfg.s_min()));
  draw.u = draw_normal(rng, 0.0, ctx.sigma_tune);
  if (!ctx.options.fixed_alpha) {
    if (!(draw.s_new > cfg.s_min() && draw.s_new < cfg.s_max())) return false;
    const auto& src_l = state.experiments[draw.cut];
    const auto& src_r = state.experiments[draw.cut + 1];
    const auto& src_j = state.experiments[locate_experiment(draw.s_new, cfg)];
    const auto* comb = ctx.hyper.combine_include;
    const auto* split = ctx.hyper.split_include;
    draw.merged_x = draw_bits(pair_probs(src_l.alpha_x, src_r.alpha_x, comb), rng);
    draw.merged_y = draw_bits(pair_probs(src_l.alpha_y, src_r.alpha_y, comb), rng);
    draw.first_x = draw_bits(single_probs(src_j.alpha_x, split), rng);
    draw.first_y = draw_bits(single_probs(src_j.alpha_y, split), rng);
    draw.second_x = draw_bits(single_probs(src_j.alpha_x, split), rng);
    draw.second_y = draw_bits(single_probs(src_j.alpha_y, split), rng);
  }
  auto prop = evaluate_jump_over(state, ctx, draw);
  if (!prop || !accept(prop->log_ratio, rng)) return false;
  finish_jump(prop->state, ctx, state, rng);
  state = std::move(prop->state);
  return true;
}


ChainOutput run_chain(const Dataset& data, std::size_t num_cuts, const Hyperparameters& hyper,
                      const Schedule& schedule, std::uint64_t seed, const SamplerOptions& options) {
  schedule.validate();
  hyper.validate();
  data.validate();
  if (!data.centered) throw ConfigError("covariates must be centered before sampling");
  if (options.fixed_alpha &&
      (options.fixed_alpha->first.size() != data.p() || options.fixed_alpha->second.size() != data.p())) {
    throw ConfigError("fixed inclusion indicators must have one entry per covariate");
  }
  const SamplerContext ctx = make_context(data, hyper, options, num_cuts);
  if (!options.prior_only && data.n() <= ctx.min_n * (num_cuts + 1)) {
    std::ostringstream msg;
    msg << "n = " << data.n() << " is too small for " << num_cuts + 1
        << " experiments of at least " << ctx.min_n << " observations";
    throw InsufficientDataError(msg.str());
  }

  Rng rng(seed);
  ChainOutput out;
  out.num_cuts = num_cuts;
  out.seed = seed;
  out.loglik.reserve(schedule.iterations);
  out.draws.reserve(schedule.retained());
  if (options.record_pointwise && !options.prior_only) {
    out.pointwise.resize(static_cast<Eigen::Index>(schedule.retained()),
                         static_cast<Eigen::Index>(data.n()));
  }

  ChainState state = initial_state(ctx, num_cuts, rng);
  const auto& mp = hyper.move_probs;
  for (std::size_t t = 0; t < schedule.iterations; ++t) {
    try {
      if (num_cuts > 0) {
        const double u = draw_uniform(rng, 0.0, mp.separate + mp.jump_over + mp.jump_within);
        if (u < mp.separate) {
          ++out.stats.separate.proposed;
          out.stats.separate.accepted += move_separate(state, ctx, rng);
        } else if (u < mp.separate + mp.jump_over) {
          ++out.stats.jump_over.proposed;
          out.stats.jump_over.accepted += move_jump_over(state, ctx, rng);
        } else {
          ++out.stats.jump_within.proposed;
          out.stats.jump_within.accepted += move_jump_within(state, ctx, rng);
        }
      }
      gibbs_sweep(state, ctx, rng, &out.stats);
    } catch (const NumericalError& err) {
      std::ostringstream msg;
      msg << "iteration " << t << ": " << err.what();
      throw NumericalError(msg.str());
    }
    out.loglik.push_back(options.prior_only ? 0.0 : conditional_loglik(state, data));
    if (t >= schedule.burn_in && (t - schedule.burn_in + 1) % schedule.thin == 0) {
      if (out.pointwise.size() > 0) {
        out.pointwise.row(static_cast<Eigen::Index>(out.draws.size())) =
            pointwise_log_density(state, data).transpose();
      }
      out.draws.push_back(state);
    }
  }
  return out;
}

MultiChainOutput run_chains(const Dataset& data, std::size_t num_cuts, const Hyperparameters& hyper,
                            const Schedule& schedule, std::size_t n_chains, std::uint64_t base_seed,
                            const SamplerOptions& options, std::size_t threads) {
  if (n_chains == 0) throw ConfigError("n_chains must be at least 1");
  std::vector<std::optional<ChainOutput>> results(n_chains);
  std::vector<std::string> errors(n_chains);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n_chains; i = next++) {
      try {
        results[i] = run_chain(data, num_cuts, hyper, schedule, base_seed + i, options);
      } catch (const std::exception& err) {
        errors[i] = err.what();
      }
    }
  };
  const std::size_t n_workers = std::clamp<std::size_t>(threads, 1, n_chains);
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  MultiChainOutput out;
  for (std::size_t i = 0; i < n_chains; ++i) {
    if (results[i]) {
      out.chains.push_back(std::move(*results[i]));
    } else {
      out.failures.emplace_back(i, errors[i]);
    }
  }
  return out;
}

}  // namespace lerca
