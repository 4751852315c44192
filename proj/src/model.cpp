#include "lerca/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lerca/errors.hpp"

namespace lerca {

void Dataset::validate() const {
  const auto n_obs = y.size();
  if (n_obs == 0) throw DataError("dataset is empty");
  if (x.size() != n_obs || covariates.rows() != n_obs) {
    std::ostringstream msg;
    msg << "length mismatch: y has " << n_obs << " rows, x has " << x.size()
        << ", covariates have " << covariates.rows();
    throw DataError(msg.str());
  }
  if (!names.empty() && names.size() != p()) {
    throw DataError("covariate name count does not match column count");
  }
  for (Eigen::Index i = 0; i < n_obs; ++i) {
    if (!std::isfinite(y[i]) || !std::isfinite(x[i])) {
      std::ostringstream msg;
      msg << "non-finite " << (std::isfinite(y[i]) ? "x" : "y") << " at row "
          << i + 1;
      throw DataError(msg.str());
    }
    for (Eigen::Index j = 0; j < covariates.cols(); ++j) {
      if (!std::isfinite(covariates(i, j))) {
        std::ostringstream msg;
        msg << "non-finite covariate at row " << i + 1 << ", column " << j + 1;
        throw DataError(msg.str());
      }
    }
  }
}

ExperimentConfiguration::ExperimentConfiguration(std::vector<double> cuts,
                                                 double s_min, double s_max,
                                                 std::vector<double> min_gaps)
    : cuts_(std::move(cuts)),
      s_min_(s_min),
      s_max_(s_max),
      min_gaps_(std::move(min_gaps)) {
  if (!(s_min_ < s_max_)) throw ConfigError("exposure bounds must satisfy s_min < s_max");
  if (min_gaps_.size() != cuts_.size() + 1) {
    throw ConfigError("min_gaps must have K + 1 entries");
  }
  double prev = s_min_;
  for (double c : cuts_) {
    if (!(c > prev)) {
      throw ConfigError("cut points must be strictly increasing inside the bounds");
    }
    prev = c;
  }
  if (!(s_max_ > prev)) {
    throw ConfigError("cut points must be strictly increasing inside the bounds");
  }
}

std::vector<double> ExperimentConfiguration::default_gaps(std::size_t num_cuts,
                                                          double s_min,
                                                          double s_max) {
  const double gap = (s_max - s_min) / (4.0 * static_cast<double>(num_cuts + 1));
  return std::vector<double>(num_cuts + 1, gap);
}

ExperimentConfiguration ExperimentConfiguration::with_default_gaps(
    std::vector<double> cuts, double s_min, double s_max) {
  auto gaps = default_gaps(cuts.size(), s_min, s_max);
  return ExperimentConfiguration(std::move(cuts), s_min, s_max, std::move(gaps));
}

double ExperimentConfiguration::bound(std::size_t i) const {
  if (i == 0) return s_min_;
  if (i == cuts_.size() + 1) return s_max_;
  return cuts_[i - 1];
}

bool ExperimentConfiguration::satisfies_gaps() const {
  for (std::size_t k = 0; k <= cuts_.size(); ++k) {
    if (!(bound(k + 1) - bound(k) > min_gaps_[k])) return false;
  }
  return true;
}

ExperimentParams ExperimentParams::zeros(std::size_t p) {
  ExperimentParams e;
  e.alpha_x.assign(p, 0);
  e.alpha_y.assign(p, 0);
  e.delta_x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  e.delta_y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  return e;
}

bool ExperimentParams::consistent() const {
  if (!(sigma2_x > 0.0) || !(sigma2_y > 0.0)) return false;
  for (std::size_t j = 0; j < p(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    if (!alpha_x[j] && delta_x[jj] != 0.0) return false;
    if (!alpha_y[j] && delta_y[jj] != 0.0) return false;
  }
  return true;
}

void ChainState::refresh_intercepts() {
  for (std::size_t k = 1; k < experiments.size(); ++k) {
    experiments[k].delta_y0 =
        experiments[k - 1].delta_y0 + experiments[k - 1].beta * config.width(k - 1);
  }
}

double ChainState::recursion_residual() const {
  double worst = 0.0;
  for (std::size_t k = 1; k < experiments.size(); ++k) {
    const double expected =
        experiments[k - 1].delta_y0 + experiments[k - 1].beta * config.width(k - 1);
    worst = std::max(worst, std::abs(experiments[k].delta_y0 - expected));
  }
  return worst;
}

std::vector<double> ChainState::er_at_bounds() const {
  std::vector<double> e(experiments.size() + 1);
  for (std::size_t k = 0; k < experiments.size(); ++k) e[k] = experiments[k].delta_y0;
  const auto& last = experiments.back();
  e.back() = last.delta_y0 + last.beta * config.width(experiments.size() - 1);
  return e;
}

void Hyperparameters::validate() const {
  const auto& m = move_probs;
  if (m.separate < 0 || m.jump_over < 0 || m.jump_within < 0 ||
      std::abs(m.separate + m.jump_over + m.jump_within - 1.0) > 1e-9) {
    throw ConfigError("move probabilities must be nonnegative and sum to 1");
  }
  if (!(omega >= 1.0)) throw ConfigError("omega must be >= 1");
  if (!(sigma0 > 0.0) || !(a0 > 0.0) || !(b0 > 0.0)) {
    throw ConfigError("sigma0, a0 and b0 must be positive");
  }
  if (!(alpha_x_marginal > 0.0 && alpha_x_marginal < 1.0)) {
    throw ConfigError("alpha_x_marginal must lie in (0, 1)");
  }
  auto is_prob = [](double v) { return v > 0.0 && v < 1.0; };
  for (double v : within_include) {
    if (!is_prob(v)) throw ConfigError("jump-within inclusion probabilities must lie in (0, 1)");
  }
  for (double v : combine_include) {
    if (!is_prob(v)) throw ConfigError("combine inclusion probabilities must lie in (0, 1)");
  }
  for (double v : split_include) {
    if (!is_prob(v)) throw ConfigError("split inclusion probabilities must lie in (0, 1)");
  }
}

std::size_t locate_experiment(double x, const ExperimentConfiguration& config) {
  if (!(x >= config.s_min() && x <= config.s_max())) {
    std::ostringstream msg;
    msg << "exposure " << x << " outside [" << config.s_min() << ", "
        << config.s_max() << "]";
    throw RangeError(msg.str());
  }
  const auto& cuts = config.cuts();
  // Number of cuts <= x gives the experiment of [s_{k-1}, s_k).
  return static_cast<std::size_t>(std::upper_bound(cuts.begin(), cuts.end(), x) -
                                  cuts.begin());
}

std::vector<double> intercept_recursion(double delta_y0_first,
                                        std::span<const double> betas,
                                        const ExperimentConfiguration& config) {
  const std::size_t n_exp = config.num_experiments();
  if (betas.size() + 1 < n_exp) {
    throw ConfigError("intercept recursion needs at least K slopes");
  }
  std::vector<double> out(n_exp);
  out[0] = delta_y0_first;
  for (std::size_t k = 1; k < n_exp; ++k) {
    out[k] = out[k - 1] + betas[k - 1] * config.width(k - 1);
  }
  return out;
}

double eval_er(double x, const ChainState& state) {
  const std::size_t k = locate_experiment(x, state.config);
  const auto& e = state.experiments[k];
  return e.delta_y0 + e.beta * (x - state.config.bound(k));
}

double eval_er_unit_average(double x, const ChainState& state, const Dataset& data) {
  const std::size_t k = locate_experiment(x, state.config);
  const auto& e = state.experiments[k];
  const double base = e.delta_y0 + e.beta * (x - state.config.bound(k));
  if (data.n() == 0) return base;
  const Eigen::VectorXd unit = data.covariates * e.delta_y;
  return base + unit.mean();
}

double instantaneous_effect(double x, const ChainState& state) {
  return state.experiments[locate_experiment(x, state.config)].beta;
}

double shift_effect(double x, double delta, const ChainState& state) {
  return eval_er(x + delta, state) - eval_er(x, state);
}

Dataset center_covariates(const Dataset& data) {
  data.validate();
  Dataset out = data;
  const Eigen::VectorXd means = data.covariates.colwise().mean().transpose();
  out.covariates.rowwise() -= means.transpose();
  if (data.column_means.size() == means.size()) {
    out.column_means = data.column_means + means;
  } else {
    out.column_means = means;
  }
  out.centered = true;
  return out;
}

}  // namespace lerca
