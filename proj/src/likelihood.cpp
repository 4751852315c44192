#include "lerca/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "lerca/errors.hpp"
#include "lerca/stats.hpp"

namespace lerca {

ExperimentSlice make_slice(const Dataset& data, double lower, double upper,
                           bool closed_right) {
  ExperimentSlice slice;
  slice.lower = lower;
  for (Eigen::Index i = 0; i < data.x.size(); ++i) {
    const double xi = data.x[i];
    if (xi >= lower && (xi < upper || (closed_right && xi == upper))) {
      slice.indices.push_back(i);
    }
  }
  const auto n = static_cast<Eigen::Index>(slice.indices.size());
  slice.y.resize(n);
  slice.x.resize(n);
  slice.covariates.resize(n, data.covariates.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::Index i = slice.indices[static_cast<std::size_t>(r)];
    slice.y[r] = data.y[i];
    slice.x[r] = data.x[i];
    slice.covariates.row(r) = data.covariates.row(i);
  }
  return slice;
}

ExperimentSlice make_slice(const Dataset& data, const ExperimentConfiguration& config,
                           std::size_t experiment) {
  return make_slice(data, config.bound(experiment), config.bound(experiment + 1),
                    experiment + 1 == config.num_experiments());
}

std::vector<ExperimentSlice> slice_by_experiment(const Dataset& data,
                                                 const ExperimentConfiguration& config) {
  std::vector<ExperimentSlice> out;
  out.reserve(config.num_experiments());
  for (std::size_t k = 0; k < config.num_experiments(); ++k) {
    out.push_back(make_slice(data, config, k));
  }
  return out;
}

namespace {

double obs_log_density(double xi, double yi, const Eigen::Ref<const Eigen::RowVectorXd>& c,
                       const ExperimentParams& e, double lower) {
  const double mean_x = e.delta_x0 + c.dot(e.delta_x);
  const double mean_y = e.delta_y0 + e.beta * (xi - lower) + c.dot(e.delta_y);
  return log_normal_pdf(xi, mean_x, e.sigma2_x) + log_normal_pdf(yi, mean_y, e.sigma2_y);
}

}  // namespace

Eigen::VectorXd pointwise_log_density(const ChainState& state, const Dataset& data) {
  Eigen::VectorXd out(data.x.size());
  for (Eigen::Index i = 0; i < data.x.size(); ++i) {
    const std::size_t k = locate_experiment(data.x[i], state.config);
    out[i] = obs_log_density(data.x[i], data.y[i], data.covariates.row(i),
                             state.experiments[k], state.config.bound(k));
  }
  return out;
}

double experiment_loglik(const ExperimentSlice& slice, const ExperimentParams& params) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < slice.x.size(); ++r) {
    total += obs_log_density(slice.x[r], slice.y[r], slice.covariates.row(r), params,
                             slice.lower);
  }
  return total;
}

double conditional_loglik(const ChainState& state, const Dataset& data) {
  if (data.x.size() == 0) return 0.0;
  return pointwise_log_density(state, data).sum();
}

RegressionProblem build_regression(const ExperimentSlice& slice, const Bits& included,
                                   const ResponseModel& model) {
  using Kind = ResponseModel::Kind;
  const auto n = static_cast<Eigen::Index>(slice.n());
  std::vector<Eigen::Index> cols;
  for (std::size_t j = 0; j < included.size(); ++j) {
    if (included[j]) cols.push_back(static_cast<Eigen::Index>(j));
  }
  const Eigen::Index lead = model.kind == Kind::Exposure          ? 1
                            : model.kind == Kind::Outcome         ? 2
                                                                  : 0;
  RegressionProblem prob;
  prob.design.resize(n, lead + static_cast<Eigen::Index>(cols.size()));
  if (lead >= 1) {
    prob.design.col(0).setOnes();
    prob.column_labels.push_back("intercept");
  }
  if (lead == 2) {
    prob.design.col(1) = slice.x.array() - slice.lower;
    prob.column_labels.push_back("exposure");
  }
  for (std::size_t c = 0; c < cols.size(); ++c) {
    prob.design.col(lead + static_cast<Eigen::Index>(c)) = slice.covariates.col(cols[c]);
    prob.column_labels.push_back("C" + std::to_string(cols[c] + 1));
  }
  switch (model.kind) {
    case Kind::Exposure:
      prob.response = slice.x;
      break;
    case Kind::Outcome:
      prob.response = slice.y;
      break;
    case Kind::OutcomeResidual:
      prob.response = slice.y.array() - model.delta_y0 -
                      model.beta * (slice.x.array() - slice.lower);
      break;
  }
  return prob;
}

namespace {

void check_full_rank(const RegressionProblem& problem) {
  if (problem.design.cols() == 0) return;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(problem.design);
  qr.setThreshold(1e-10);
  if (qr.rank() < problem.design.cols()) {
    std::ostringstream msg;
    msg << "singular cross-product among columns:";
    for (const auto& label : problem.column_labels) msg << ' ' << label;
    throw NumericalError(msg.str());
  }
}

}  // namespace

double log_marginal_exact(const RegressionProblem& problem, const Hyperparameters& hyper) {
  check_full_rank(problem);
  const auto& w = problem.design;
  const auto& r = problem.response;
  const double n = static_cast<double>(r.size());
  const Eigen::Index q = w.cols();
  const double var0 = hyper.sigma0 * hyper.sigma0;
  const Eigen::MatrixXd wtw = w.transpose() * w;
  const Eigen::VectorXd wtr = w.transpose() * r;
  const double rtr = r.squaredNorm();
  const Eigen::VectorXd mu = Eigen::VectorXd::Constant(q, hyper.mu0);

  // log p(r | sigma^2) + log IG(sigma^2) + log |d sigma^2 / d t|, t = log sigma^2.
  auto log_integrand = [&](double t) {
    const double s2 = std::exp(t);
    if (!(s2 > 0.0) || !std::isfinite(s2)) return kLogZero;
    double ll = -0.5 * n * std::log(2.0 * std::numbers::pi * s2);
    if (q > 0) {
      const Eigen::MatrixXd a =
          wtw / s2 + Eigen::MatrixXd::Identity(q, q) / var0;
      const Eigen::VectorXd b = wtr / s2 + mu / var0;
      Eigen::LLT<Eigen::MatrixXd> llt(a);
      if (llt.info() != Eigen::Success) return kLogZero;
      const Eigen::MatrixXd l = llt.matrixL();
      const double logdet = 2.0 * l.diagonal().array().log().sum();
      ll += -0.5 * static_cast<double>(q) * std::log(var0) - 0.5 * logdet -
            0.5 * (rtr / s2 + mu.squaredNorm() / var0 - b.dot(llt.solve(b)));
    } else {
      ll += -0.5 * rtr / s2;
    }
    return ll + log_inv_gamma_pdf(s2, hyper.a0, hyper.b0) + t;
  };

  // Locate the mode on a coarse grid, then refine with golden section.
  double best_t = 0.0;
  double best = kLogZero;
  for (double t = -60.0; t <= 60.0; t += 0.25) {
    const double v = log_integrand(t);
    if (v > best) {
      best = v;
      best_t = t;
    }
  }
  if (!std::isfinite(best)) throw NumericalError("marginal likelihood integrand is degenerate");
  {
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double lo = best_t - 0.25;
    double hi = best_t + 0.25;
    for (int it = 0; it < 80; ++it) {
      const double m1 = hi - phi * (hi - lo);
      const double m2 = lo + phi * (hi - lo);
      if (log_integrand(m1) > log_integrand(m2)) hi = m2; else lo = m1;
    }
    best_t = 0.5 * (lo + hi);
    best = log_integrand(best_t);
  }
  auto f = [&](double u) {
    const double v = log_integrand(best_t + u);
    return std::isfinite(v) ? std::exp(v - best) : 0.0;
  };
  using boost::math::quadrature::gauss_kronrod;
  const double inf = std::numeric_limits<double>::infinity();
  double err = 0.0;
  const double left = gauss_kronrod<double, 61>::integrate(f, -inf, 0.0, 20, 1e-12, &err);
  const double right = gauss_kronrod<double, 61>::integrate(f, 0.0, inf, 20, 1e-12, &err);
  return best + std::log(left + right);
}

double marginal_loglik_exact(const ExperimentSlice& slice, const Bits& included,
                             const ResponseModel& model, const Hyperparameters& hyper) {
  if (slice.n() == 0) throw InsufficientDataError("marginal likelihood of an empty slice");
  return log_marginal_exact(build_regression(slice, included, model), hyper);
}

double log_marginal_bic(const RegressionProblem& problem) {
  const auto n = problem.response.size();
  const Eigen::Index q = problem.design.cols();
  if (n <= q + 1) {
    std::ostringstream msg;
    msg << "BIC needs more than " << q + 1 << " observations, slice has " << n;
    throw InsufficientDataError(msg.str());
  }
  double rss = problem.response.squaredNorm();
  if (q > 0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(problem.design);
    const Eigen::VectorXd coef = qr.solve(problem.response);
    rss = (problem.response - problem.design * coef).squaredNorm();
  }
  rss = std::max(rss, kRssFloor);
  const double nd = static_cast<double>(n);
  const double bic = nd * std::log(rss / nd) + static_cast<double>(q) * std::log(nd);
  return -0.5 * bic;
}

double marginal_loglik_bic(const ExperimentSlice& slice, const Bits& included,
                           const ResponseModel& model) {
  return log_marginal_bic(build_regression(slice, included, model));
}

std::size_t min_experiment_size(std::size_t p) { return std::max<std::size_t>(10, p + 4); }

}  // namespace lerca
