#include "lerca/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <boost/math/distributions/students_t.hpp>

#include "lerca/errors.hpp"
#include "lerca/stats.hpp"

namespace lerca {

double waic_from_pointwise(const Eigen::MatrixXd& log_density) {
  const auto draws = log_density.rows();
  if (draws < 2) throw InsufficientDataError("WAIC needs at least 2 retained draws");
  const double t = static_cast<double>(draws);
  double lppd = 0.0;
  double p_waic = 0.0;
  std::vector<double> column(static_cast<std::size_t>(draws));
  for (Eigen::Index i = 0; i < log_density.cols(); ++i) {
    for (Eigen::Index d = 0; d < draws; ++d) column[static_cast<std::size_t>(d)] = log_density(d, i);
    lppd += log_sum_exp(column) - std::log(t);
    const double mean = log_density.col(i).mean();
    p_waic += (log_density.col(i).array() - mean).square().sum() / (t - 1.0);
  }
  return -2.0 * (lppd - p_waic);
}

double waic(const std::vector<ChainOutput>& chains) {
  Eigen::Index rows = 0;
  Eigen::Index cols = -1;
  for (const auto& c : chains) {
    if (c.pointwise.size() == 0 && !c.draws.empty()) {
      throw InsufficientDataError("per-observation densities were not recorded");
    }
    rows += c.pointwise.rows();
    if (c.pointwise.rows() > 0) {
      if (cols >= 0 && cols != c.pointwise.cols()) throw DataError("chains disagree on n");
      cols = c.pointwise.cols();
    }
  }
  if (rows < 2 || cols < 0) throw InsufficientDataError("WAIC needs at least 2 retained draws");
  Eigen::MatrixXd all(rows, cols);
  Eigen::Index at = 0;
  for (const auto& c : chains) {
    all.middleRows(at, c.pointwise.rows()) = c.pointwise;
    at += c.pointwise.rows();
  }
  return waic_from_pointwise(all);
}

double potential_scale_reduction(const std::vector<std::vector<double>>& traces) {
  if (traces.size() < 2) throw InsufficientDataError("PSR needs at least 2 chains");
  const std::size_t n = traces.front().size();
  if (n < 2) throw InsufficientDataError("PSR needs at least 2 draws per chain");
  for (const auto& t : traces) {
    if (t.size() != n) throw DataError("PSR needs chains of equal length");
  }
  const double m = static_cast<double>(traces.size());
  const double nd = static_cast<double>(n);
  std::vector<double> means;
  double within = 0.0;
  for (const auto& t : traces) {
    double mean = 0.0;
    for (double v : t) mean += v;
    mean /= nd;
    double ss = 0.0;
    for (double v : t) ss += (v - mean) * (v - mean);
    within += ss / nd;
    means.push_back(mean);
  }
  within /= m;
  double grand = 0.0;
  for (double v : means) grand += v;
  grand /= m;
  double between_over_n = 0.0;
  for (double v : means) between_over_n += (v - grand) * (v - grand);
  between_over_n /= (m - 1.0);
  if (!(within > 0.0)) {
    return between_over_n > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  }
  return std::sqrt((within + between_over_n) / within);
}

std::vector<double> psr(const std::vector<ChainOutput>& chains, const std::vector<double>& grid,
                        PsrTarget target) {
  if (chains.size() < 2) throw InsufficientDataError("PSR needs at least 2 chains");
  std::vector<double> out;
  out.reserve(grid.size());
  std::vector<std::vector<double>> traces(chains.size());
  for (double x : grid) {
    for (std::size_t c = 0; c < chains.size(); ++c) {
      traces[c].clear();
      for (const auto& st : chains[c].draws) {
        traces[c].push_back(target == PsrTarget::MeanResponse ? eval_er(x, st)
                                                              : instantaneous_effect(x, st));
      }
    }
    out.push_back(potential_scale_reduction(traces));
  }
  return out;
}

bool psr_converged(const std::vector<double>& values, double threshold) {
  return std::all_of(values.begin(), values.end(),
                     [&](double v) { return std::abs(v - 1.0) < threshold; });
}

std::vector<double> default_grid(double lo, double hi, std::size_t n) {
  if (n == 0) return {};
  if (n == 1) return {0.5 * (lo + hi)};
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  g.back() = hi;
  return g;
}

PosteriorSummary summarize_draws(const std::vector<std::vector<ChainState>>& chains,
                                 const std::vector<double>& grid, double credible_level) {
  if (!(credible_level > 0.0 && credible_level < 1.0)) {
    throw ConfigError("credible level must lie in (0, 1)");
  }
  std::vector<const ChainState*> pooled;
  for (const auto& c : chains) {
    for (const auto& st : c) pooled.push_back(&st);
  }
  if (pooled.empty()) throw InsufficientDataError("no retained draws to summarize");
  const std::size_t p = pooled.front()->experiments.front().p();
  const double lo_q = 0.5 * (1.0 - credible_level);
  const double hi_q = 1.0 - lo_q;
  const double nd = static_cast<double>(pooled.size());

  PosteriorSummary s;
  s.grid = grid;
  s.inclusion_x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(grid.size()));
  s.inclusion_y = s.inclusion_x;
  std::vector<double> er(pooled.size());
  std::vector<double> slope(pooled.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double x = grid[g];
    for (std::size_t d = 0; d < pooled.size(); ++d) {
      const auto& st = *pooled[d];
      const std::size_t k = locate_experiment(x, st.config);
      er[d] = eval_er(x, st);
      slope[d] = st.experiments[k].beta;
      for (std::size_t j = 0; j < p; ++j) {
        s.inclusion_x(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(g)) += st.experiments[k].alpha_x[j];
        s.inclusion_y(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(g)) += st.experiments[k].alpha_y[j];
      }
    }
    auto fill = [&](std::vector<double>& v, std::vector<double>& mean, std::vector<double>& lower,
                    std::vector<double>& upper) {
      double sum = 0.0;
      for (double a : v) sum += a;
      mean.push_back(sum / nd);
      std::sort(v.begin(), v.end());
      lower.push_back(quantile_sorted(v, lo_q));
      upper.push_back(quantile_sorted(v, hi_q));
    };
    fill(er, s.er_mean, s.er_lower, s.er_upper);
    fill(slope, s.delta_mean, s.delta_lower, s.delta_upper);
  }
  s.inclusion_x /= nd;
  s.inclusion_y /= nd;
  for (const auto* st : pooled) {
    for (double c : st->config.cuts()) s.s_draws.push_back(c);
  }
  s.waic = std::numeric_limits<double>::quiet_NaN();
  return s;
}

PosteriorSummary summarize(const std::vector<ChainOutput>& chains, const std::vector<double>& grid,
                           double credible_level) {
  if (chains.empty()) throw InsufficientDataError("no chains to summarize");
  std::vector<std::vector<ChainState>> draws;
  for (const auto& c : chains) draws.push_back(c.draws);
  auto s = summarize_draws(draws, grid, credible_level);
  const bool have_pointwise = std::all_of(chains.begin(), chains.end(), [](const ChainOutput& c) {
    return c.pointwise.rows() > 0;
  });
  std::size_t total = 0;
  for (const auto& c : chains) total += c.draws.size();
  if (have_pointwise && total >= 2) s.waic = waic(chains);
  if (chains.size() >= 2) {
    const std::size_t len = chains.front().draws.size();
    const bool equal = std::all_of(chains.begin(), chains.end(),
                                   [&](const ChainOutput& c) { return c.draws.size() == len; });
    if (equal && len >= 2) s.psr = psr(chains, grid);
  }
  return s;
}

SimpleRegression simple_regression(const Eigen::VectorXd& predictor, const Eigen::VectorXd& response) {
  const auto n = predictor.size();
  if (n < 3) throw InsufficientDataError("simple regression needs at least 3 observations");
  const double mx = predictor.mean();
  const double my = response.mean();
  const Eigen::ArrayXd dx = predictor.array() - mx;
  const Eigen::ArrayXd dy = response.array() - my;
  const double sxx = dx.square().sum();
  if (!(sxx > 0.0)) throw NumericalError("predictor is constant");
  SimpleRegression out;
  out.slope = (dx * dy).sum() / sxx;
  const double rss = (dy - out.slope * dx).square().sum();
  const double df = static_cast<double>(n - 2);
  const double se = std::sqrt(rss / df / sxx);
  if (!(se > 0.0)) {
    out.t = std::numeric_limits<double>::infinity();
    out.p_value = 0.0;
    return out;
  }
  out.t = out.slope / se;
  boost::math::students_t dist(df);
  out.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t)));
  return out;
}

std::vector<ScreenRow> exploratory_screen(const Dataset& data, double low_cut, double high_cut) {
  if (!(low_cut < high_cut)) throw ConfigError("low cut must be below high cut");
  std::vector<ScreenRow> rows;
  for (int which = 0; which < 2; ++which) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < data.x.size(); ++i) {
      if (which == 0 ? data.x[i] < low_cut : data.x[i] > high_cut) idx.push_back(i);
    }
    const char* name = which == 0 ? "low" : "high";
    if (idx.size() < 3) {
      throw InsufficientDataError(std::string("stratum '") + name + "' has fewer than 3 observations");
    }
    const auto n = static_cast<Eigen::Index>(idx.size());
    Eigen::VectorXd xs(n), ys(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      xs[r] = data.x[idx[static_cast<std::size_t>(r)]];
      ys[r] = data.y[idx[static_cast<std::size_t>(r)]];
    }
    for (std::size_t j = 0; j < data.p(); ++j) {
      ScreenRow row;
      row.covariate = j < data.names.size() ? data.names[j] : "C" + std::to_string(j + 1);
      row.stratum = name;
      row.n = idx.size();
      Eigen::VectorXd c(n);
      for (Eigen::Index r = 0; r < n; ++r) {
        c[r] = data.covariates(idx[static_cast<std::size_t>(r)], static_cast<Eigen::Index>(j));
      }
      const double mean = c.mean();
      const double sd = std::sqrt((c.array() - mean).square().sum() / static_cast<double>(n - 1));
      if (!(sd > 0.0)) {
        row.defined = false;
        row.exposure_coef = row.outcome_coef = std::numeric_limits<double>::quiet_NaN();
        row.exposure_p = row.outcome_p = std::numeric_limits<double>::quiet_NaN();
        rows.push_back(row);
        continue;
      }
      const Eigen::VectorXd z = (c.array() - mean) / sd;
      const auto fx = simple_regression(z, xs);
      const auto fy = simple_regression(z, ys);
      row.exposure_coef = std::abs(fx.slope);
      row.exposure_p = fx.p_value;
      row.outcome_coef = std::abs(fy.slope);
      row.outcome_p = fy.p_value;
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<InclusionPattern> inclusion_patterns(const std::vector<ChainOutput>& chains,
                                                 double x_ref) {
  std::map<Bits, std::pair<std::size_t, double>> tally;
  std::size_t total = 0;
  for (const auto& c : chains) {
    for (const auto& st : c.draws) {
      const std::size_t k = locate_experiment(x_ref, st.config);
      auto& entry = tally[st.experiments[k].alpha_y];
      ++entry.first;
      entry.second += st.experiments[k].beta;
      ++total;
    }
  }
  if (total == 0) throw InsufficientDataError("no retained draws");
  std::vector<InclusionPattern> out;
  for (const auto& [bits, v] : tally) {
    out.push_back({bits, static_cast<double>(v.first) / static_cast<double>(total),
                   v.second / static_cast<double>(v.first)});
  }
  std::stable_sort(out.begin(), out.end(), [](const InclusionPattern& a, const InclusionPattern& b) {
    return a.frequency > b.frequency;
  });
  return out;
}

}  // namespace lerca
