#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lerca/likelihood.hpp"
#include "lerca/model.hpp"
#include "lerca/stats.hpp"

namespace lerca {

struct Schedule {
  std::size_t iterations = 20000;
  std::size_t burn_in = 10000;
  std::size_t thin = 10;

  /// floor((iterations - burn_in) / thin).
  std::size_t retained() const;
  void validate() const;
};

struct SamplerOptions {
  // Drop every data term: Gibbs steps draw from the priors and the moves
  // accept on prior and proposal terms alone. The minimum experiment size
  // is not enforced in this mode.
  bool prior_only = false;
  // When set, every experiment uses these indicators and they never change.
  std::optional<std::pair<Bits, Bits>> fixed_alpha;
  // Exposure bounds; default to the observed minimum and maximum.
  std::optional<std::pair<double, double>> bounds;
  // Starting cut points; default is a draw from the configuration prior.
  std::optional<std::vector<double>> initial_cuts;
  // Minimum spacings; default (s_max - s_min) / (4 (K + 1)).
  std::optional<std::vector<double>> min_gaps;
  // Keep per-observation log densities of retained draws (needed for WAIC).
  bool record_pointwise = true;
};

struct MoveCounter {
  std::size_t proposed = 0;
  std::size_t accepted = 0;
  double rate() const {
    return proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed);
  }
};

struct MoveStats {
  MoveCounter separate;
  MoveCounter jump_over;
  MoveCounter jump_within;
  // Gibbs sweeps performed; every parameter is updated once per sweep.
  std::size_t gibbs_sweeps = 0;
  std::size_t alpha_updates = 0;
};

struct ChainOutput {
  std::size_t num_cuts = 0;
  std::uint64_t seed = 0;
  std::vector<ChainState> draws;
  std::vector<double> loglik;    // one entry per iteration
  Eigen::MatrixXd pointwise;     // retained draws x observations
  MoveStats stats;
};

/// Per-run context shared by the Gibbs steps and the moves.
struct SamplerContext {
  const Dataset& data;
  Hyperparameters hyper;
  SamplerOptions options;
  double s_min = 0.0;
  double s_max = 0.0;
  std::vector<double> min_gaps;  // empty until the number of cuts is known
  double sigma_tune = 0.0;
  std::size_t min_n = 0;
  std::vector<double> sorted_x;
};

SamplerContext make_context(const Dataset& data, const Hyperparameters& hyper,
                            const SamplerOptions& options, std::size_t num_cuts);

/// Data in experiment k, or an empty slice in prior-only mode.
ExperimentSlice context_slice(const SamplerContext& ctx, const ExperimentConfiguration& config,
                              std::size_t k);

ChainState initial_state(const SamplerContext& ctx, std::size_t num_cuts, Rng& rng);

// Gibbs conditionals. All return a new ExperimentParams; none touch the cut
// points. The `update_variance` flag allows the jump moves to redraw
// coefficients while keeping the inherited variance.
ExperimentParams gibbs_update_exposure_params(const ExperimentParams& params,
                                              const ExperimentSlice& slice,
                                              const Hyperparameters& hyper, Rng& rng,
                                              bool update_variance = true);
ExperimentParams gibbs_update_outcome_covariate_params(const ExperimentParams& params,
                                                       const ExperimentSlice& slice,
                                                       const Hyperparameters& hyper,
                                                       Rng& rng,
                                                       bool update_variance = true);

enum class Side { Exposure, Outcome };

/// Collapsed update of one inclusion indicator followed by a draw of its
/// coefficient (zero when excluded). Returns the inclusion probability used.
double gibbs_update_alpha(ExperimentParams& params, const ExperimentSlice& slice,
                          const Hyperparameters& hyper, std::size_t j, Side side, Rng& rng);

void gibbs_update_delta10(ChainState& state, const std::vector<ExperimentSlice>& slices,
                          const Hyperparameters& hyper, Rng& rng);
void gibbs_update_beta(ChainState& state, const std::vector<ExperimentSlice>& slices,
                       const Hyperparameters& hyper, std::size_t k, Rng& rng);

/// One full sweep over every experiment and the shared outcome parameters.
void gibbs_sweep(ChainState& state, const SamplerContext& ctx, Rng& rng, MoveStats* stats);

/// Randomness consumed by a knot shift (separate and jump-within moves): the
/// knot bound(cut + 1) moves to s_new and the curve there takes value e_new.
struct KnotShiftDraw {
  std::size_t cut = 0;
  double s_new = 0.0;
  double e_new = 0.0;
  // Jump-within only: proposed indicators of the left and right experiments.
  Bits left_x, left_y, right_x, right_y;
};

/// Randomness consumed by a jump-over move: the knot bound(cut + 1) is
/// removed, the experiment containing s_new is split there, and the left
/// split half takes the source slope plus u.
struct JumpOverDraw {
  std::size_t cut = 0;
  double s_new = 0.0;
  double u = 0.0;
  Bits merged_x, merged_y, first_x, first_y, second_x, second_y;
};

struct MoveProposal {
  ChainState state;
  double log_ratio = 0.0;  // log Metropolis-Hastings ratio before min(1, .)
};

// Deterministic evaluation of a proposal; nullopt when the draw leaves the
// support (gap or sample-size violation, or a zero proposal density).
// Indicator fields of a draw are ignored when the indicators are fixed.
std::optional<MoveProposal> evaluate_separate(const ChainState& state, const SamplerContext& ctx,
                                              const KnotShiftDraw& draw);
std::optional<MoveProposal> evaluate_jump_within(const ChainState& state, const SamplerContext& ctx,
                                                 const KnotShiftDraw& draw);
std::optional<MoveProposal> evaluate_jump_over(const ChainState& state, const SamplerContext& ctx,
                                               const JumpOverDraw& draw);

// Configuration moves. Each returns true on acceptance; on rejection the
// state is left untouched.
bool move_separate(ChainState& state, const SamplerContext& ctx, Rng& rng);
bool move_jump_within(ChainState& state, const SamplerContext& ctx, Rng& rng);
bool move_jump_over(ChainState& state, const SamplerContext& ctx, Rng& rng);

/// Observation count of every experiment, checked against ctx.min_n.
bool experiments_large_enough(const SamplerContext& ctx, const ExperimentConfiguration& config);

ChainOutput run_chain(const Dataset& data, std::size_t num_cuts, const Hyperparameters& hyper,
                      const Schedule& schedule, std::uint64_t seed,
                      const SamplerOptions& options = {});

struct MultiChainOutput {
  std::vector<ChainOutput> chains;
  // (chain index, message) for chains that aborted.
  std::vector<std::pair<std::size_t, std::string>> failures;
};

/// Chains use seeds base_seed + index and run on up to `threads` workers.
MultiChainOutput run_chains(const Dataset& data, std::size_t num_cuts,
                            const Hyperparameters& hyper, const Schedule& schedule,
                            std::size_t n_chains, std::uint64_t base_seed,
                            const SamplerOptions& options = {}, std::size_t threads = 1);

}  // namespace lerca
