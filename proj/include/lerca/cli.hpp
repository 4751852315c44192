#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "lerca/io.hpp"
#include "lerca/model.hpp"
#include "lerca/sampler.hpp"

namespace lerca {

struct RunConfig {
  std::vector<std::size_t> Ks{3};
  std::size_t chains = 3;
  Schedule schedule;
  std::uint64_t seed = 1;
  Hyperparameters hyper;
  std::size_t grid = 100;
  double level = 0.95;
  double psr_threshold = 0.1;
  std::string data;
  std::string out = "lerca_out";
  std::size_t threads = 1;
  bool prior_only = false;
  bool has_bounds = false;
  double s_min = 0.0;
  double s_max = 0.0;

  /// Throws ConfigError on violated invariants.
  void validate() const;
};

/// Builds a run configuration from key=value pairs; unknown keys are errors.
RunConfig run_config_from(const KeyValues& kv);

/// Every key understood by run_config_from, with its current value.
KeyValues to_key_values(const RunConfig& cfg);

/// Process exit code for an exception (1 usage, 2 data, 3 numerical).
int exit_code_for(const std::exception& e);

/// Entry point of the command-line tool. Writes normal output to `out` and
/// the machine-parsable error line to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lerca
