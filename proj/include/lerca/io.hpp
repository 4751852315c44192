#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "lerca/model.hpp"
#include "lerca/sampler.hpp"

namespace lerca {

/// Shortest text that parses back to the same double (17 significant digits).
std::string format_real(double v);

/// Parses a whole field as a double; throws DataError otherwise.
double parse_real(const std::string& field, const std::string& where);

// Dataset CSV: header `y,x,<covariate names>`, one row per unit.
Dataset read_dataset_csv(std::istream& in);
Dataset read_dataset_csv(const std::string& path);
void write_dataset_csv(std::ostream& out, const Dataset& data);
void write_dataset_csv(const std::string& path, const Dataset& data);

// Long-format draws: `chain,iteration,parameter,value`. Experiment-level
// parameters carry their exposure interval, e.g. `beta[1.97,4.12]` or
// `delta_y[0,1.97][C3]`, so a label never refers to two different ranges.
void write_draws_csv(std::ostream& out, const std::vector<ChainOutput>& chains,
                     const std::vector<std::string>& covariate_names, const Schedule& schedule);
void write_draws_csv(const std::string& path, const std::vector<ChainOutput>& chains,
                     const std::vector<std::string>& covariate_names, const Schedule& schedule);

struct DrawsFile {
  std::vector<std::vector<ChainState>> chains;  // ordered by chain id
  std::vector<std::size_t> chain_ids;
  std::vector<std::string> covariate_names;
  std::size_t total_draws() const;
};

DrawsFile read_draws_csv(std::istream& in);
DrawsFile read_draws_csv(const std::string& path);

using KeyValues = std::map<std::string, std::string>;

/// `key=value` lines; `#` starts a comment. Lines inside a `[section]` other
/// than `[config]` are skipped, so a run manifest doubles as a run config.
KeyValues parse_key_values(std::istream& in);
KeyValues read_key_values(const std::string& path);

}  // namespace lerca
