#include "lerca/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lerca/errors.hpp"

namespace lerca {

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Splits one CSV record; fields may be wrapped in double quotes ("" escapes a quote).
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::string quote_if_needed(const std::string& field) {
  if (field.find_first_of(",\"") == std::string::npos) return field;
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "' for reading");
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  return out;
}

std::string short_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

double parse_real(const std::string& field, const std::string& where) {
  double v = 0.0;
  const char* b = field.data();
  const char* e = b + field.size();
  if (!field.empty() && *b == '+') ++b;
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (field.empty() || ec != std::errc() || ptr != e) {
    throw DataError(where + ": cannot parse '" + field + "' as a number");
  }
  return v;
}

Dataset read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("dataset is empty");
  const auto header = split_csv(line);
  if (header.size() < 2 || header[0] != "y" || header[1] != "x") {
    throw DataError("row 1: header must start with y,x");
  }
  const std::size_t cols = header.size();
  std::vector<std::vector<double>> rows;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != cols) {
      throw DataError("row " + std::to_string(row_no) + ": expected " + std::to_string(cols) +
                      " columns, found " + std::to_string(fields.size()));
    }
    std::vector<double> vals(cols);
    for (std::size_t c = 0; c < cols; ++c) {
      vals[c] = parse_real(fields[c], "row " + std::to_string(row_no) + ", column " +
                                          std::to_string(c + 1) + " (" + header[c] + ")");
    }
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw DataError("dataset has no data rows");
  Dataset d;
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = static_cast<Eigen::Index>(cols - 2);
  d.y.resize(n);
  d.x.resize(n);
  d.covariates.resize(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    d.y[i] = r[0];
    d.x[i] = r[1];
    for (Eigen::Index j = 0; j < p; ++j) d.covariates(i, j) = r[static_cast<std::size_t>(j + 2)];
  }
  d.names.assign(header.begin() + 2, header.end());
  d.column_means = Eigen::VectorXd::Zero(p);
  d.validate();
  return d;
}

Dataset read_dataset_csv(const std::string& path) {
  auto in = open_in(path);
  return read_dataset_csv(in);
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  out << "y,x";
  for (std::size_t j = 0; j < data.p(); ++j) {
    out << ',' << quote_if_needed(j < data.names.size() ? data.names[j] : "C" + std::to_string(j + 1));
  }
  out << '\n';
  for (Eigen::Index i = 0; i < data.y.size(); ++i) {
    out << format_real(data.y[i]) << ',' << format_real(data.x[i]);
    for (Eigen::Index j = 0; j < data.covariates.cols(); ++j) {
      out << ',' << format_real(data.covariates(i, j));
    }
    out << '\n';
  }
}

void write_dataset_csv(const std::string& path, const Dataset& data) {
  auto out = open_out(path);
  write_dataset_csv(out, data);
  if (!out) throw DataError("write to '" + path + "' failed");
}

void write_draws_csv(std::ostream& out, const std::vector<ChainOutput>& chains,
                     const std::vector<std::string>& names, const Schedule& schedule) {
  out << "chain,iteration,parameter,value\n";
  for (std::size_t c = 0; c < chains.size(); ++c) {
    for (std::size_t d = 0; d < chains[c].draws.size(); ++d) {
      const auto& st = chains[c].draws[d];
      const std::size_t it = schedule.burn_in + schedule.thin * (d + 1) - 1;
      const std::string head = std::to_string(c) + ',' + std::to_string(it) + ',';
      auto row = [&](const std::string& name, double v) {
        out << head << quote_if_needed(name) << ',' << format_real(v) << '\n';
      };
      const auto& cfg = st.config;
      row("s_min", cfg.s_min());
      row("s_max", cfg.s_max());
      for (std::size_t k = 0; k < cfg.num_cuts(); ++k) row("s[" + std::to_string(k + 1) + "]", cfg.cuts()[k]);
      for (std::size_t k = 0; k < cfg.min_gaps().size(); ++k) {
        row("gap[" + std::to_string(k + 1) + "]", cfg.min_gaps()[k]);
      }
      for (std::size_t k = 0; k < st.experiments.size(); ++k) {
        const auto& e = st.experiments[k];
        const std::string iv = "[" + short_real(cfg.bound(k)) + "," + short_real(cfg.bound(k + 1)) + "]";
        row("delta_x0" + iv, e.delta_x0);
        for (std::size_t j = 0; j < e.p(); ++j) {
          const std::string cj = "[" + names.at(j) + "]";
          row("alpha_x" + iv + cj, e.alpha_x[j]);
          row("delta_x" + iv + cj, e.delta_x[static_cast<Eigen::Index>(j)]);
        }
        row("sigma2_x" + iv, e.sigma2_x);
        row("delta_y0" + iv, e.delta_y0);
        row("beta" + iv, e.beta);
        for (std::size_t j = 0; j < e.p(); ++j) {
          const std::string cj = "[" + names.at(j) + "]";
          row("alpha_y" + iv + cj, e.alpha_y[j]);
          row("delta_y" + iv + cj, e.delta_y[static_cast<Eigen::Index>(j)]);
        }
        row("sigma2_y" + iv, e.sigma2_y);
      }
    }
  }
}

void write_draws_csv(const std::string& path, const std::vector<ChainOutput>& chains,
                     const std::vector<std::string>& names, const Schedule& schedule) {
  auto out = open_out(path);
  write_draws_csv(out, chains, names, schedule);
  if (!out) throw DataError("write to '" + path + "' failed");
}

std::size_t DrawsFile::total_draws() const {
  std::size_t n = 0;
  for (const auto& c : chains) n += c.size();
  return n;
}

namespace {

// Accumulates the rows of one (chain, iteration) block.
struct PendingDraw {
  double s_min = 0.0, s_max = 0.0;
  std::vector<double> cuts, gaps;
  std::vector<std::string> intervals;
  std::vector<std::map<std::string, double>> scalars;
  std::vector<std::vector<std::pair<std::string, double>>> ax, dx, ay, dy;
  bool any = false;
};

std::size_t experiment_slot(PendingDraw& p, const std::string& interval) {
  for (std::size_t k = 0; k < p.intervals.size(); ++k) {
    if (p.intervals[k] == interval) return k;
  }
  p.intervals.push_back(interval);
  p.scalars.emplace_back();
  p.ax.emplace_back();
  p.dx.emplace_back();
  p.ay.emplace_back();
  p.dy.emplace_back();
  return p.intervals.size() - 1;
}

ChainState finish_draw(const PendingDraw& p, std::vector<std::string>& names, const std::string& where) {
  if (p.intervals.size() != p.cuts.size() + 1) throw DataError(where + ": experiment count does not match cut points");
  ChainState st{ExperimentConfiguration(p.cuts, p.s_min, p.s_max, p.gaps), {}};
  if (names.empty()) {
    for (const auto& [name, v] : p.ay.front()) names.push_back(name);
  }
  const std::size_t q = names.size();
  for (std::size_t k = 0; k < p.intervals.size(); ++k) {
    if (p.ax[k].size() != q || p.dx[k].size() != q || p.ay[k].size() != q || p.dy[k].size() != q) {
      throw DataError(where + ": covariate entries missing for experiment " + p.intervals[k]);
    }
    auto e = ExperimentParams::zeros(q);
    auto get = [&](const char* key) {
      auto it = p.scalars[k].find(key);
      if (it == p.scalars[k].end()) throw DataError(where + ": missing " + key + p.intervals[k]);
      return it->second;
    };
    e.delta_x0 = get("delta_x0");
    e.sigma2_x = get("sigma2_x");
    e.delta_y0 = get("delta_y0");
    e.beta = get("beta");
    e.sigma2_y = get("sigma2_y");
    for (std::size_t j = 0; j < q; ++j) {
      e.alpha_x[j] = p.ax[k][j].second != 0.0;
      e.delta_x[static_cast<Eigen::Index>(j)] = p.dx[k][j].second;
      e.alpha_y[j] = p.ay[k][j].second != 0.0;
      e.delta_y[static_cast<Eigen::Index>(j)] = p.dy[k][j].second;
    }
    st.experiments.push_back(std::move(e));
  }
  return st;
}

}  // namespace

DrawsFile read_draws_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != "chain,iteration,parameter,value") {
    throw DataError("row 1: draws header must be chain,iteration,parameter,value");
  }
  DrawsFile file;
  std::map<std::size_t, std::vector<ChainState>> by_chain;
  PendingDraw pending;
  long cur_chain = -1, cur_iter = -1;
  std::size_t row_no = 1;
  auto flush = [&] {
    if (!pending.any) return;
    by_chain[static_cast<std::size_t>(cur_chain)].push_back(
        finish_draw(pending, file.covariate_names,
                    "chain " + std::to_string(cur_chain) + " iteration " + std::to_string(cur_iter)));
    pending = PendingDraw{};
  };
  while (std::getline(in, line)) {
    ++row_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    const std::string where = "row " + std::to_string(row_no);
    if (f.size() != 4) throw DataError(where + ": expected 4 columns");
    const long chain = static_cast<long>(parse_real(f[0], where));
    const long iter = static_cast<long>(parse_real(f[1], where));
    if (chain != cur_chain || iter != cur_iter) {
      flush();
      cur_chain = chain;
      cur_iter = iter;
    }
    pending.any = true;
    const std::string& name = f[2];
    const double v = parse_real(f[3], where);
    if (name == "s_min") { pending.s_min = v; continue; }
    if (name == "s_max") { pending.s_max = v; continue; }
    if (name.rfind("s[", 0) == 0) { pending.cuts.push_back(v); continue; }
    if (name.rfind("gap[", 0) == 0) { pending.gaps.push_back(v); continue; }
    const auto lb = name.find('[');
    const auto rb = name.find(']', lb);
    if (lb == std::string::npos || rb == std::string::npos) throw DataError(where + ": unknown parameter '" + name + "'");
    const std::string base = name.substr(0, lb);
    const std::string interval = name.substr(lb, rb - lb + 1);
    const std::size_t k = experiment_slot(pending, interval);
    if (rb + 1 < name.size()) {
      if (name[rb + 1] != '[' || name.back() != ']') throw DataError(where + ": malformed parameter '" + name + "'");
      const std::string cov = name.substr(rb + 2, name.size() - rb - 3);
      auto& dst = base == "alpha_x" ? pending.ax[k] : base == "delta_x" ? pending.dx[k]
                : base == "alpha_y" ? pending.ay[k] : base == "delta_y" ? pending.dy[k]
                : throw DataError(where + ": unknown parameter '" + name + "'");
      dst.emplace_back(cov, v);
    } else {
      pending.scalars[k][base] = v;
    }
  }
  flush();
  for (auto& [id, draws] : by_chain) {
    file.chain_ids.push_back(id);
    file.chains.push_back(std::move(draws));
  }
  if (file.total_draws() == 0) throw InsufficientDataError("draws file contains no draws");
  return file;
}

DrawsFile read_draws_csv(const std::string& path) {
  auto in = open_in(path);
  return read_draws_csv(in);
}

KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  std::string section;
  std::size_t row_no = 0;
  while (std::getline(in, line)) {
    ++row_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = line.substr(1, line.size() - 2);
      continue;
    }
    if (!section.empty() && section != "config") continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(row_no) + ": expected key=value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_key_values(in);
}

}  // namespace lerca
