#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "mixprobe/diagnostics.hpp"
#include "mixprobe/errors.hpp"
#include "mixprobe/explorer.hpp"
#include "mixprobe/nuts.hpp"
#include "mixprobe/optimizer.hpp"
#include "mixprobe/params.hpp"
#include "mixprobe/twin_model.hpp"

namespace mixprobe {

namespace io_detail {

/// Shortest decimal representation that round-trips exactly; keeps
/// repeated runs byte-identical.
inline std::string format_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  return in;
}

// RFC 4180 field splitting (handles quoted fields with embedded commas
// and doubled quotes).
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

inline double parse_double(const std::string& s) {
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw std::runtime_error("not a number: '" + s + "'");
  }
}

}  // namespace io_detail

// ---------------------------------------------------------------------------
// JSON serialization of the domain types
// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const UnconstrainedParams& u) {
  j = {{"alpha", u.alpha},   {"log_sigma", u.log_sigma}, {"rho_mz", u.rho_mz},
       {"rho_dz", u.rho_dz}, {"beta", u.beta},           {"pre_p", u.pre_p}};
}

inline void from_json(const nlohmann::json& j, UnconstrainedParams& u) {
  j.at("alpha").get_to(u.alpha);
  j.at("log_sigma").get_to(u.log_sigma);
  j.at("rho_mz").get_to(u.rho_mz);
  j.at("rho_dz").get_to(u.rho_dz);
  j.at("beta").get_to(u.beta);
  j.at("pre_p").get_to(u.pre_p);
  const std::size_t m = u.alpha.size();
  if (u.log_sigma.size() != m || u.rho_mz.size() != m || u.rho_dz.size() != m ||
      u.pre_p.size() + 1 != m)
    throw LengthMismatch("inconsistent parameter block sizes in JSON");
}

inline void to_json(nlohmann::json& j, const NaturalParams& n) {
  j = {{"mu", n.mu},         {"sigma", n.sigma}, {"rho_mz", n.rho_mz},
       {"rho_dz", n.rho_dz}, {"beta", n.beta},   {"p", n.p}};
}

inline void from_json(const nlohmann::json& j, NaturalParams& n) {
  j.at("mu").get_to(n.mu);
  j.at("sigma").get_to(n.sigma);
  j.at("rho_mz").get_to(n.rho_mz);
  j.at("rho_dz").get_to(n.rho_dz);
  j.at("beta").get_to(n.beta);
  j.at("p").get_to(n.p);
  const std::size_t m = n.mu.size();
  if (n.sigma.size() != m || n.rho_mz.size() != m || n.rho_dz.size() != m ||
      n.p.size() != m)
    throw LengthMismatch("inconsistent parameter block sizes in JSON");
}

inline void to_json(nlohmann::json& j, const FixedMask& m) {
  std::vector<double> vals;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m.fixed[i]) vals.push_back(m.value[i]);
  j = {{"fixed", m.fixed}, {"values_at_fixed", vals}};
}

inline void from_json(const nlohmann::json& j, FixedMask& m) {
  std::vector<bool> fixed = j.at("fixed").get<std::vector<bool>>();
  std::vector<double> vals = j.at("values_at_fixed").get<std::vector<double>>();
  m.fixed = fixed;
  m.value.assign(fixed.size(), 0.0);
  std::size_t at = 0;
  for (std::size_t i = 0; i < fixed.size(); ++i)
    if (fixed[i]) {
      if (at >= vals.size()) throw LengthMismatch("mask has fewer values than flags");
      m.value[i] = vals[at++];
    }
  if (at != vals.size()) throw LengthMismatch("mask has more values than flags");
}

inline void to_json(nlohmann::json& j, const BoxBounds& b) {
  auto encode = [](const std::vector<double>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (double x : v) {
      if (std::isfinite(x)) arr.push_back(x);
      else arr.push_back(nullptr);  // null means unbounded
    }
    return arr;
  };
  j = {{"lower", encode(b.lower)}, {"upper", encode(b.upper)}};
}

inline void from_json(const nlohmann::json& j, BoxBounds& b) {
  auto decode = [](const nlohmann::json& arr, double inf_sign) {
    std::vector<double> v;
    for (const auto& x : arr) v.push_back(x.is_null() ? inf_sign : x.get<double>());
    return v;
  };
  b.lower = decode(j.at("lower"), -kInf);
  b.upper = decode(j.at("upper"), kInf);
  b.validate();
}

inline void to_json(nlohmann::json& j, const OptimResult& r) {
  j = {{"nll", r.nll},
       {"converged", r.converged},
       {"termination", to_string(r.termination)},
       {"iterations", r.iterations},
       {"params_natural", nlohmann::json()},
       {"params_unconstrained", r.argmin}};
  try {
    j["params_natural"] = to_natural(r.argmin);
  } catch (const DomainError&) {
    // leave null when the argmin is degenerate
  }
}

inline void from_json(const nlohmann::json& j, OptimResult& r) {
  j.at("nll").get_to(r.nll);
  j.at("converged").get_to(r.converged);
  j.at("iterations").get_to(r.iterations);
  j.at("params_unconstrained").get_to(r.argmin);
  const std::string term = j.at("termination").get<std::string>();
  for (Termination t : {Termination::GradientTol, Termination::StepTol,
                        Termination::MaxIter, Termination::InvalidStart,
                        Termination::LineSearchFail})
    if (term == to_string(t)) r.termination = t;
}

inline void to_json(nlohmann::json& j, const GlobalQuantities& g) {
  j = {{"mu", g.mu_g}, {"sigma", g.sigma_g}, {"rho_mz", g.rho_mz_g}, {"rho_dz", g.rho_dz_g}};
}

inline void to_json(nlohmann::json& j, const GewekeResult& g) {
  j = {{"z_scores", g.z_scores}, {"frac_a", g.frac_a}, {"frac_b", g.frac_b},
       {"pass", g.pass}};
}

inline void to_json(nlohmann::json& j, const ParamSummary& s) {
  j = {{"name", s.name}, {"mean", s.mean}, {"sd", s.sd}};
}

inline void to_json(nlohmann::json& j, const OptimumCluster& c) {
  j = {{"representative", c.representative}, {"nll", c.nll}, {"count", c.count}};
}

inline void to_json(nlohmann::json& j, const RestartOutcome& r) {
  j = {{"start_index", r.start_index}, {"result", r.result}};
}

inline void to_json(nlohmann::json& j, const ExplorationReport& r) {
  j = {{"per_restart", r.per_restart},
       {"best", r.best},
       {"optima_clusters", r.optima_clusters},
       {"min_nll_by_strategy", r.min_nll_by_strategy},
       {"n_converged", r.n_converged},
       {"n_failed", r.n_failed}};
}

// ---------------------------------------------------------------------------
// Dataset CSV (header: x1,x2,zygosity,sex)
// ---------------------------------------------------------------------------

inline void write_dataset_csv(const TwinDataset& data, const std::string& path) {
  std::ofstream out = io_detail::open_out(path);
  out << "x1,x2,zygosity,sex\n";
  for (const TwinRow& r : data.rows) {
    out << io_detail::format_double(r.x1) << ',' << io_detail::format_double(r.x2)
        << ',' << (r.zygosity == Zygosity::MZ ? "MZ" : "DZ") << ','
        << (r.sex == Sex::F ? 'F' : 'M') << '\n';
  }
}

inline TwinDataset read_dataset_csv(const std::string& path) {
  std::ifstream in = io_detail::open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty dataset file: " + path);
  const auto header = io_detail::split_csv_line(line);
  if (header != std::vector<std::string>{"x1", "x2", "zygosity", "sex"})
    throw std::runtime_error("unexpected dataset header in " + path);
  TwinDataset data;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = io_detail::split_csv_line(line);
    if (f.size() != 4)
      throw std::runtime_error("bad dataset row: '" + line + "'");
    TwinRow row;
    row.x1 = io_detail::parse_double(f[0]);
    row.x2 = io_detail::parse_double(f[1]);
    if (f[2] == "MZ") row.zygosity = Zygosity::MZ;
    else if (f[2] == "DZ") row.zygosity = Zygosity::DZ;
    else throw std::runtime_error("bad zygosity: '" + f[2] + "'");
    if (f[3] == "F") row.sex = Sex::F;
    else if (f[3] == "M") row.sex = Sex::M;
    else throw std::runtime_error("bad sex: '" + f[3] + "'");
    data.rows.push_back(row);
  }
  return data;
}

// ---------------------------------------------------------------------------
// Chain CSV (natural-scale traceplot table)
// ---------------------------------------------------------------------------

inline void write_chain_csv(const Chain& chain, const std::string& path) {
  std::ofstream out = io_detail::open_out(path);
  out << "iter";
  for (const std::string& n : natural_names(chain.n_components)) out << ',' << n;
  out << ",nll,accept_stat,tree_depth,divergent\n";
  for (std::size_t i = 0; i < chain.draws.size(); ++i) {
    out << (i + 1);
    const NaturalParams nat =
        to_natural(UnconstrainedParams::from_flat(chain.draws[i]));
    for (double v : natural_values(nat)) out << ',' << io_detail::format_double(v);
    out << ',' << io_detail::format_double(chain.nll_per_draw[i]) << ','
        << io_detail::format_double(chain.accept_stat[i]) << ','
        << chain.tree_depth[i] << ',' << chain.divergent[i] << '\n';
  }
}

/// Rebuild a chain from its CSV export (draws are inverted back to the
/// unconstrained scale through the parameter bijection).
inline Chain read_chain_csv(const std::string& path) {
  std::ifstream in = io_detail::open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty chain file: " + path);
  const auto header = io_detail::split_csv_line(line);
  // infer m from the column count: 5m parameter columns + iter + 4 stats
  if (header.size() < 10 || (header.size() - 5) % 5 != 0)
    throw std::runtime_error("unexpected chain header in " + path);
  const int m = static_cast<int>((header.size() - 5) / 5);

  Chain chain;
  chain.n_components = m;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = io_detail::split_csv_line(line);
    if (f.size() != header.size())
      throw std::runtime_error("bad chain row: '" + line + "'");
    NaturalParams nat(m);
    std::size_t at = 1;
    for (int k = 0; k < m; ++k) nat.mu[k] = io_detail::parse_double(f[at++]);
    for (int k = 0; k < m; ++k) nat.sigma[k] = io_detail::parse_double(f[at++]);
    for (int k = 0; k < m; ++k) nat.rho_mz[k] = io_detail::parse_double(f[at++]);
    for (int k = 0; k < m; ++k) nat.rho_dz[k] = io_detail::parse_double(f[at++]);
    nat.beta = io_detail::parse_double(f[at++]);
    double psum = 0.0;
    for (int k = 0; k + 1 < m; ++k) {
      nat.p[k] = io_detail::parse_double(f[at++]);
      psum += nat.p[k];
    }
    nat.p[m - 1] = 1.0 - psum;
    chain.draws.push_back(from_natural(nat).flat());
    chain.nll_per_draw.push_back(io_detail::parse_double(f[at++]));
    chain.accept_stat.push_back(io_detail::parse_double(f[at++]));
    chain.tree_depth.push_back(static_cast<int>(io_detail::parse_double(f[at++])));
    chain.divergent.push_back(static_cast<int>(io_detail::parse_double(f[at++])));
  }
  return chain;
}

// ---------------------------------------------------------------------------
// Restarts CSV
// ---------------------------------------------------------------------------

inline void write_restarts_csv(const ExplorationReport& report, int m,
                               const std::string& path) {
  std::ofstream out = io_detail::open_out(path);
  out << "start_index,converged,termination,nll";
  for (const std::string& n : natural_names(m)) out << ',' << n;
  out << '\n';
  for (const RestartOutcome& r : report.per_restart) {
    out << r.start_index << ',' << (r.result.converged ? 1 : 0) << ','
        << to_string(r.result.termination) << ','
        << io_detail::format_double(r.result.nll);
    const NaturalParams nat = to_natural(r.result.argmin);
    for (double v : natural_values(nat)) out << ',' << io_detail::format_double(v);
    out << '\n';
  }
}

}  // namespace mixprobe
