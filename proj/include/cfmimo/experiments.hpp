// SPDX-License-Identifier: Apache-2.0
//
// cfmimo: resource allocation for cell-free MU-MIMO multicarrier downlinks
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------


/**
 * @file experiments.hpp
 * @brief Monte Carlo trials and parameter sweeps over the two-stage
 * scheduler, convergence reports, aggregate statistics, and the CSV/SVG
 * artifacts written from them.
 *
 * Trial i of a sweep uses seed derive_seed(master, Trial, i) in every cell, so
 * CF and CAS cells of one trial share user positions (paired comparison).
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "cfmimo/scheduling.hpp"

namespace cfmimo {

enum class SweepAxis { MaxLatencyT, SubcarriersF, UsersK, ApsN, BlerEps, Antennas };

inline std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::MaxLatencyT: return "MaxLatencyT";
    case SweepAxis::SubcarriersF: return "SubcarriersF";
    case SweepAxis::UsersK: return "UsersK";
    case SweepAxis::ApsN: return "ApsN";
    case SweepAxis::BlerEps: return "BlerEps";
    case SweepAxis::Antennas: return "Antennas";
  }
  return "?";
}

inline SweepAxis parse_axis(std::string_view s) {
  for (auto a : {SweepAxis::MaxLatencyT, SweepAxis::SubcarriersF, SweepAxis::UsersK, SweepAxis::ApsN,
                 SweepAxis::BlerEps, SweepAxis::Antennas})
    if (s == to_string(a)) return a;
  throw std::invalid_argument("unknown sweep axis '" + std::string(s) + "'");
}

struct SweepSpec {
  SweepAxis axis = SweepAxis::MaxLatencyT;
  std::vector<double> values{3};
  std::vector<Scheme> schemes{Scheme::SU, Scheme::FU, Scheme::MU};
  std::vector<Deployment> deployments{Deployment::CellFree, Deployment::CentralizedAntenna};
  std::vector<Regime> regimes{Regime::INFBL, Regime::FBL};
  int n_trials = 50;
  std::uint64_t master_seed = 1;
};

inline ValidationReport validate_sweep(const SweepSpec& s, const SystemConfig& cfg) {
  ValidationReport r;
  if (s.values.empty()) r.violations.emplace_back("sweep values must not be empty");
  if (s.schemes.empty() || s.deployments.empty() || s.regimes.empty())
    r.violations.emplace_back("sweep schemes, deployments and regimes must not be empty");
  if (s.n_trials < 1) r.violations.emplace_back("n_trials must be >= 1");
  for (double v : s.values) {
    const bool integral = v == std::floor(v) && v >= 1;
    if (s.axis == SweepAxis::BlerEps) {
      if (!(v > 0 && v < 0.5)) r.violations.emplace_back("BlerEps values must lie in (0, 0.5)");
    } else if (!integral) {
      r.violations.emplace_back(to_string(s.axis) + " values must be positive integers");
    } else if (s.axis == SweepAxis::Antennas && cfg.total_antennas() % static_cast<int>(v) != 0) {
      r.violations.emplace_back("Antennas axis: AP count must divide the total antenna count");
    }
  }
  return r;
}

/// Config at one axis point. The Antennas axis keeps N*M fixed at the base
/// config's total.
inline SystemConfig at_axis_point(SystemConfig cfg, SweepAxis axis, double value) {
  const int n = static_cast<int>(std::lround(value));
  switch (axis) {
    case SweepAxis::MaxLatencyT: cfg.n_slots = n; break;
    case SweepAxis::SubcarriersF: cfg.n_subcarriers = n; break;
    case SweepAxis::UsersK: cfg.n_users = n; break;
    case SweepAxis::ApsN: cfg.n_aps = n; break;
    case SweepAxis::BlerEps: cfg.bler = value; break;
    case SweepAxis::Antennas: {
      const int total = cfg.total_antennas();
      cfg.n_aps = n;
      cfg.antennas_per_ap = total / n;
      break;
    }
  }
  return cfg;
}

struct TrialOutcome {
  ScheduleOutcome schedule;
  std::string diagnostic;
};

/// One Monte Carlo trial: fresh topology and channels from `seed`, then the
/// two-stage scheduler. Errors become an infeasible, zero-throughput result.
inline TrialOutcome run_trial(SystemConfig cfg, const GaConfig& ga, const SolverConfig& scfg, Scheme scheme,
                              Deployment deployment, Regime regime, std::uint64_t seed) {
  cfg.rng_seed = seed;
  TrialOutcome out;
  try {
    const auto ch = generate_channels(generate_topology(cfg, deployment), cfg);
    out.schedule = two_stage(ch, cfg, ga, scfg, scheme, regime);
    out.diagnostic = out.schedule.beamforming.diagnostic;
  } catch (const std::exception& e) {
    out.schedule = {};
    out.schedule.result.per_user_raw_bits.assign(static_cast<std::size_t>(cfg.n_users), 0.0);
    out.schedule.result.per_user_bits.assign(static_cast<std::size_t>(cfg.n_users), 0.0);
    out.diagnostic = std::string("trial failed: ") + e.what();
  }
  return out;
}

struct TrialRecord {
  double value = 0.0;
  Scheme scheme = Scheme::MU;
  Deployment deployment = Deployment::CellFree;
  Regime regime = Regime::INFBL;
  int trial = 0;
  std::uint64_t seed = 0;
  /// Zero unless feasible.
  double wtp = 0.0;
  double wtp_unconstrained = 0.0;
  bool feasible = false;
  bool qos_met = false;
  bool power_ok = false;
  int evaluations = 0;
  int sca_evaluations = 0;
};

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& xs) {
  MeanSe m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return m;
  double ss = 0.0;
  for (double x : xs) ss += (x - m.mean) * (x - m.mean);
  m.se = std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
  return m;
}

struct CellKey {
  double value;
  Scheme scheme;
  Deployment deployment;
  Regime regime;
  auto operator<=>(const CellKey&) const = default;
};

struct CellStats {
  CellKey key{};
  int trials = 0;
  MeanSe wtp;
  MeanSe service;
};

struct SweepResult {
  SweepSpec spec;
  std::vector<TrialRecord> records;
  std::vector<CellStats> cells;
  std::vector<std::uint64_t> seeds;
};

inline std::vector<CellStats> aggregate(const std::vector<TrialRecord>& records) {
  std::map<CellKey, std::pair<std::vector<double>, std::vector<double>>> groups;
  std::vector<CellKey> order;
  for (const auto& r : records) {
    const CellKey key{r.value, r.scheme, r.deployment, r.regime};
    auto [it, fresh] = groups.try_emplace(key);
    if (fresh) order.push_back(key);
    it->second.first.push_back(r.wtp);
    it->second.second.push_back(r.feasible ? 1.0 : 0.0);
  }
  std::vector<CellStats> out;
  for (const auto& key : order) {
    const auto& [w, s] = groups.at(key);
    out.push_back({key, static_cast<int>(w.size()), mean_se(w), mean_se(s)});
  }
  return out;
}

inline std::vector<std::uint64_t> trial_seeds(std::uint64_t master, int n) {
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < n; ++i) seeds.push_back(derive_seed(master, Stream::Trial, static_cast<std::uint64_t>(i)));
  return seeds;
}

using ProgressLog = std::function<void(const std::string&)>;

/// Cells in order value, deployment, scheme, regime; one log line per cell.
inline SweepResult run_sweep(const SweepSpec& spec, const SystemConfig& cfg, const GaConfig& ga,
                             const SolverConfig& scfg, const ProgressLog& log = {}) {
  SweepResult res;
  res.spec = spec;
  res.seeds = trial_seeds(spec.master_seed, spec.n_trials);
  for (double value : spec.values) {
    const SystemConfig point = at_axis_point(cfg, spec.axis, value);
    for (auto deployment : spec.deployments)
      for (auto scheme : spec.schemes)
        for (auto regime : spec.regimes) {
          const std::size_t first = res.records.size();
          for (int i = 0; i < spec.n_trials; ++i) {
            const auto t = run_trial(point, ga, scfg, scheme, deployment, regime, res.seeds[i]);
            TrialRecord r;
            r.value = value;
            r.scheme = scheme;
            r.deployment = deployment;
            r.regime = regime;
            r.trial = i;
            r.seed = res.seeds[i];
            const auto& a = t.schedule.result;
            r.feasible = a.feasible;
            r.qos_met = a.qos_met;
            r.power_ok = a.power_ok;
            r.wtp_unconstrained = a.weighted_throughput;
            r.wtp = a.feasible ? a.weighted_throughput : 0.0;
            r.evaluations = t.schedule.trace.evaluations;
            r.sca_evaluations = t.schedule.trace.sca_evaluations;
            res.records.push_back(r);
          }
          if (log) {
            const std::vector<TrialRecord> cell(res.records.begin() + static_cast<std::ptrdiff_t>(first),
                                                res.records.end());
            const auto st = aggregate(cell).front();
            char buf[256];
            std::snprintf(buf, sizeof buf, "%s=%g %s %s %s: mean_wtp=%.4g se=%.3g service_rate=%.3g",
                          to_string(spec.axis).c_str(), value, to_string(deployment).c_str(),
                          to_string(scheme).c_str(), to_string(regime).c_str(), st.wtp.mean, st.wtp.se,
                          st.service.mean);
            log(buf);
          }
        }
  }
  res.cells = aggregate(res.records);
  return res;
}

struct ConvergenceReport {
  Scheme scheme = Scheme::MU;
  Deployment deployment = Deployment::CellFree;
  Regime regime = Regime::INFBL;
  std::uint64_t seed = 0;
  /// SCA objective of the final beamforming run on the chosen schedule.
  std::vector<double> sca_trace;
  bool sca_converged = false;
  /// Best fitness per generation, stage 1 then stage 2.
  std::vector<double> ga_trace;
  int stage2_start = -1;
};

inline ConvergenceReport convergence_report(const SystemConfig& cfg, const GaConfig& ga, const SolverConfig& scfg,
                                            Scheme scheme, Deployment deployment, Regime regime,
                                            std::uint64_t seed) {
  const auto t = run_trial(cfg, ga, scfg, scheme, deployment, regime, seed);
  ConvergenceReport r;
  r.scheme = scheme;
  r.deployment = deployment;
  r.regime = regime;
  r.seed = seed;
  r.sca_trace = t.schedule.beamforming.state.objective_trace;
  r.sca_converged = t.schedule.beamforming.converged;
  r.ga_trace = t.schedule.trace.best_fitness_per_generation;
  r.stage2_start = t.schedule.trace.stage2_start;
  return r;
}

// ---- output -------------------------------------------------------------------

/// %.9g, the CSV float format.
inline std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

inline void write_trials_csv(std::ostream& os, const SweepResult& res) {
  os << "axis,value,scheme,deployment,regime,trial,seed,wtp,wtp_unconstrained,feasible,qos_met,power_ok,"
        "evaluations,sca_evaluations\n";
  for (const auto& r : res.records)
    os << to_string(res.spec.axis) << ',' << num(r.value) << ',' << to_string(r.scheme) << ','
       << to_string(r.deployment) << ',' << to_string(r.regime) << ',' << r.trial << ',' << r.seed << ','
       << num(r.wtp) << ',' << num(r.wtp_unconstrained) << ',' << r.feasible << ',' << r.qos_met << ','
       << r.power_ok << ',' << r.evaluations << ',' << r.sca_evaluations << '\n';
}

inline void write_cells_csv(std::ostream& os, const SweepSpec& spec, const std::vector<CellStats>& cells) {
  os << "axis,value,scheme,deployment,regime,trials,mean_wtp,se_wtp,service_rate,se_service_rate\n";
  for (const auto& c : cells)
    os << to_string(spec.axis) << ',' << num(c.key.value) << ',' << to_string(c.key.scheme) << ','
       << to_string(c.key.deployment) << ',' << to_string(c.key.regime) << ',' << c.trials << ','
       << num(c.wtp.mean) << ',' << num(c.wtp.se) << ',' << num(c.service.mean) << ',' << num(c.service.se)
       << '\n';
}

inline void write_convergence_csv(std::ostream& os, const std::vector<ConvergenceReport>& reports) {
  os << "kind,scheme,deployment,regime,seed,step,value,stage\n";
  for (const auto& r : reports) {
    const std::string tag = to_string(r.scheme) + ',' + to_string(r.deployment) + ',' + to_string(r.regime) +
                            ',' + std::to_string(r.seed);
    for (std::size_t i = 0; i < r.sca_trace.size(); ++i)
      os << "sca," << tag << ',' << i << ',' << num(r.sca_trace[i]) << ",0\n";
    for (std::size_t i = 0; i < r.ga_trace.size(); ++i) {
      const int stage = r.stage2_start >= 0 && static_cast<int>(i) >= r.stage2_start ? 2 : 1;
      os << "ga," << tag << ',' << i << ',' << num(r.ga_trace[i]) << ',' << stage << '\n';
    }
  }
}

/// Writes through a temporary sibling and renames over `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    os << content;
    os.flush();
    if (!os) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

// ---- figures ------------------------------------------------------------------

struct Series {
  std::string label;
  std::vector<double> x, y, err;
};

struct Plot {
  std::string title, xlabel, ylabel;
  bool log_x = false;
  std::vector<Series> series;
  /// Vertical marker (e.g. the stage boundary); NaN for none.
  double marker_x = std::nan("");
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fmt(const char* f, double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

/// Ticks at 1, 2 or 5 times a power of ten.
inline std::vector<double> nice_ticks(double lo, double hi, int target = 6, bool integral = false) {
  if (!(hi > lo)) return {lo};
  double raw = (hi - lo) / target;
  if (integral) raw = std::max(raw, 1.0);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> t;
  for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * step; v += step) t.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
  return t;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace detail

inline std::string render_svg(const Plot& p) {
  constexpr double W = 640, H = 420, L = 70, R = 190, T = 40, B = 55;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  auto tx = [&](double x) { return p.log_x ? std::log10(x) : x; };
  bool integral_x = true;
  for (const auto& s : p.series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      integral_x = integral_x && s.x[i] == std::floor(s.x[i]);
      const double e = i < s.err.size() ? s.err[i] : 0.0;
      x0 = std::min(x0, tx(s.x[i]));
      x1 = std::max(x1, tx(s.x[i]));
      y0 = std::min(y0, s.y[i] - e);
      y1 = std::max(y1, s.y[i] + e);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  const double xpad = 0.04 * (x1 - x0);
  auto px = [&](double x) { return L + (tx(x) - x0 + xpad) / (x1 - x0 + 2 * xpad) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  using detail::fmt;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << (L + (W - L - R) / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
     << detail::xml_escape(p.title) << "</text>\n";
  os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << (W - L - R) << "\" height=\"" << (H - T - B)
     << "\" fill=\"none\" stroke=\"black\"/>\n";

  std::vector<double> xt;
  if (p.log_x) {
    for (double e = std::floor(x0); e <= x1 + 1e-9; e += 1.0) xt.push_back(std::pow(10.0, e));
  } else {
    xt = detail::nice_ticks(x0, x1, 6, integral_x);
  }
  for (double v : xt) {
    if (tx(v) < x0 - 1e-9 || tx(v) > x1 + 1e-9) continue;
    const double X = px(v);
    os << "<line x1=\"" << fmt("%.2f", X) << "\" y1=\"" << (H - B) << "\" x2=\"" << fmt("%.2f", X) << "\" y2=\""
       << (H - B + 5) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << fmt("%.2f", X) << "\" y=\"" << (H - B + 18) << "\" text-anchor=\"middle\">"
       << fmt("%g", v) << "</text>\n";
  }
  for (double v : detail::nice_ticks(y0, y1)) {
    const double Y = py(v);
    os << "<line x1=\"" << (L - 5) << "\" y1=\"" << fmt("%.2f", Y) << "\" x2=\"" << L << "\" y2=\""
       << fmt("%.2f", Y) << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << fmt("%.2f", Y) << "\" x2=\"" << (W - R) << "\" y2=\""
       << fmt("%.2f", Y) << "\" stroke=\"#dddddd\"/>\n";
    os << "<text x=\"" << (L - 8) << "\" y=\"" << fmt("%.2f", Y + 4) << "\" text-anchor=\"end\">" << fmt("%g", v)
       << "</text>\n";
  }
  os << "<text x=\"" << (L + (W - L - R) / 2) << "\" y=\"" << (H - 12) << "\" text-anchor=\"middle\">"
     << detail::xml_escape(p.xlabel) << "</text>\n";
  os << "<text transform=\"translate(18," << (T + (H - T - B) / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
     << detail::xml_escape(p.ylabel) << "</text>\n";
  if (std::isfinite(p.marker_x)) {
    const double X = px(p.marker_x);
    os << "<line x1=\"" << fmt("%.2f", X) << "\" y1=\"" << T << "\" x2=\"" << fmt("%.2f", X) << "\" y2=\""
       << (H - B) << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  }

  for (std::size_t si = 0; si < p.series.size(); ++si) {
    const auto& s = p.series[si];
    const char* color = detail::kPalette[si % std::size(detail::kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      os << (i ? " " : "") << fmt("%.2f", px(s.x[i])) << ',' << fmt("%.2f", py(s.y[i]));
    os << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double X = px(s.x[i]), Y = py(s.y[i]);
      if (i < s.err.size() && s.err[i] > 0) {
        const double ya = py(s.y[i] + s.err[i]), yb = py(s.y[i] - s.err[i]);
        os << "<path d=\"M" << fmt("%.2f", X) << ' ' << fmt("%.2f", ya) << "V" << fmt("%.2f", yb) << "M"
           << fmt("%.2f", X - 4) << ' ' << fmt("%.2f", ya) << "h8M" << fmt("%.2f", X - 4) << ' '
           << fmt("%.2f", yb) << "h8\" stroke=\"" << color << "\"/>\n";
      }
      os << "<circle cx=\"" << fmt("%.2f", X) << "\" cy=\"" << fmt("%.2f", Y) << "\" r=\"3\" fill=\"" << color
         << "\"/>\n";
    }
    const double ly = T + 10 + 18.0 * static_cast<double>(si);
    os << "<line x1=\"" << (W - R + 12) << "\" y1=\"" << ly << "\" x2=\"" << (W - R + 32) << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << (W - R + 38) << "\" y=\"" << (ly + 4) << "\">" << detail::xml_escape(s.label)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline std::string axis_label(SweepAxis a) {
  switch (a) {
    case SweepAxis::MaxLatencyT: return "maximum latency T (slots)";
    case SweepAxis::SubcarriersF: return "subcarriers F";
    case SweepAxis::UsersK: return "users K";
    case SweepAxis::ApsN: return "APs N";
    case SweepAxis::BlerEps: return "decoding error probability";
    case SweepAxis::Antennas: return "APs N (fixed total antennas)";
  }
  return "";
}

/// One series per (deployment, scheme, regime), in first-appearance order.
inline Plot sweep_plot(const SweepResult& res, bool service_rate, const std::string& title) {
  Plot p;
  p.title = title;
  p.xlabel = axis_label(res.spec.axis);
  p.ylabel = service_rate ? "service rate" : "mean WTP (bits)";
  p.log_x = res.spec.axis == SweepAxis::BlerEps;
  std::map<std::string, std::size_t> index;
  for (const auto& c : res.cells) {
    const std::string label =
        to_string(c.key.deployment) + " " + to_string(c.key.scheme) + " " + to_string(c.key.regime);
    auto [it, fresh] = index.try_emplace(label, p.series.size());
    if (fresh) p.series.push_back({label, {}, {}, {}});
    auto& s = p.series[it->second];
    const MeanSe& m = service_rate ? c.service : c.wtp;
    s.x.push_back(c.key.value);
    s.y.push_back(m.mean);
    s.err.push_back(m.se);
  }
  return p;
}

inline Plot convergence_plot(const std::vector<ConvergenceReport>& reports, bool ga, const std::string& title) {
  Plot p;
  p.title = title;
  p.xlabel = ga ? "generation" : "SCA iteration";
  p.ylabel = ga ? "best fitness" : "surrogate objective";
  for (const auto& r : reports) {
    Series s;
    s.label = to_string(r.deployment) + " " + to_string(r.scheme) + " " + to_string(r.regime);
    const auto& tr = ga ? r.ga_trace : r.sca_trace;
    for (std::size_t i = 0; i < tr.size(); ++i) {
      s.x.push_back(static_cast<double>(i));
      s.y.push_back(tr[i]);
    }
    if (ga && r.stage2_start >= 0) p.marker_x = r.stage2_start - 0.5;
    p.series.push_back(std::move(s));
  }
  return p;
}

/// Writes `<stem>.svg` and the backing `<stem>.csv` for a sweep; the service
/// rate figure is added when `with_service_rate`. Returns written paths.
inline std::vector<std::filesystem::path> emit_figures(const SweepResult& res, const std::filesystem::path& dir,
                                                       const std::string& stem, bool with_service_rate = false) {
  std::vector<std::filesystem::path> files;
  if (res.cells.empty()) return files;
  std::ostringstream csv;
  write_cells_csv(csv, res.spec, res.cells);
  auto emit = [&](const std::string& name, bool service) {
    const auto svg = dir / (name + ".svg");
    const auto data = dir / (name + ".csv");
    write_file_atomic(svg, render_svg(sweep_plot(res, service, name)));
    write_file_atomic(data, csv.str());
    files.push_back(svg);
    files.push_back(data);
  };
  emit(stem, false);
  if (with_service_rate) emit(stem + "_service_rate", true);
  return files;
}

inline std::vector<std::filesystem::path> emit_convergence_figure(const std::vector<ConvergenceReport>& reports,
                                                                  const std::filesystem::path& dir,
                                                                  const std::string& stem, bool ga) {
  std::vector<std::filesystem::path> files;
  if (reports.empty()) return files;
  std::ostringstream csv;
  write_convergence_csv(csv, reports);
  const auto svg = dir / (stem + ".svg");
  const auto data = dir / (stem + ".csv");
  write_file_atomic(svg, render_svg(convergence_plot(reports, ga, stem)));
  write_file_atomic(data, csv.str());
  return {svg, data};
}

// ---- presets ------------------------------------------------------------------

enum class PresetKind { Run, Sweep, ScaConvergence, GaConvergence };

struct Preset {
  std::string name;
  PresetKind kind = PresetKind::Sweep;
  SystemConfig system;
  GaConfig ga;
  SolverConfig solver;
  SweepSpec sweep;
  /// Single-trial selection for run and convergence presets.
  Scheme scheme = Scheme::MU;
  Deployment deployment = Deployment::CellFree;
  Regime regime = Regime::FBL;
  bool service_rate = false;
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9",
                                              "table1-defaults", "ci-small"};
  return names;
}

/// Desk-scale versions of the figure setups: N=4, M=2, K=4, T=3, F=2 unless
/// the axis says otherwise.
inline Preset make_preset(const std::string& name) {
  Preset p;
  p.name = name;
  p.system.n_aps = 4;
  p.system.antennas_per_ap = 2;
  p.system.n_users = 4;
  p.system.n_slots = 3;
  p.system.n_subcarriers = 2;
  p.ga.stage2_population = 8;
  p.sweep.n_trials = 20;
  const std::vector<Regime> fbl{Regime::FBL};
  if (name == "fig3" || name == "fig4") {
    p.kind = name == "fig3" ? PresetKind::ScaConvergence : PresetKind::GaConvergence;
    p.sweep.schemes = {Scheme::MU};
    p.sweep.n_trials = 1;
  } else if (name == "fig5") {
    p.sweep.axis = SweepAxis::MaxLatencyT;
    p.sweep.values = {2, 4, 6, 8, 10};
    p.sweep.regimes = fbl;
  } else if (name == "fig6") {
    p.sweep.axis = SweepAxis::BlerEps;
    p.sweep.values = {1e-1, 1e-3, 1e-5, 1e-7, 1e-9};
    p.sweep.regimes = fbl;
  } else if (name == "fig7") {
    // Six REs, six APs with two antennas each; K scaled down from 1..24.
    p.system.n_aps = 6;
    p.sweep.axis = SweepAxis::UsersK;
    p.sweep.values = {1, 2, 4, 8, 12};
    p.service_rate = true;
  } else if (name == "fig8") {
    p.sweep.axis = SweepAxis::SubcarriersF;
    p.sweep.values = {1, 2, 3, 4, 5};
  } else if (name == "fig9") {
    p.system.n_aps = 8;
    p.system.antennas_per_ap = 1;
    p.sweep.axis = SweepAxis::Antennas;
    p.sweep.values = {1, 2, 4, 8};
    p.sweep.schemes = {Scheme::MU};
    p.sweep.deployments = {Deployment::CellFree};
  } else if (name == "table1-defaults") {
    p.kind = PresetKind::Run;
    p.system = SystemConfig{};
    p.ga.stage2_population = 0;
    p.sweep.n_trials = 1;
  } else if (name == "ci-small") {
    p.sweep.values = {3};
    p.sweep.n_trials = 50;
    p.ga.population_size = 8;
    p.ga.max_generations = 10;
    p.ga.stage2_generations = 2;
    p.ga.stage2_population = 4;
  } else {
    throw std::invalid_argument("unknown preset '" + name + "'");
  }
  return p;
}

}  // namespace cfmimo
