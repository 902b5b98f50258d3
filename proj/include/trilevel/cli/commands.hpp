#pragma once

#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unistd.h>
#include <vector>

#include "trilevel/analytic.hpp"
#include "trilevel/cli/csv.hpp"
#include "trilevel/cli/manifest.hpp"
#include "trilevel/langevin.hpp"
#include "trilevel/model.hpp"
#include "trilevel/moments.hpp"
#include "trilevel/parallel.hpp"

namespace trilevel::cli {

// Bad flags, axis names, grids or parameter values. Exit code 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An invariant or validation check failed. Exit code 1.
class CheckFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Axis { eta, beta, A, r, kappa, omega };

inline Axis parse_axis(const std::string& s) {
  if (s == "eta") return Axis::eta;
  if (s == "beta") return Axis::beta;
  if (s == "A") return Axis::A;
  if (s == "r") return Axis::r;
  if (s == "kappa") return Axis::kappa;
  if (s == "omega") return Axis::omega;
  throw UsageError("unknown axis '" + s + "'");
}

inline std::string axis_name(Axis a) {
  switch (a) {
    case Axis::eta: return "eta";
    case Axis::beta: return "beta";
    case Axis::A: return "A";
    case Axis::r: return "r";
    case Axis::kappa: return "kappa";
    case Axis::omega: return "omega";
  }
  return "?";
}

inline LaserParams with_axis(LaserParams p, Axis a, double x) {
  switch (a) {
    case Axis::eta: p.eta = x; break;
    case Axis::beta: p.beta = x; break;
    case Axis::A: p.A = x; break;
    case Axis::r: p.r = x; break;
    case Axis::kappa: p.kappa = x; break;
    case Axis::omega: break;
  }
  return p;
}

struct GridSpec {
  std::optional<double> min;
  std::optional<double> max;
  std::optional<long long> points;
};

inline std::pair<double, double> default_range(Axis a) {
  switch (a) {
    case Axis::eta: return {0.0, 1.0};
    case Axis::beta: return {0.0, 3.0};
    case Axis::A: return {0.0, 100.0};
    case Axis::r: return {0.0, 1.5};
    case Axis::kappa: return {0.1, 2.0};
    case Axis::omega: return {0.0, 50.0};
  }
  return {0.0, 1.0};
}

inline constexpr long long kDefaultGridPoints = 101;

// Evenly spaced grid. One point is allowed and yields grid-min.
inline std::vector<double> make_grid(const GridSpec& g, Axis axis) {
  const auto [dmin, dmax] = default_range(axis);
  const double lo = g.min.value_or(dmin);
  const double hi = g.max.value_or(dmax);
  const long long n = g.points.value_or(kDefaultGridPoints);
  if (n <= 0) throw UsageError("grid must contain at least one point");
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw UsageError("grid bounds must be finite");
  if (n > 1 && !(hi > lo)) throw UsageError("grid-max must exceed grid-min");
  std::vector<double> out(static_cast<std::size_t>(n));
  for (long long i = 0; i < n; ++i)
    out[static_cast<std::size_t>(i)] =
        n == 1 ? lo : (i == n - 1 ? hi : lo + (hi - lo) * static_cast<double>(i) /
                                               static_cast<double>(n - 1));
  return out;
}

// Validates the swept parameter at every grid point before any work starts.
inline void validate_sweep(const LaserParams& base, Axis axis, const std::vector<double>& grid) {
  try {
    base.validate();
    for (double x : grid) with_axis(base, axis, x).validate();
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  }
}

struct SweepOptions {
  LaserParams params;
  std::string axis = "eta";
  GridSpec grid;
  unsigned workers = 1;
};

// Runs row(i) for every grid index on the worker pool. Exceptions are
// collected per row and the first one in grid order is rethrown.
template <class RowFn>
std::vector<std::vector<double>> sweep_rows(std::size_t n, unsigned workers, RowFn&& row) {
  std::vector<std::vector<double>> rows(n);
  std::vector<std::exception_ptr> errors(n);
  parallel_for(n, workers, [&](std::size_t i) {
    try {
      rows[i] = row(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return rows;
}

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct CommandResult {
  CurveTable table;
  RunManifest manifest;
};

inline RunManifest base_manifest(const std::string& command, const LaserParams& p,
                                 const std::string& axis, const std::vector<double>& grid) {
  RunManifest m;
  m.command = command;
  m.params = p;
  m.axis = axis;
  m.grid = grid;
  return m;
}

// ---------------------------------------------------------------- variance

inline CommandResult run_variance(const SweepOptions& opt) {
  const Axis axis = parse_axis(opt.axis);
  if (axis == Axis::omega || axis == Axis::kappa)
    throw UsageError("variance axis must be one of eta, beta, A, r");
  const auto grid = make_grid(opt.grid, axis);
  validate_sweep(opt.params, axis, grid);

  CommandResult out;
  out.table.columns = {axis_name(axis), "unstable", "lambda_minus", "lambda_plus",
                       "var_plus", "var_minus"};
  out.table.rows = sweep_rows(grid.size(), opt.workers, [&](std::size_t i) {
    const auto c = gain_coefficients(with_axis(opt.params, axis, grid[i]));
    if (!stability(c).stable)
      return std::vector<double>{grid[i], 1.0, c.lambda_minus, c.lambda_plus, kNaN, kNaN};
    const auto v = quadrature_variance_ss(c);
    return std::vector<double>{grid[i], 0.0, c.lambda_minus, c.lambda_plus, v.plus, v.minus};
  });
  out.manifest = base_manifest("variance", opt.params, axis_name(axis), grid);
  out.manifest.methods = {"closed-form"};
  return out;
}

// ---------------------------------------------------------------- spectrum

struct SpectrumOptions {
  SweepOptions sweep;
  double omega = 0.0;  // fixed frequency for parameter axes
  bool monte_carlo = false;
  std::size_t trajectories = 2000;
  std::uint64_t seed = 12345;
};

inline CommandResult run_spectrum(const SpectrumOptions& opt) {
  const Axis axis = parse_axis(opt.sweep.axis);
  const auto grid = make_grid(opt.sweep.grid, axis);
  validate_sweep(opt.sweep.params, axis, grid);
  if (!std::isfinite(opt.omega)) throw UsageError("omega must be finite");
  if (opt.monte_carlo && opt.trajectories < 2)
    throw UsageError("Monte Carlo needs at least 2 trajectories");

  const bool half_inversion = opt.sweep.params.eta == 0.0 && axis != Axis::eta;

  CommandResult out;
  auto& cols = out.table.columns;
  cols = {axis_name(axis), "unstable", "lambda_minus", "lambda_plus",
          "s_plus_closed", "s_minus_closed", "s_plus_quad", "s_minus_quad"};
  if (half_inversion) cols.insert(cols.end(), {"s_plus_eta0", "s_minus_eta0"});
  if (opt.monte_carlo)
    cols.insert(cols.end(), {"s_plus_mc", "s_plus_mc_se", "s_minus_mc", "s_minus_mc_se"});

  auto mc_spectrum = [&](const Coefficients& c, std::span<const double> omegas) {
    auto ens = make_ensemble(opt.trajectories, opt.seed, opt.sweep.workers);
    const auto noise = build_noise_model(c);
    burn_in(ens, c, noise);
    return lag_correlation_spectrum(ens, c, omegas).spectrum;
  };

  // On the omega axis every row shares one parameter point, so a single
  // ensemble serves the whole grid.
  std::optional<SpectrumCurve> shared_mc;
  if (opt.monte_carlo && axis == Axis::omega) {
    const auto c = gain_coefficients(opt.sweep.params);
    if (stability(c).stable) shared_mc = mc_spectrum(c, grid);
  }

  // Sweep points run in parallel, so the per-point ensembles stay serial.
  const unsigned row_workers = opt.monte_carlo && axis != Axis::omega ? 1U : opt.sweep.workers;
  out.table.rows = sweep_rows(grid.size(), opt.sweep.workers, [&](std::size_t i) {
    const auto prm = with_axis(opt.sweep.params, axis, grid[i]);
    const double w = axis == Axis::omega ? grid[i] : opt.omega;
    const auto c = gain_coefficients(prm);
    std::vector<double> row{grid[i], 0.0, c.lambda_minus, c.lambda_plus};
    if (!stability(c).stable) {
      row[1] = 1.0;
      row.resize(cols.size(), kNaN);
      return row;
    }
    double sp = 0, sm = 0;
    spectrum_point(c, w, sp, sm);
    const double wgrid[1] = {w};
    const auto quad = spectrum_by_quadrature(c, wgrid);
    row.insert(row.end(), {sp, sm, quad.s_plus[0], quad.s_minus[0]});
    if (half_inversion) {
      const auto s0 = spectrum_half_inversion(prm, w);
      row.insert(row.end(), {s0.plus, s0.minus});
    }
    if (opt.monte_carlo) {
      if (shared_mc) {
        row.insert(row.end(), {shared_mc->s_plus[i], shared_mc->se_plus[i],
                               shared_mc->s_minus[i], shared_mc->se_minus[i]});
      } else {
        auto ens = make_ensemble(opt.trajectories, opt.seed, row_workers);
        const auto noise = build_noise_model(c);
        burn_in(ens, c, noise);
        const auto mc = lag_correlation_spectrum(ens, c, wgrid).spectrum;
        row.insert(row.end(), {mc.s_plus[0], mc.se_plus[0], mc.s_minus[0], mc.se_minus[0]});
      }
    }
    return row;
  });

  out.manifest = base_manifest("spectrum", opt.sweep.params, axis_name(axis), grid);
  out.manifest.methods = {"closed-form", "quadrature"};
  if (half_inversion) out.manifest.methods.push_back("closed-form-eta0");
  out.manifest.settings["omega"] = axis == Axis::omega ? nlohmann::json() : nlohmann::json(opt.omega);
  if (opt.monte_carlo) {
    out.manifest.methods.push_back("monte-carlo");
    out.manifest.master_seed = opt.seed;
    out.manifest.trajectories = opt.trajectories;
  }
  return out;
}

// ----------------------------------------------------------------- photons

struct PhotonOptions {
  SweepOptions sweep;
  bool monte_carlo = false;
  std::size_t trajectories = 20000;
  std::uint64_t seed = 12345;
};

inline CommandResult run_photons(const PhotonOptions& opt) {
  const Axis axis = parse_axis(opt.sweep.axis);
  if (axis == Axis::omega) throw UsageError("photons cannot sweep omega");
  const auto grid = make_grid(opt.sweep.grid, axis);
  validate_sweep(opt.sweep.params, axis, grid);
  if (opt.monte_carlo && opt.trajectories < 2)
    throw UsageError("Monte Carlo needs at least 2 trajectories");

  CommandResult out;
  auto& cols = out.table.columns;
  cols = {axis_name(axis), "unstable", "lambda_minus", "lambda_plus",
          "mean_n", "variance_n", "anomalous", "variance_unsquared"};
  if (opt.monte_carlo)
    cols.insert(cols.end(), {"mean_n_mc", "mean_n_mc_se", "variance_n_mc", "variance_n_mc_se"});

  const unsigned row_workers = opt.monte_carlo ? 1U : opt.sweep.workers;
  out.table.rows = sweep_rows(grid.size(), opt.sweep.workers, [&](std::size_t i) {
    const auto c = gain_coefficients(with_axis(opt.sweep.params, axis, grid[i]));
    std::vector<double> row{grid[i], 0.0, c.lambda_minus, c.lambda_plus};
    if (!stability(c).stable) {
      row[1] = 1.0;
      row.resize(cols.size(), kNaN);
      return row;
    }
    const auto d = photon_variance_diagnostic(c);
    const auto st = photon_statistics_ss(c);
    row.insert(row.end(), {st.mean_n, st.variance_n, st.anomalous, d.variance_unsquared});
    if (opt.monte_carlo) {
      auto ens = make_ensemble(opt.trajectories, opt.seed, row_workers);
      const auto noise = build_noise_model(c);
      burn_in(ens, c, noise);
      const auto est = estimate_observables(ens);
      row.insert(row.end(), {est.mean_n.value, est.mean_n.std_error, est.variance_n.value,
                             est.variance_n.std_error});
    }
    return row;
  });

  out.manifest = base_manifest("photons", opt.sweep.params, axis_name(axis), grid);
  out.manifest.methods = {"closed-form"};
  if (opt.monte_carlo) {
    out.manifest.methods.push_back("monte-carlo");
    out.manifest.master_seed = opt.seed;
    out.manifest.trajectories = opt.trajectories;
  }
  return out;
}

// ---------------------------------------------------------------- simulate

struct SimulateOptions {
  LaserParams params;
  double dt = 0.0;     // 0 selects t_max / 50
  double t_max = 0.0;  // 0 selects 10 / min(|lambda|, kappa)
  std::size_t trajectories = 20000;
  std::uint64_t seed = 12345;
  unsigned workers = 1;
};

inline std::vector<double> simulation_times(const SimulateOptions& opt, const Coefficients& c) {
  double t_max = opt.t_max;
  if (t_max == 0.0) {
    double slow = std::min(std::abs(c.lambda_minus), std::abs(c.lambda_plus));
    if (!(slow > 0)) slow = c.kappa;
    t_max = 10.0 / slow;
  }
  if (!(t_max > 0) || !std::isfinite(t_max)) throw UsageError("t-max must be > 0");
  const double dt = opt.dt == 0.0 ? t_max / 50.0 : opt.dt;
  if (!(dt > 0) || !std::isfinite(dt)) throw UsageError("dt must be > 0");
  const double ratio = t_max / dt;
  const double steps_real = std::round(ratio);
  if (steps_real < 1 || steps_real > 1e7) throw UsageError("t-max / dt must lie in [1, 1e7]");
  if (std::abs(ratio - steps_real) > 1e-6 * steps_real)
    throw UsageError("t-max must be a whole multiple of dt");
  const auto steps = static_cast<std::size_t>(steps_real);
  std::vector<double> t(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) t[k] = static_cast<double>(k) * dt;
  return t;
}

inline CommandResult run_simulate(const SimulateOptions& opt) {
  try {
    opt.params.validate();
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  }
  if (opt.trajectories < 2) throw UsageError("simulate needs at least 2 trajectories");
  const auto c = gain_coefficients(opt.params);
  const auto times = simulation_times(opt, c);

  CommandResult out;
  out.table.columns = {"t",
                       "var_plus", "var_minus", "mean_n", "anomalous", "variance_n",
                       "var_plus_ode", "var_minus_ode", "mean_n_ode", "anomalous_ode",
                       "variance_n_ode",
                       "var_plus_mc", "var_plus_mc_se", "var_minus_mc", "var_minus_mc_se",
                       "mean_n_mc", "mean_n_mc_se", "anomalous_mc", "anomalous_mc_se",
                       "variance_n_mc", "variance_n_mc_se"};

  const auto ode = integrate_moments(MomentState{}, c, times);
  auto ens = make_ensemble(opt.trajectories, opt.seed, opt.workers);
  const auto noise = build_noise_model(c);

  for (std::size_t k = 0; k < times.size(); ++k) {
    if (k > 0) step_ensemble(ens, c, noise, times[k] - times[k - 1]);
    const double t = times[k];
    const auto va = quadrature_variance_transient(c, t);
    const auto vo = quadrature_from_moments(ode[k]);
    const double no = ode[k].mean_number;
    const double xo = ode[k].mean_alpha_sq.real();
    const double var_o = no * no + no + std::norm(ode[k].mean_alpha_sq);
    const auto est = estimate_observables(ens);
    out.table.rows.push_back({t,
                              va.plus, va.minus, mean_photon_transient(c, t),
                              anomalous_transient(c, t), photon_variance_transient(c, t),
                              vo.plus, vo.minus, no, xo, var_o,
                              est.quad_plus.value, est.quad_plus.std_error,
                              est.quad_minus.value, est.quad_minus.std_error,
                              est.mean_n.value, est.mean_n.std_error,
                              est.anomalous.value, est.anomalous.std_error,
                              est.variance_n.value, est.variance_n.std_error});
  }

  out.manifest = base_manifest("simulate", opt.params, "t", times);
  out.manifest.methods = {"closed-form", "ode", "monte-carlo"};
  out.manifest.master_seed = opt.seed;
  out.manifest.trajectories = opt.trajectories;
  return out;
}

// ------------------------------------------------------------------- check

struct CheckOptions {
  double kappa = 0.8;
  std::vector<double> eta = {-1.0, -0.5, 0.0, 0.5, 1.0};
  std::vector<double> beta = {0.0, 0.5, 1.0, 2.0};
  std::vector<double> A = {0.0, 5.0, 25.0, 50.0};
  std::vector<double> r = {0.0, 0.5, 1.0};
  std::size_t mc_points = 4;
  std::size_t trajectories = 4000;
  std::uint64_t seed = 12345;
  unsigned workers = 1;
};

struct CheckRow {
  std::string name;
  std::string point;
  double value = 0.0;
  double reference = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct CheckReport {
  std::vector<CheckRow> rows;
  std::vector<std::string> unstable;  // one line per excluded point
  std::size_t points = 0;
  bool passed() const {
    for (const auto& r : rows)
      if (!r.passed) return false;
    return true;
  }
};

inline std::string describe_point(const LaserParams& p) {
  std::ostringstream os;
  os << "A=" << p.A << " kappa=" << p.kappa << " r=" << p.r << " eta=" << p.eta
     << " beta=" << p.beta;
  return os.str();
}

inline double relative_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

namespace detail {

// Per-point deterministic checks; the report rows are appended to `rows`.
inline void check_point(const LaserParams& p, std::vector<CheckRow>& rows) {
  const auto c = gain_coefficients(p);
  const std::string pt = describe_point(p);
  auto close = [&](const std::string& name, double value, double ref, double rtol) {
    rows.push_back({name, pt, value, ref, rtol, relative_error(value, ref) <= rtol});
  };

  const auto ss = quadrature_variance_ss(c);
  const auto general = variance_from_params(p);
  close("variance general form (+)", general.plus, ss.plus, 1e-12);
  close("variance general form (-)", general.minus, ss.minus, 1e-12);
  if (p.beta == 0.0) {
    const auto red = variance_without_drive(p);
    close("reduction beta=0 (+)", red.plus, general.plus, 1e-12);
    close("reduction beta=0 (-)", red.minus, general.minus, 1e-12);
  }
  if (p.eta == -1.0) {
    const auto red = variance_upper_level_injection(p);
    close("reduction eta=-1 (+)", red.plus, general.plus, 1e-12);
    close("reduction eta=-1 (-)", red.minus, general.minus, 1e-12);
  }
  if (p.eta == 0.0) {
    const auto red = variance_half_inversion(p);
    close("reduction eta=0 (+)", red.plus, general.plus, 1e-12);
    close("reduction eta=0 (-)", red.minus, general.minus, 1e-12);
  }
  const double product = ss.plus * ss.minus;
  rows.push_back({"uncertainty product >= 1", pt, product, 1.0, 1e-12,
                  product >= 1.0 - 1e-12});

  const auto st = photon_statistics_ss(c);
  const MomentState fixed{{0.0, 0.0}, {st.anomalous, 0.0}, st.mean_n};
  const auto d = moment_derivative(fixed, c);
  const double residual = std::max(std::abs(d.mean_alpha_sq), std::abs(d.mean_number));
  const double scale = std::max({1.0, std::abs(c.p), std::abs(c.v), st.mean_n * std::abs(c.C)});
  rows.push_back({"fixed-point residual", pt, residual, 0.0, 1e-12 * scale,
                  residual <= 1e-12 * scale});

  const auto diag = photon_variance_diagnostic(c);
  close("bracket equals <alpha^2>", diag.bracket, diag.anomalous, 1e-12);
  rows.push_back({"variance_n >= mean_n", pt, st.variance_n, st.mean_n, 0.0,
                  st.variance_n >= st.mean_n});

  const double omegas[] = {0.0, 1.0, 5.0, 20.0};
  const auto quad = spectrum_by_quadrature(c, omegas);
  for (std::size_t i = 0; i < std::size(omegas); ++i) {
    double sp = 0, sm = 0;
    spectrum_point(c, omegas[i], sp, sm);
    const std::string w = " w=" + format_number(omegas[i]);
    close("spectrum quadrature (+)" + w, quad.s_plus[i], sp, 1e-8);
    close("spectrum quadrature (-)" + w, quad.s_minus[i], sm, 1e-8);
    if (p.eta == 0.0) {
      const auto s0 = spectrum_half_inversion(p, omegas[i]);
      close("spectrum eta=0 form (+)" + w, s0.plus, sp, 1e-12);
      close("spectrum eta=0 form (-)" + w, s0.minus, sm, 1e-12);
    }
  }

  if (p.A == 0.0) {
    const double e = std::exp(2.0 * p.r);
    close("passthrough variance (+)", ss.plus, e, 1e-12);
    close("passthrough variance (-)", ss.minus, 1.0 / e, 1e-12);
  }
}

inline void check_dynamics(const LaserParams& p, const CheckOptions& opt,
                           std::vector<CheckRow>& rows) {
  const auto c = gain_coefficients(p);
  const std::string pt = describe_point(p);
  const double t_end = 10.0 / std::min(c.lambda_minus, c.lambda_plus);
  std::vector<double> times(21);
  for (std::size_t k = 0; k < times.size(); ++k)
    times[k] = t_end * static_cast<double>(k) / 20.0;
  const auto ode = integrate_moments(MomentState{}, c, times);
  double worst = 0.0;
  for (std::size_t k = 1; k < times.size(); ++k) {
    const auto va = quadrature_variance_transient(c, times[k]);
    const auto vo = quadrature_from_moments(ode[k]);
    worst = std::max({worst, relative_error(va.plus, vo.plus),
                      relative_error(va.minus, vo.minus),
                      relative_error(mean_photon_transient(c, times[k]), ode[k].mean_number),
                      relative_error(anomalous_transient(c, times[k]),
                                     ode[k].mean_alpha_sq.real())});
  }
  rows.push_back({"ODE vs analytic (max rel err)", pt, worst, 0.0, 1e-6, worst <= 1e-6});

  auto ens = make_ensemble(opt.trajectories, opt.seed, opt.workers);
  const auto noise = build_noise_model(c);
  burn_in(ens, c, noise);
  const auto est = estimate_observables(ens);
  const auto ss = quadrature_variance_ss(c);
  const auto st = photon_statistics_ss(c);
  auto gate = [&](const std::string& name, const EnsembleEstimate& e, double ref) {
    const double z = e.z_score(ref);
    rows.push_back({name + " |z|", pt, std::abs(z), ref, 3.0, std::abs(z) <= 3.0});
  };
  gate("MC var_minus", est.quad_minus, ss.minus);
  gate("MC var_plus", est.quad_plus, ss.plus);
  gate("MC mean_n", est.mean_n, st.mean_n);
  gate("MC variance_n", est.variance_n, st.variance_n);
}

}  // namespace detail

inline CheckReport run_check(const CheckOptions& opt) {
  if (opt.eta.empty() || opt.beta.empty() || opt.A.empty() || opt.r.empty())
    throw UsageError("check grid lists must not be empty");
  std::vector<LaserParams> points;
  for (double A : opt.A)
    for (double r : opt.r)
      for (double eta : opt.eta)
        for (double beta : opt.beta) {
          LaserParams p{A, opt.kappa, r, eta, beta};
          try {
            p.validate();
          } catch (const ParameterError& e) {
            throw UsageError(e.what());
          }
          points.push_back(p);
        }
  if (opt.trajectories < 2) throw UsageError("check needs at least 2 trajectories");

  CheckReport report;
  report.points = points.size();
  std::vector<LaserParams> stable;
  for (const auto& p : points) {
    const auto c = gain_coefficients(p);
    if (stability(c).stable) {
      stable.push_back(p);
    } else {
      report.unstable.push_back(describe_point(p) + ": " +
                                NoSteadyStateError(c.lambda_minus, c.lambda_plus).what());
    }
  }

  std::vector<std::vector<CheckRow>> per_point(stable.size());
  std::vector<std::exception_ptr> errors(stable.size());
  parallel_for(stable.size(), opt.workers, [&](std::size_t i) {
    try {
      detail::check_point(stable[i], per_point[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (auto& rows : per_point)
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());

  // Dynamics and Monte Carlo gates on the first stable points with gain.
  std::size_t used = 0;
  for (const auto& p : stable) {
    if (used >= opt.mc_points) break;
    if (p.A == 0.0 && stable.size() > opt.mc_points) continue;
    detail::check_dynamics(p, opt, report.rows);
    ++used;
  }
  return report;
}

inline void print_check_report(std::ostream& os, const CheckReport& rep, bool verbose) {
  std::size_t failed = 0;
  for (const auto& r : rep.rows) failed += r.passed ? 0 : 1;
  os << "check: " << rep.points << " points, " << rep.unstable.size() << " unstable, "
     << rep.rows.size() << " checks, " << failed << " failed\n";
  for (const auto& u : rep.unstable) os << "UNSTABLE  " << u << '\n';
  for (const auto& r : rep.rows) {
    if (!verbose && r.passed) continue;
    os << (r.passed ? "PASS  " : "FAIL  ") << r.name << "  [" << r.point << "]  value="
       << format_number(r.value) << " ref=" << format_number(r.reference)
       << " tol=" << format_number(r.tolerance) << '\n';
  }
}

// ------------------------------------------------------------------ output

inline std::vector<std::string> header_block(const RunManifest& m, const std::string& manifest_file) {
  std::ostringstream params;
  params << "params A=" << format_number(m.params.A) << " kappa=" << format_number(m.params.kappa)
         << " r=" << format_number(m.params.r) << " eta=" << format_number(m.params.eta)
         << " beta=" << format_number(m.params.beta);
  std::string methods;
  for (const auto& s : m.methods) methods += (methods.empty() ? "" : ",") + s;
  std::vector<std::string> out{"trilevel " + m.tool_version + " " + m.command,
                               "manifest " + manifest_hash(m)};
  if (!manifest_file.empty()) out.push_back("manifest_file " + manifest_file);
  out.push_back(params.str());
  out.push_back("axis " + m.axis);
  out.push_back("methods " + methods);
  if (m.master_seed) out.push_back("seed " + std::to_string(*m.master_seed));
  if (m.trajectories) out.push_back("trajectories " + std::to_string(*m.trajectories));
  return out;
}

// Writes the CSV atomically (temp file and rename) and then appends the run
// to <out>.manifest.jsonl. An empty path writes the CSV to `stdout_stream`.
inline void emit(CommandResult& result, const std::string& path, std::ostream& stdout_stream) {
  namespace fs = std::filesystem;
  const std::string manifest_file = path.empty() ? "" : path + ".manifest.jsonl";
  result.table.comments = header_block(result.manifest, manifest_file);
  if (path.empty()) {
    write_csv(stdout_stream, result.table);
    return;
  }
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  try {
    {
      std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
      if (!os) throw std::runtime_error("cannot open " + tmp);
      write_csv(os, result.table);
      os.flush();
      if (!os) throw std::runtime_error("write failed for " + tmp);
    }
    fs::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
  result.manifest.finished_at = utc_timestamp();
  append_manifest(manifest_file, result.manifest);
}

}  // namespace trilevel::cli
