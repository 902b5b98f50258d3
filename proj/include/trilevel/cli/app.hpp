#pragma once

#include <fstream>
#include <iostream>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "trilevel/cli/commands.hpp"

namespace trilevel::cli {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2 };

namespace detail {

struct CommonFlags {
  std::string out;
  unsigned threads = 0;  // 0 selects the hardware concurrency

  unsigned workers() const { return threads == 0 ? default_workers() : threads; }
};

inline void add_params(CLI::App* sub, LaserParams& p) {
  sub->add_option("--A", p.A, "linear gain coefficient")->capture_default_str();
  sub->add_option("--kappa", p.kappa, "cavity damping rate")->capture_default_str();
  sub->add_option("--r", p.r, "reservoir squeeze parameter")->capture_default_str();
  sub->add_option("--eta", p.eta, "population-inversion parameter")->capture_default_str();
  sub->add_option("--beta", p.beta, "drive Rabi frequency over atomic decay")
      ->capture_default_str();
}

inline void add_sweep(CLI::App* sub, SweepOptions& s) {
  add_params(sub, s.params);
  sub->add_option("--axis", s.axis, "swept parameter")->capture_default_str();
  sub->add_option("--grid-min", s.grid.min, "first grid value");
  sub->add_option("--grid-max", s.grid.max, "last grid value");
  sub->add_option("--grid-points", s.grid.points, "number of grid points");
}

inline void add_output(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--out", f.out, "output CSV path (stdout if omitted)");
  sub->add_option("--threads", f.threads, "worker threads (0 = all cores)")
      ->capture_default_str();
}

}  // namespace detail

// Parses arguments, runs one subcommand and returns the process exit code.
inline int run_app(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Squeezing and photon statistics of a coherently driven three-level laser"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.set_config("--config", "", "TOML config file; flags override its values");
  app.require_subcommand(1, 1);
  app.fallthrough();

  detail::CommonFlags flags;

  SweepOptions variance;
  variance.params = {25.0, 0.8, 0.0, 0.0, 0.0};
  variance.axis = "eta";
  auto* sub_var = app.add_subcommand("variance", "steady-state quadrature variances");
  detail::add_sweep(sub_var, variance);
  detail::add_output(sub_var, flags);

  SpectrumOptions spectrum;
  spectrum.sweep.params = {50.0, 0.8, 0.0, 0.0, 0.0};
  spectrum.sweep.axis = "beta";
  auto* sub_spec = app.add_subcommand("spectrum", "output squeezing spectrum");
  detail::add_sweep(sub_spec, spectrum.sweep);
  detail::add_output(sub_spec, flags);
  sub_spec->add_option("--omega", spectrum.omega, "frequency for parameter axes")
      ->capture_default_str();
  sub_spec->add_flag("--mc", spectrum.monte_carlo, "add Monte Carlo columns");
  sub_spec->add_option("--seed", spectrum.seed, "master seed")->capture_default_str();
  sub_spec->add_option("--trajectories", spectrum.trajectories, "Monte Carlo trajectories")
      ->capture_default_str();

  PhotonOptions photons;
  photons.sweep.params = {75.0, 0.8, 0.0, 0.0, 0.0};
  photons.sweep.axis = "beta";
  auto* sub_ph = app.add_subcommand("photons", "steady-state photon statistics");
  detail::add_sweep(sub_ph, photons.sweep);
  detail::add_output(sub_ph, flags);
  sub_ph->add_flag("--mc", photons.monte_carlo, "add Monte Carlo columns");
  sub_ph->add_option("--seed", photons.seed, "master seed")->capture_default_str();
  sub_ph->add_option("--trajectories", photons.trajectories, "Monte Carlo trajectories")
      ->capture_default_str();

  SimulateOptions simulate;
  simulate.params = {25.0, 0.8, 0.0, 0.5, 0.0};
  auto* sub_sim = app.add_subcommand("simulate", "analytic, ODE and Monte Carlo time series");
  detail::add_params(sub_sim, simulate.params);
  detail::add_output(sub_sim, flags);
  sub_sim->add_option("--dt", simulate.dt, "output and step interval (0 = t-max/50)")
      ->capture_default_str();
  sub_sim->add_option("--t-max", simulate.t_max, "final time (0 = 10/min|lambda|)")
      ->capture_default_str();
  sub_sim->add_option("--seed", simulate.seed, "master seed")->capture_default_str();
  sub_sim->add_option("--trajectories", simulate.trajectories, "Monte Carlo trajectories")
      ->capture_default_str();

  CheckOptions check;
  bool verbose = false;
  auto* sub_chk = app.add_subcommand("check", "run the invariant suite over a parameter grid");
  sub_chk->add_option("--A", check.A, "comma list of A values")->delimiter(',');
  sub_chk->add_option("--kappa", check.kappa, "cavity damping rate")->capture_default_str();
  sub_chk->add_option("--r", check.r, "comma list of r values")->delimiter(',');
  sub_chk->add_option("--eta", check.eta, "comma list of eta values")->delimiter(',');
  sub_chk->add_option("--beta", check.beta, "comma list of beta values")->delimiter(',');
  sub_chk->add_option("--seed", check.seed, "master seed")->capture_default_str();
  sub_chk->add_option("--trajectories", check.trajectories, "Monte Carlo trajectories")
      ->capture_default_str();
  sub_chk->add_option("--mc-points", check.mc_points, "points with dynamics and MC gates")
      ->capture_default_str();
  sub_chk->add_flag("--verbose", verbose, "print passing checks too");
  detail::add_output(sub_chk, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  const unsigned workers = flags.workers();
  try {
    if (*sub_chk) {
      check.workers = workers;
      const auto rep = run_check(check);
      if (flags.out.empty()) {
        print_check_report(out, rep, verbose);
      } else {
        std::ofstream os(flags.out);
        if (!os) throw std::runtime_error("cannot open " + flags.out);
        print_check_report(os, rep, verbose);
        print_check_report(out, rep, false);
      }
      return rep.passed() ? kExitOk : kExitFailure;
    }

    CommandResult result;
    const std::string started = utc_timestamp();
    if (*sub_var) {
      variance.workers = workers;
      result = run_variance(variance);
    } else if (*sub_spec) {
      spectrum.sweep.workers = workers;
      result = run_spectrum(spectrum);
    } else if (*sub_ph) {
      photons.sweep.workers = workers;
      result = run_photons(photons);
    } else {
      simulate.workers = workers;
      result = run_simulate(simulate);
    }
    result.manifest.started_at = started;
    result.manifest.workers = workers;
    emit(result, flags.out, out);
    return kExitOk;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace trilevel::cli
