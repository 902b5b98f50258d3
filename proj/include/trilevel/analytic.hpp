#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string_view>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "trilevel/model.hpp"

namespace trilevel {

struct QuadratureVariances {
  double plus = 1.0;   // variance of a_+ = a^dag + a
  double minus = 1.0;  // variance of a_- = i(a^dag - a)
};

enum class SpectrumMethod { closed_form, quadrature, monte_carlo };

inline std::string_view to_string(SpectrumMethod m) {
  switch (m) {
    case SpectrumMethod::closed_form: return "closed-form";
    case SpectrumMethod::quadrature: return "quadrature";
    case SpectrumMethod::monte_carlo: return "monte-carlo";
  }
  return "unknown";
}

// Output squeezing spectrum sampled on a frequency grid. Standard errors are
// only filled for Monte Carlo curves.
struct SpectrumCurve {
  std::vector<double> omega;
  std::vector<double> s_plus;
  std::vector<double> s_minus;
  std::vector<double> se_plus;
  std::vector<double> se_minus;
  SpectrumMethod method = SpectrumMethod::closed_form;
};

struct PhotonStatistics {
  double mean_n = 0.0;
  double anomalous = 0.0;   // <alpha^2> at steady state, real
  double variance_n = 0.0;  // Gaussian factorization, bracket squared
};

// Side-by-side values of the steady-state photon-number variance. The
// bracket n - (p+v)/lambda_+ is algebraically the anomalous moment; the
// Gaussian factorization squares it, the unsquared sum is kept for reporting.
struct PhotonVarianceDiagnostic {
  double bracket = 0.0;
  double anomalous = 0.0;
  double variance_gaussian = 0.0;
  double variance_unsquared = 0.0;
};

class QuadratureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct QuadratureConfig {
  double horizon = 0.0;  // 0 selects horizon_decays / min(lambda)
  double horizon_decays = 40.0;
  double rel_tol = 1e-10;  // error budget relative to the integrand norm
};

namespace detail {

// (1 - exp(-2 lambda t)) / lambda with the lambda -> 0 limit 2t.
inline double relaxation(double lambda, double t) {
  if (lambda == 0.0) return 2.0 * t;
  return -std::expm1(-2.0 * lambda * t) / lambda;
}

inline double half_inversion_radicand(double eta) {
  return std::sqrt(std::max(0.0, (1.0 - eta) * (1.0 + eta)));
}

}  // namespace detail

// Quadrature variances at time t for a cavity starting in vacuum. Valid for
// any decay rates, so unstable parameters may be evaluated at finite t.
inline QuadratureVariances quadrature_variance_transient(const Coefficients& c,
                                                         double t) {
  if (!(t >= 0)) throw ParameterError("time must be >= 0");
  const double sq_plus = 2.0 * (c.p - c.v) * detail::relaxation(c.lambda_minus, t);
  const double sq_minus = -2.0 * (c.p + c.v) * detail::relaxation(c.lambda_plus, t);
  return {1.0 + sq_plus, 1.0 - sq_minus};
}

inline QuadratureVariances quadrature_variance_ss(const Coefficients& c) {
  require_stable(c);
  return {(c.lambda_minus + 2.0 * c.p - 2.0 * c.v) / c.lambda_minus,
          (c.lambda_plus + 2.0 * c.p + 2.0 * c.v) / c.lambda_plus};
}

// Steady-state variances written directly in the physical parameters. An
// independent route to quadrature_variance_ss; the denominators are 4B
// times the decay rates.
inline QuadratureVariances variance_from_params(const LaserParams& prm) {
  prm.validate();
  const double b = prm.beta, b2 = b * b, eta = prm.eta, A = prm.A;
  const double s = detail::half_inversion_radicand(eta);
  const double kb = 2.0 * prm.kappa * (1.0 + b2) * (1.0 + b2 / 4.0);
  const double num_p = kb * std::exp(2.0 * prm.r) +
                       A * (b * (2.0 * b - 3.0 * eta) - s * (b2 - 2.0) + 2.0);
  const double num_m = kb * std::exp(-2.0 * prm.r) +
                       A * (b * (2.0 * b + 3.0 * eta) + s * (b2 - 2.0) + 2.0);
  const double den_p = kb + A * (eta * (2.0 - b2) - b * (1.0 + b2) + 3.0 * b * s);
  const double den_m = kb + A * (eta * (2.0 - b2) + b * (1.0 + b2) + 3.0 * b * s);
  if (!(den_p > 0 && den_m > 0)) {
    const double fourB = 4.0 * (1.0 + b2) * (1.0 + b2 / 4.0);
    throw NoSteadyStateError(den_p / fourB, den_m / fourB);
  }
  return {num_p / den_p, num_m / den_m};
}

// No coherent drive (beta = 0).
inline QuadratureVariances variance_without_drive(const LaserParams& prm) {
  prm.validate();
  if (prm.beta != 0.0) throw ParameterError("variance_without_drive needs beta = 0");
  const double s = detail::half_inversion_radicand(prm.eta);
  const double den = prm.eta * prm.A + prm.kappa;
  if (!(den > 0)) throw NoSteadyStateError(den / 2.0, den / 2.0);
  return {(prm.kappa * std::exp(2.0 * prm.r) + prm.A * (1.0 + s)) / den,
          (prm.kappa * std::exp(-2.0 * prm.r) + prm.A * (1.0 - s)) / den};
}

// All atoms injected in the upper level (eta = -1).
inline QuadratureVariances variance_upper_level_injection(const LaserParams& prm) {
  prm.validate();
  if (prm.eta != -1.0)
    throw ParameterError("variance_upper_level_injection needs eta = -1");
  const double b = prm.beta, b2 = b * b, A = prm.A;
  const double kb = 2.0 * prm.kappa * (1.0 + b2) * (1.0 + b2 / 4.0);
  const double den_p = kb + A * ((b2 - 2.0) - b * (1.0 + b2));
  const double den_m = kb + A * ((b2 - 2.0) + b * (1.0 + b2));
  if (!(den_p > 0 && den_m > 0)) {
    const double fourB = 2.0 * kb / prm.kappa;
    throw NoSteadyStateError(den_p / fourB, den_m / fourB);
  }
  return {(kb * std::exp(2.0 * prm.r) + A * (b * (2.0 * b + 3.0) + 2.0)) / den_p,
          (kb * std::exp(-2.0 * prm.r) + A * (b * (2.0 * b - 3.0) + 2.0)) / den_m};
}

// Equal upper and lower populations (eta = 0). The a_+ numerator carries
// A(beta^2 + 4), which is what the general expression gives at eta = 0.
inline QuadratureVariances variance_half_inversion(const LaserParams& prm) {
  prm.validate();
  if (prm.eta != 0.0) throw ParameterError("variance_half_inversion needs eta = 0");
  const double b = prm.beta, b2 = b * b, A = prm.A;
  const double kb = 2.0 * prm.kappa * (1.0 + b2) * (1.0 + b2 / 4.0);
  const double den_p = kb + A * b * (2.0 - b2);
  const double den_m = kb + A * b * (4.0 + b2);
  if (!(den_p > 0 && den_m > 0)) {
    const double fourB = 2.0 * kb / prm.kappa;
    throw NoSteadyStateError(den_p / fourB, den_m / fourB);
  }
  return {(kb * std::exp(2.0 * prm.r) + A * (b2 + 4.0)) / den_p,
          (kb * std::exp(-2.0 * prm.r) + 3.0 * A * b2) / den_m};
}

// Output spectrum at one frequency: 1 + Lorentzian + 2N +- 2M.
inline void spectrum_point(const Coefficients& c, double omega, double& s_plus,
                           double& s_minus) {
  const auto [N, M] = c.reservoir;
  const double k = c.kappa;
  const double lm = c.lambda_minus, lp = c.lambda_plus;
  const double w2 = omega * omega;
  s_plus = 1.0 + (4.0 * k * (c.p - c.v) - 4.0 * k * (M + N) * lm) / (w2 + lm * lm) +
           2.0 * N + 2.0 * M;
  s_minus = 1.0 + (4.0 * k * (c.p + c.v) + 4.0 * k * (M - N) * lp) / (w2 + lp * lp) +
            2.0 * N - 2.0 * M;
}

inline SpectrumCurve squeezing_spectrum(const Coefficients& c,
                                        std::span<const double> omega_grid) {
  require_stable(c);
  SpectrumCurve out;
  out.method = SpectrumMethod::closed_form;
  out.omega.assign(omega_grid.begin(), omega_grid.end());
  out.s_plus.resize(omega_grid.size());
  out.s_minus.resize(omega_grid.size());
  for (std::size_t i = 0; i < omega_grid.size(); ++i)
    spectrum_point(c, omega_grid[i], out.s_plus[i], out.s_minus[i]);
  return out;
}

// Spectrum at eta = 0 written in (A, kappa, r, beta) only.
inline QuadratureVariances spectrum_half_inversion(const LaserParams& prm,
                                                   double omega) {
  prm.validate();
  if (prm.eta != 0.0) throw ParameterError("spectrum_half_inversion needs eta = 0");
  const double b = prm.beta, b2 = b * b, A = prm.A, k = prm.kappa;
  const double e2 = std::exp(2.0 * prm.r), em2 = std::exp(-2.0 * prm.r);
  const double denom = 4.0 * (1.0 + b2) * (2.0 + b2 / 2.0);
  const double p_minus_v = k / 4.0 * (e2 - 1.0) + A * (b2 * b + b2 - 2.0 * b + 4.0) / denom;
  const double p_plus_v = k / 4.0 * (em2 - 1.0) - A * (b2 * b - 3.0 * b2 + 4.0 * b) / denom;
  const double lm = k / 2.0 * (1.0 + A * b * (2.0 - b2) / (2.0 * k * (1.0 + b2) * (1.0 + b2 / 4.0)));
  const double lp = k / 2.0 * (1.0 + 2.0 * A * b / (k * (1.0 + b2)));
  if (!(lm > 0 && lp > 0)) throw NoSteadyStateError(lm, lp);
  const double w2 = omega * omega;
  return {e2 + (4.0 * k * p_minus_v - 2.0 * k * (e2 - 1.0) * lm) / (w2 + lm * lm),
          em2 + (4.0 * k * p_plus_v + 2.0 * k * (1.0 - em2) * lp) / (w2 + lp * lp)};
}

// Integral of f(tau) cos(omega tau) over [0, horizon] by 15-point
// Gauss-Kronrod on panels no wider than a quarter period or one decay length,
// each refined adaptively up to depth 4. Throws QuadratureError when the
// accumulated error estimate exceeds rel_tol times the integral of |f cos|.
template <class F>
double cosine_transform(F&& f, double omega, double horizon, double decay_length,
                        double rel_tol) {
  using GK = boost::math::quadrature::gauss_kronrod<double, 15>;
  double width = decay_length;
  if (omega != 0.0) width = std::min(width, std::numbers::pi / (2.0 * std::abs(omega)));
  const auto panels = static_cast<std::size_t>(std::ceil(horizon / width));
  const double h = horizon / static_cast<double>(panels);
  double total = 0.0, err_total = 0.0, l1_total = 0.0;
  auto integrand = [&](double tau) { return f(tau) * std::cos(omega * tau); };
  for (std::size_t i = 0; i < panels; ++i) {
    double err = 0.0, l1 = 0.0;
    total += GK::integrate(integrand, h * static_cast<double>(i),
                           h * static_cast<double>(i + 1), 4, 1e-13, &err, &l1);
    err_total += err;
    l1_total += l1;
  }
  if (err_total > rel_tol * l1_total) {
    std::ostringstream os;
    os << "quadrature error estimate " << err_total << " exceeds " << rel_tol
       << " of the integrand norm " << l1_total;
    throw QuadratureError(os.str());
  }
  return total;
}

// Independent route to squeezing_spectrum: each term of the output
// correlation decomposition is integrated numerically.
//   intracavity-intracavity:  <alpha_+-^2>_ss exp(-lambda tau)
//   intracavity-input:        0
//   input-intracavity:        2 sqrt(kappa) (M +- N) exp(-lambda tau)
//   input-input:              2 (M +- N) delta(tau), contributing 2(M +- N)
inline SpectrumCurve spectrum_by_quadrature(const Coefficients& c,
                                            std::span<const double> omega_grid,
                                            const QuadratureConfig& cfg = {}) {
  require_stable(c);
  const auto [N, M] = c.reservoir;
  const double k = c.kappa, sk = std::sqrt(k);
  const double lmin = std::min(c.lambda_minus, c.lambda_plus);
  const double horizon = cfg.horizon > 0 ? cfg.horizon : cfg.horizon_decays / lmin;

  struct Mode {
    double lambda, sign, cavity_sq, input_amp, delta_term;
  };
  const Mode modes[2] = {
      {c.lambda_minus, +1.0, 2.0 * (c.p - c.v) / c.lambda_minus,
       2.0 * sk * (M + N), 2.0 * (M + N)},
      {c.lambda_plus, -1.0, -2.0 * (c.p + c.v) / c.lambda_plus,
       2.0 * sk * (M - N), 2.0 * (M - N)},
  };
  for (const auto& m : modes) {
    // Truncated tail relative to the full envelope integral.
    const double tail = std::exp(-m.lambda * horizon);
    if (tail > cfg.rel_tol) {
      std::ostringstream os;
      os << "quadrature horizon " << horizon << " too short for decay scale "
         << 1.0 / m.lambda << " (tail bound " << tail << ")";
      throw QuadratureError(os.str());
    }
  }

  SpectrumCurve out;
  out.method = SpectrumMethod::quadrature;
  out.omega.assign(omega_grid.begin(), omega_grid.end());
  out.s_plus.resize(omega_grid.size());
  out.s_minus.resize(omega_grid.size());
  for (std::size_t i = 0; i < omega_grid.size(); ++i) {
    const double w = omega_grid[i];
    for (const auto& m : modes) {
      auto cavity = [&](double tau) { return m.cavity_sq * std::exp(-m.lambda * tau); };
      auto input = [&](double tau) { return m.input_amp * std::exp(-m.lambda * tau); };
      const double len = 1.0 / m.lambda;
      const double cc = cosine_transform(cavity, w, horizon, len, cfg.rel_tol);
      const double ic = cosine_transform(input, w, horizon, len, cfg.rel_tol);
      const double s = 1.0 + m.sign * 2.0 * k * cc - m.sign * 2.0 * sk * ic +
                       m.sign * m.delta_term;
      (m.sign > 0 ? out.s_plus : out.s_minus)[i] = s;
    }
  }
  return out;
}

inline double mean_photon_transient(const Coefficients& c, double t) {
  if (!(t >= 0)) throw ParameterError("time must be >= 0");
  return (c.p - c.v) / 2.0 * detail::relaxation(c.lambda_minus, t) +
         (c.p + c.v) / 2.0 * detail::relaxation(c.lambda_plus, t);
}

// <alpha^2>(t) from vacuum.
inline double anomalous_transient(const Coefficients& c, double t) {
  if (!(t >= 0)) throw ParameterError("time must be >= 0");
  return (c.p - c.v) / 2.0 * detail::relaxation(c.lambda_minus, t) -
         (c.p + c.v) / 2.0 * detail::relaxation(c.lambda_plus, t);
}

inline double photon_variance_transient(const Coefficients& c, double t) {
  const double n = mean_photon_transient(c, t);
  const double x = anomalous_transient(c, t);
  return n * n + n + x * x;
}

inline PhotonStatistics photon_statistics_ss(const Coefficients& c) {
  require_stable(c);
  const double det = c.C * c.C - c.D * c.D;
  const double n = (c.p * c.C - c.v * c.D) / det;
  const double x = (c.p * c.D - c.v * c.C) / det;
  return {n, x, n * n + n + x * x};
}

inline PhotonVarianceDiagnostic photon_variance_diagnostic(const Coefficients& c) {
  const auto st = photon_statistics_ss(c);
  const double bracket = st.mean_n - (c.p + c.v) / c.lambda_plus;
  return {bracket, st.anomalous, st.variance_n,
          st.mean_n * st.mean_n + st.mean_n + bracket};
}

}  // namespace trilevel
