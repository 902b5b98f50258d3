#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>

namespace trilevel {

// Raised when an input parameter violates its documented bound.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised by steady-state evaluators when either normal-mode decay rate is
// nonpositive. Carries both rates so callers can report them.
class NoSteadyStateError : public std::domain_error {
 public:
  NoSteadyStateError(double lambda_minus, double lambda_plus)
      : std::domain_error(describe(lambda_minus, lambda_plus)),
        lambda_minus_{lambda_minus},
        lambda_plus_{lambda_plus} {}

  double lambda_minus() const noexcept { return lambda_minus_; }
  double lambda_plus() const noexcept { return lambda_plus_; }

 private:
  static std::string describe(double lm, double lp) {
    std::ostringstream os;
    os << "no steady state:";
    if (!(lm > 0)) os << " lambda_minus = " << lm << " <= 0";
    if (!(lp > 0)) os << " lambda_plus = " << lp << " <= 0";
    return os.str();
  }

  double lambda_minus_;
  double lambda_plus_;
};

// Physical inputs of a run. Rates share one (arbitrary) unit.
struct LaserParams {
  double A = 0.0;      // linear gain coefficient
  double kappa = 0.8;  // cavity damping rate
  double r = 0.0;      // squeeze parameter of the reservoir
  double eta = 0.0;    // population-inversion parameter, [-1, 1]
  double beta = 0.0;   // driving Rabi frequency over atomic decay rate

  void validate() const {
    auto fail = [](const char* what, double value) {
      std::ostringstream os;
      os << what << " (got " << value << ")";
      throw ParameterError(os.str());
    };
    if (!(A >= 0)) fail("A must be >= 0", A);
    if (!(kappa > 0)) fail("kappa must be > 0", kappa);
    if (!(r >= 0)) fail("r must be >= 0", r);
    if (!(eta >= -1 && eta <= 1)) fail("eta must lie in [-1, 1]", eta);
    if (!(beta >= 0)) fail("beta must be >= 0", beta);
    if (!std::isfinite(A) || !std::isfinite(kappa) || !std::isfinite(r) ||
        !std::isfinite(beta))
      throw ParameterError("parameters must be finite");
  }
};

struct ReservoirMoments {
  double N = 0.0;  // sinh^2 r
  double M = 0.0;  // cosh r sinh r
};

struct AtomicPreparation {
  double rho_aa = 0.0;
  double rho_cc = 0.0;
  double rho_ac = 0.0;
};

// Rates of the cavity-mode master equation and the derived normal-mode decay
// rates. Also carries kappa and the reservoir moments, which the output
// spectrum needs alongside the rates.
struct Coefficients {
  double p = 0.0;
  double q = 0.0;
  double u = 0.0;
  double v = 0.0;
  double C = 0.0;  // q - p
  double D = 0.0;  // u - v
  double lambda_minus = 0.0;  // C - D, decay rate of alpha_+
  double lambda_plus = 0.0;   // C + D, decay rate of alpha_-
  double B = 1.0;             // (1 + beta^2)(1 + beta^2/4)
  double kappa = 0.0;
  ReservoirMoments reservoir;
};

struct StabilityReport {
  double lambda_minus = 0.0;
  double lambda_plus = 0.0;
  bool stable = false;
};

inline ReservoirMoments reservoir_moments(double r) {
  if (!(r >= 0)) {
    std::ostringstream os;
    os << "r must be >= 0 (got " << r << ")";
    throw ParameterError(os.str());
  }
  const double s = std::sinh(r);
  return {s * s, std::cosh(r) * s};
}

inline AtomicPreparation atomic_preparation(double eta) {
  if (!(eta >= -1 && eta <= 1)) {
    std::ostringstream os;
    os << "eta must lie in [-1, 1] (got " << eta << ")";
    throw ParameterError(os.str());
  }
  // 1 - eta^2 may round below zero only when it is exactly zero in theory.
  const double radicand = std::max(0.0, (1.0 - eta) * (1.0 + eta));
  return {(1.0 - eta) / 2.0, (1.0 + eta) / 2.0, std::sqrt(radicand) / 2.0};
}

// Rates p, q, u, v for a coherent phase of zero (all coefficients real). The
// reservoir contributions kappa*N/2, kappa*(N+1)/2, -kappa*M/2 are pulled out
// of the A/(2B) bracket so that A = 0 needs no special case.
inline Coefficients gain_coefficients(const LaserParams& params) {
  params.validate();
  const auto res = reservoir_moments(params.r);
  const auto atom = atomic_preparation(params.eta);
  const double b = params.beta;
  const double b2 = b * b;
  const double B = (1.0 + b2) * (1.0 + b2 / 4.0);
  const double g = params.A / (2.0 * B);
  const double k = params.kappa;

  Coefficients c;
  c.B = B;
  c.kappa = k;
  c.reservoir = res;
  c.p = g * (atom.rho_aa * (1.0 + b2 / 4.0) + atom.rho_cc * (0.75 * b2) -
             atom.rho_ac * (1.5 * b)) +
        k * res.N / 2.0;
  c.q = g * (atom.rho_aa * (0.75 * b2) + atom.rho_cc * (1.0 + b2 / 4.0) +
             atom.rho_ac * (1.5 * b)) +
        k * (res.N + 1.0) / 2.0;
  c.u = g * (-atom.rho_aa * (b / 2.0) * (1.0 - b2 / 2.0) +
             atom.rho_cc * b * (1.0 + b2 / 4.0) -
             atom.rho_ac * (1.0 - b2 / 2.0)) -
        k * res.M / 2.0;
  c.v = g * (-atom.rho_aa * b * (1.0 + b2 / 4.0) +
             atom.rho_cc * (b / 2.0) * (1.0 - b2 / 2.0) -
             atom.rho_ac * (1.0 - b2 / 2.0)) -
        k * res.M / 2.0;
  c.C = c.q - c.p;
  c.D = c.u - c.v;
  c.lambda_minus = c.C - c.D;
  c.lambda_plus = c.C + c.D;
  return c;
}

inline StabilityReport stability(const Coefficients& c) {
  return {c.lambda_minus, c.lambda_plus,
          c.lambda_minus > 0 && c.lambda_plus > 0};
}

inline void require_stable(const Coefficients& c) {
  if (!stability(c).stable)
    throw NoSteadyStateError(c.lambda_minus, c.lambda_plus);
}

}  // namespace trilevel
