#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <span>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <boost/numeric/odeint.hpp>

#include "trilevel/analytic.hpp"
#include "trilevel/model.hpp"

namespace trilevel {

// Normal-ordered moments of the cavity mode. <alpha*> and <alpha*^2> are the
// conjugates of the stored fields; this holds because every coefficient is
// real.
struct MomentState {
  std::complex<double> mean_alpha{};
  std::complex<double> mean_alpha_sq{};
  double mean_number = 0.0;
};

struct StepControl {
  double rtol = 1e-10;
  double atol = 1e-12;
  double max_step = 0.0;  // 0 selects 0.1 / max(|lambda_-|, |lambda_+|, kappa)
};

class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(const std::string& what, double time)
      : std::runtime_error(what), time_{time} {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

inline MomentState moment_derivative(const MomentState& s, const Coefficients& c) {
  MomentState d;
  d.mean_alpha = -c.C * s.mean_alpha + c.D * std::conj(s.mean_alpha);
  d.mean_alpha_sq = 2.0 * (-c.C * s.mean_alpha_sq + c.D * s.mean_number - c.v);
  d.mean_number = -2.0 * c.C * s.mean_number +
                  c.D * 2.0 * s.mean_alpha_sq.real() + 2.0 * c.p;
  return d;
}

// Quadrature variances including the first-moment corrections.
inline QuadratureVariances quadrature_from_moments(const MomentState& s) {
  const double x = s.mean_alpha_sq.real();
  const double first_plus = 2.0 * s.mean_alpha.real();
  const double first_minus_im = 2.0 * s.mean_alpha.imag();
  return {1.0 + (2.0 * x + 2.0 * s.mean_number) - first_plus * first_plus,
          1.0 - (2.0 * x - 2.0 * s.mean_number) - first_minus_im * first_minus_im};
}

namespace detail {

using MomentVector = std::array<double, 5>;

inline MomentVector pack(const MomentState& s) {
  return {s.mean_alpha.real(), s.mean_alpha.imag(), s.mean_alpha_sq.real(),
          s.mean_alpha_sq.imag(), s.mean_number};
}

inline MomentState unpack(const MomentVector& v) {
  return {{v[0], v[1]}, {v[2], v[3]}, v[4]};
}

}  // namespace detail

// Integrates the moment equations and returns the state at each grid time.
// The grid must start at 0 and increase strictly.
inline std::vector<MomentState> integrate_moments(const MomentState& initial,
                                                  const Coefficients& c,
                                                  std::span<const double> t_grid,
                                                  const StepControl& control = {}) {
  namespace ode = boost::numeric::odeint;
  if (t_grid.empty()) return {};
  if (t_grid.front() != 0.0) throw ParameterError("time grid must start at 0");
  for (std::size_t i = 1; i < t_grid.size(); ++i)
    if (!(t_grid[i] > t_grid[i - 1]))
      throw ParameterError("time grid must be strictly increasing");

  double max_step = control.max_step;
  if (max_step <= 0.0) {
    const double fastest = std::max({std::abs(c.lambda_minus), std::abs(c.lambda_plus), c.kappa});
    max_step = 0.1 / fastest;
  }

  auto rhs = [&c](const detail::MomentVector& x, detail::MomentVector& dxdt, double) {
    dxdt = detail::pack(moment_derivative(detail::unpack(x), c));
  };

  std::vector<MomentState> out;
  out.reserve(t_grid.size());
  double reached = 0.0;
  auto observer = [&](const detail::MomentVector& x, double t) {
    out.push_back(detail::unpack(x));
    reached = t;
  };

  using Stepper = ode::runge_kutta_dopri5<detail::MomentVector>;
  auto stepper = ode::make_controlled(control.atol, control.rtol, max_step, Stepper{});
  auto state = detail::pack(initial);
  const double first_dt = std::min(max_step, 1e-3 * max_step + 1e-12);
  try {
    ode::integrate_times(stepper, rhs, state, t_grid.begin(), t_grid.end(), first_dt,
                         observer);
  } catch (const std::exception& e) {
    std::ostringstream os;
    os << "moment integration failed after t = " << reached << ": " << e.what();
    throw IntegrationError(os.str(), reached);
  }
  return out;
}

}  // namespace trilevel
