#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <span>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "trilevel/analytic.hpp"
#include "trilevel/model.hpp"
#include "trilevel/parallel.hpp"
#include "trilevel/rng.hpp"
#include "trilevel/stats.hpp"

namespace trilevel {

using cplx = std::complex<double>;

// Noise acting on the normal modes alpha_+- = alpha* +- alpha. The two mode
// noises are uncorrelated for real coefficients. A negative intensity gives a
// purely imaginary amplitude: that mode then lives off the classical manifold
// (doubled phase space) and its square averages to a negative value.
struct NoiseModel {
  double sigma_plus_sq = 0.0;   // 4(p - v)
  double sigma_minus_sq = 0.0;  // -4(p + v)
  cplx amp_plus{};
  cplx amp_minus{};
};

inline NoiseModel build_noise_model(const Coefficients& c) {
  NoiseModel n;
  n.sigma_plus_sq = 4.0 * (c.p - c.v);
  n.sigma_minus_sq = -4.0 * (c.p + c.v);
  n.amp_plus = std::sqrt(cplx{n.sigma_plus_sq, 0.0});
  n.amp_minus = std::sqrt(cplx{n.sigma_minus_sq, 0.0});
  return n;
}

// Ensemble of independent normal-mode trajectories. Trajectory i draws its
// noise from the counter-based streams (master_seed, i, mode, step), so the
// ensemble after k steps is fixed by the seed and the step sizes alone.
struct ModeEnsemble {
  std::vector<cplx> a_plus;
  std::vector<cplx> a_minus;
  std::uint64_t master_seed = 0;
  std::uint64_t step_index = 0;
  double dt = 0.0;
  double t = 0.0;
  unsigned workers = 1;

  std::size_t num_traj() const { return a_plus.size(); }
};

// Vacuum ensemble.
inline ModeEnsemble make_ensemble(std::size_t num_traj, std::uint64_t seed,
                                  unsigned workers = 1) {
  if (num_traj < 2) throw ParameterError("ensemble needs at least 2 trajectories");
  ModeEnsemble e;
  e.a_plus.assign(num_traj, cplx{});
  e.a_minus.assign(num_traj, cplx{});
  e.master_seed = seed;
  e.workers = std::max(1U, workers);
  return e;
}

namespace detail {

// Variance gain of one exact OU step: (1 - exp(-2 lambda h)) / (2 lambda).
inline double ou_variance_factor(double lambda, double h) {
  if (lambda == 0.0) return h;
  return -std::expm1(-2.0 * lambda * h) / (2.0 * lambda);
}

struct OuStep {
  double decay_plus, decay_minus;
  cplx kick_plus, kick_minus;
};

inline OuStep make_ou_step(const Coefficients& c, const NoiseModel& noise, double h) {
  return {std::exp(-c.lambda_minus * h), std::exp(-c.lambda_plus * h),
          noise.amp_plus * std::sqrt(ou_variance_factor(c.lambda_minus, h)),
          noise.amp_minus * std::sqrt(ou_variance_factor(c.lambda_plus, h))};
}

inline void advance(const OuStep& s, std::uint64_t seed, std::uint64_t traj,
                    std::uint64_t step, cplx& plus, cplx& minus) {
  plus = s.decay_plus * plus + s.kick_plus * stream_normal(seed, traj, 0, step);
  minus = s.decay_minus * minus + s.kick_minus * stream_normal(seed, traj, 1, step);
}

}  // namespace detail

// Exact one-step Ornstein-Uhlenbeck update of both modes. Exact for any h,
// stable or not.
inline void step_ensemble(ModeEnsemble& ens, const Coefficients& c,
                          const NoiseModel& noise, double h) {
  if (!(h > 0)) throw ParameterError("step must be > 0");
  const auto s = detail::make_ou_step(c, noise, h);
  const auto step = ens.step_index;
  parallel_for(ens.num_traj(), ens.workers, [&](std::size_t i) {
    detail::advance(s, ens.master_seed, i, step, ens.a_plus[i], ens.a_minus[i]);
  });
  ++ens.step_index;
  ens.dt = h;
  ens.t += h;
}

inline double default_burn_in(const Coefficients& c) {
  require_stable(c);
  return 20.0 / std::min(c.lambda_minus, c.lambda_plus);
}

// Relaxes the ensemble to stationarity with one exact step of length
// 20 / min(lambda).
inline void burn_in(ModeEnsemble& ens, const Coefficients& c, const NoiseModel& noise) {
  step_ensemble(ens, c, noise, default_burn_in(c));
}

struct ObservableEstimates {
  EnsembleEstimate sq_plus;   // <alpha_+^2>
  EnsembleEstimate sq_minus;  // <alpha_-^2>
  QuadratureVariances quadratures;
  EnsembleEstimate quad_plus;
  EnsembleEstimate quad_minus;
  EnsembleEstimate mean_n;
  EnsembleEstimate anomalous;
  EnsembleEstimate fourth_moment;  // <alpha*^2 alpha^2>
  EnsembleEstimate variance_n;
  // Diagnostics expected to vanish.
  EnsembleEstimate imag_sq_plus;
  EnsembleEstimate imag_sq_minus;
  EnsembleEstimate cross;  // Re <alpha_+ alpha_->
};

// Moments from the ensemble with alpha = (alpha_+ - alpha_-)/2 and its
// doubled-phase-space partner alpha^dag = (alpha_+ + alpha_-)/2.
inline ObservableEstimates estimate_observables(const ModeEnsemble& ens) {
  const std::size_t n = ens.num_traj();
  if (n < 2) throw ParameterError("ensemble needs at least 2 trajectories");
  std::vector<double> sp(n), sm(n), num(n), anom(n), w(n), isp(n), ism(n), cross(n);
  for (std::size_t i = 0; i < n; ++i) {
    const cplx p2 = ens.a_plus[i] * ens.a_plus[i];
    const cplx m2 = ens.a_minus[i] * ens.a_minus[i];
    sp[i] = p2.real();
    sm[i] = m2.real();
    isp[i] = p2.imag();
    ism[i] = m2.imag();
    num[i] = ((p2 - m2) / 4.0).real();
    anom[i] = ((p2 + m2) / 4.0).real();
    const cplx d = p2 - m2;
    w[i] = (d * d / 16.0).real();
    cross[i] = (ens.a_plus[i] * ens.a_minus[i]).real();
  }
  ObservableEstimates out;
  out.sq_plus = estimate_mean(sp);
  out.sq_minus = estimate_mean(sm);
  out.quad_plus = {1.0 + out.sq_plus.value, out.sq_plus.std_error, n};
  out.quad_minus = {1.0 - out.sq_minus.value, out.sq_minus.std_error, n};
  out.quadratures = {out.quad_plus.value, out.quad_minus.value};
  out.mean_n = estimate_mean(num);
  out.anomalous = estimate_mean(anom);
  out.fourth_moment = estimate_mean(w);
  out.imag_sq_plus = estimate_mean(isp);
  out.imag_sq_minus = estimate_mean(ism);
  out.cross = estimate_mean(cross);

  // Var(n) = <a*^2 a^2> + <a* a> - <a* a>^2; error by the delta method.
  const double nbar = out.mean_n.value;
  std::vector<double> influence(n);
  for (std::size_t i = 0; i < n; ++i) influence[i] = w[i] + (1.0 - 2.0 * nbar) * num[i];
  const auto infl = estimate_mean(influence);
  out.variance_n = {out.fourth_moment.value + nbar - nbar * nbar, infl.std_error, n};
  return out;
}

struct LagConfig {
  double stride = 0.0;           // 0 selects 0.05 / max(lambda_-, lambda_+, kappa)
  double max_lag_decays = 15.0;  // lag window per mode, in units of 1/lambda
  std::size_t num_origins = 200;
  std::size_t origin_spacing = 10;  // samples between successive time origins
  std::size_t history_length = 0;   // 0 selects the minimum the lags need
};

struct LagSpectrumResult {
  SpectrumCurve spectrum;
  double stride = 0.0;
  std::vector<double> corr_plus;  // <alpha_+(t) alpha_+(t + k stride)>
  std::vector<double> corr_minus;
  std::vector<double> corr_plus_se;
  std::vector<double> corr_minus_se;
};

// Output spectrum from lagged products of stationary trajectories. Each
// trajectory continues from its current state on fresh stream positions;
// the ensemble itself is left untouched. The input-noise correlation terms
// enter in closed form.
inline LagSpectrumResult lag_correlation_spectrum(const ModeEnsemble& ens,
                                                  const Coefficients& c,
                                                  std::span<const double> omega_grid,
                                                  const LagConfig& cfg = {}) {
  require_stable(c);
  const auto noise = build_noise_model(c);
  const double stride =
      cfg.stride > 0 ? cfg.stride
                     : 0.05 / std::max({c.lambda_minus, c.lambda_plus, c.kappa});
  const auto lags_for = [&](double lambda) {
    return static_cast<std::size_t>(std::ceil(cfg.max_lag_decays / (lambda * stride)));
  };
  const std::size_t lag_plus = lags_for(c.lambda_minus);
  const std::size_t lag_minus = lags_for(c.lambda_plus);
  const std::size_t max_lag = std::max(lag_plus, lag_minus);
  const std::size_t span_origins = (cfg.num_origins - 1) * cfg.origin_spacing + 1;
  const std::size_t needed = span_origins + max_lag;
  const std::size_t length = cfg.history_length ? cfg.history_length : needed;
  if (cfg.num_origins == 0 || cfg.origin_spacing == 0)
    throw ParameterError("lag estimator needs at least one time origin");
  if (length < needed) {
    std::ostringstream os;
    os << "history of " << length << " samples is shorter than the " << needed
       << " needed for lag " << max_lag;
    throw ParameterError(os.str());
  }

  const std::size_t n = ens.num_traj();
  const std::size_t nw = omega_grid.size();
  const auto step = detail::make_ou_step(c, noise, stride);
  // Per-trajectory lag correlations and cosine transforms.
  std::vector<double> g_plus(n * (lag_plus + 1)), g_minus(n * (lag_minus + 1));
  std::vector<double> i_plus(n * nw), i_minus(n * nw);

  // Trapezoid weights times cos(omega tau_k), one row per frequency.
  auto cosine_weights = [&](std::size_t lags) {
    std::vector<double> wts(nw * (lags + 1));
    for (std::size_t iw = 0; iw < nw; ++iw)
      for (std::size_t k = 0; k <= lags; ++k) {
        const double edge = (k == 0 || k == lags) ? 0.5 : 1.0;
        wts[iw * (lags + 1) + k] =
            edge * stride * std::cos(omega_grid[iw] * stride * static_cast<double>(k));
      }
    return wts;
  };
  const auto w_plus = cosine_weights(lag_plus);
  const auto w_minus = cosine_weights(lag_minus);

  parallel_for(n, ens.workers, [&](std::size_t traj) {
    std::vector<cplx> hp(length), hm(length);
    cplx p = ens.a_plus[traj], m = ens.a_minus[traj];
    for (std::size_t k = 0; k < length; ++k) {
      hp[k] = p;
      hm[k] = m;
      detail::advance(step, ens.master_seed, traj, ens.step_index + k, p, m);
    }
    auto correlate = [&](const std::vector<cplx>& h, std::size_t lags, double* g) {
      for (std::size_t k = 0; k <= lags; ++k) {
        double acc = 0.0;
        for (std::size_t o = 0; o < cfg.num_origins; ++o) {
          const std::size_t j = o * cfg.origin_spacing;
          acc += (h[j] * h[j + k]).real();
        }
        g[k] = acc / static_cast<double>(cfg.num_origins);
      }
    };
    correlate(hp, lag_plus, &g_plus[traj * (lag_plus + 1)]);
    correlate(hm, lag_minus, &g_minus[traj * (lag_minus + 1)]);
    auto transform = [](const double* g, const double* weights, std::size_t lags) {
      double acc = 0.0;
      for (std::size_t k = 0; k <= lags; ++k) acc += g[k] * weights[k];
      return acc;
    };
    for (std::size_t iw = 0; iw < nw; ++iw) {
      i_plus[traj * nw + iw] = transform(&g_plus[traj * (lag_plus + 1)],
                                         &w_plus[iw * (lag_plus + 1)], lag_plus);
      i_minus[traj * nw + iw] = transform(&g_minus[traj * (lag_minus + 1)],
                                          &w_minus[iw * (lag_minus + 1)], lag_minus);
    }
  });

  const auto [N, M] = c.reservoir;
  const double k = c.kappa;
  LagSpectrumResult out;
  out.stride = stride;
  out.spectrum.method = SpectrumMethod::monte_carlo;
  out.spectrum.omega.assign(omega_grid.begin(), omega_grid.end());
  std::vector<double> column(n);
  for (std::size_t iw = 0; iw < nw; ++iw) {
    const double w = omega_grid[iw];
    const double lor_m = c.lambda_minus / (w * w + c.lambda_minus * c.lambda_minus);
    const double lor_p = c.lambda_plus / (w * w + c.lambda_plus * c.lambda_plus);
    for (std::size_t t = 0; t < n; ++t) column[t] = i_plus[t * nw + iw];
    const auto ip = estimate_mean(column);
    for (std::size_t t = 0; t < n; ++t) column[t] = i_minus[t * nw + iw];
    const auto im = estimate_mean(column);
    out.spectrum.s_plus.push_back(1.0 + 2.0 * k * ip.value - 4.0 * k * (M + N) * lor_m +
                                  2.0 * (M + N));
    out.spectrum.se_plus.push_back(2.0 * k * ip.std_error);
    out.spectrum.s_minus.push_back(1.0 - 2.0 * k * im.value + 4.0 * k * (M - N) * lor_p -
                                   2.0 * (M - N));
    out.spectrum.se_minus.push_back(2.0 * k * im.std_error);
  }
  auto reduce_lags = [&](const std::vector<double>& g, std::size_t lags,
                         std::vector<double>& mean, std::vector<double>& se) {
    for (std::size_t kk = 0; kk <= lags; ++kk) {
      for (std::size_t t = 0; t < n; ++t) column[t] = g[t * (lags + 1) + kk];
      const auto e = estimate_mean(column);
      mean.push_back(e.value);
      se.push_back(e.std_error);
    }
  };
  reduce_lags(g_plus, lag_plus, out.corr_plus, out.corr_plus_se);
  reduce_lags(g_minus, lag_minus, out.corr_minus, out.corr_minus_se);
  return out;
}

// Least-squares decay rate of a positive correlation function sampled at
// uniform stride, using lags up to `window`.
inline double fit_decay_rate(std::span<const double> corr, double stride, double window) {
  const auto count = std::min<std::size_t>(
      corr.size(), static_cast<std::size_t>(window / stride) + 1);
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t used = 0;
  for (std::size_t k = 0; k < count; ++k) {
    if (!(corr[k] > 0)) break;
    const double x = stride * static_cast<double>(k), y = std::log(corr[k]);
    sx += x, sy += y, sxx += x * x, sxy += x * y;
    ++used;
  }
  if (used < 3) throw std::domain_error("correlation not positive over the fit window");
  const double nn = static_cast<double>(used);
  return -(nn * sxy - sx * sy) / (nn * sxx - sx * sx);
}

}  // namespace trilevel
