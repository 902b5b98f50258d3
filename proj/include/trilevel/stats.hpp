#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace trilevel {

struct EnsembleEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t num_samples = 0;

  // |value - reference| in units of the standard error; infinite when the
  // error is zero and the values differ.
  double z_score(double reference) const {
    const double diff = std::abs(value - reference);
    if (diff == 0.0) return 0.0;
    return std_error > 0 ? diff / std_error : INFINITY;
  }
};

// Pairwise (cascade) summation. The split points depend only on the length,
// so the result is independent of how the values were produced.
inline double pairwise_sum(std::span<const double> x) {
  if (x.size() <= 8) {
    double s = 0.0;
    for (double v : x) s += v;
    return s;
  }
  const std::size_t half = x.size() / 2;
  return pairwise_sum(x.first(half)) + pairwise_sum(x.subspan(half));
}

inline EnsembleEstimate estimate_mean(std::span<const double> x) {
  if (x.size() < 2) throw std::invalid_argument("need at least two samples");
  const double n = static_cast<double>(x.size());
  const double mean = pairwise_sum(x) / n;
  std::vector<double> dev(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) dev[i] = (x[i] - mean) * (x[i] - mean);
  const double var = pairwise_sum(dev) / (n - 1.0);
  return {mean, std::sqrt(var / n), x.size()};
}

}  // namespace trilevel
