#pragma once

#include <cmath>
#include <cstddef>
#include <span>

namespace calikd {

/// log(sum_k exp(x_k)), computed as m + log(sum exp(x - m)).
inline double logsumexp(std::span<const double> x) {
  double m = x[0];
  for (const double v : x) m = std::max(m, v);
  double s = 0.0;
  for (const double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

/// Index of the largest element; ties resolve to the lowest index.
inline std::size_t argmax(std::span<const double> x) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < x.size(); ++k) {
    if (x[k] > x[best]) best = k;
  }
  return best;
}

/// out_k = z_k / temp - logsumexp(z / temp). Never computed as log(softmax).
inline void log_softmax(std::span<const double> z, double temp, std::span<double> out) {
  double m = z[0];
  for (const double v : z) m = std::max(m, v);
  double s = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    out[k] = (z[k] - m) / temp;
    s += std::exp(out[k]);
  }
  const double log_s = std::log(s);
  for (std::size_t k = 0; k < z.size(); ++k) out[k] -= log_s;
}

/// out_k = exp((z_k - max z) / temp) / sum.
inline void softmax(std::span<const double> z, double temp, std::span<double> out) {
  double m = z[0];
  for (const double v : z) m = std::max(m, v);
  double s = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    out[k] = std::exp((z[k] - m) / temp);
    s += out[k];
  }
  for (std::size_t k = 0; k < z.size(); ++k) out[k] /= s;
}

}  // namespace calikd
