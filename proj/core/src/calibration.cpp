#include "calikd/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "calikd/error.hpp"
#include "calikd/softmax.hpp"

namespace calikd::calibration {

namespace {

void check_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) {
    throw DomainError("temperature must be positive, got " + std::to_string(t));
  }
}

/// NLL is constant in T exactly when every row is a constant vector.
bool constant_rows(const Matrix& logits) {
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row(i);
    for (std::size_t k = 1; k < r.size(); ++k) {
      if (r[k] != r[0]) return false;
    }
  }
  return true;
}

}  // namespace

void LogitSet::validate() const {
  if (logits.rows() < 1) throw ValidationError("logit set is empty");
  if (logits.cols() < 2) {
    throw ValidationError("logit set needs at least 2 classes, got " +
                          std::to_string(logits.cols()));
  }
  if (!logits.all_finite()) throw ValidationError("logit set contains non-finite values");
  if (labels.size() != logits.rows()) {
    throw ValidationError("logit set has " + std::to_string(logits.rows()) +
                          " rows but " + std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= logits.cols()) {
      throw ValidationError("label " + std::to_string(labels[i]) + " at row " +
                            std::to_string(i) + " outside [0, " +
                            std::to_string(logits.cols()) + ")");
    }
  }
}

std::vector<Prediction> calibrated_confidences(const LogitSet& set, double temperature) {
  set.validate();
  check_temperature(temperature);
  std::vector<Prediction> out(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto z = set.logits.row(i);
    const std::size_t best = argmax(z);
    // lse >= z[best]/T, so the confidence never exceeds 1
    double m = z[0];
    for (const double v : z) m = std::max(m, v);
    double s = 0.0;
    for (const double v : z) s += std::exp((v - m) / temperature);
    out[i].confidence = std::exp((z[best] - m) / temperature) / s;
    out[i].predicted_class = static_cast<int>(best);
  }
  return out;
}

double nll(const LogitSet& set, double temperature) {
  set.validate();
  check_temperature(temperature);
  std::vector<double> scaled;
  double total = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto z = set.logits.row(i);
    scaled.assign(z.begin(), z.end());
    for (double& v : scaled) v /= temperature;
    total += logsumexp(scaled) - scaled[set.labels[i]];
  }
  return total / static_cast<double>(set.size());
}

double accuracy(const LogitSet& set) {
  set.validate();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (argmax(set.logits.row(i)) == static_cast<std::size_t>(set.labels[i])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

ReliabilityHistogram reliability_histogram(const LogitSet& set, double temperature,
                                           int bin_count) {
  if (bin_count < 1) throw DomainError("bin count must be at least 1");
  const auto predictions = calibrated_confidences(set, temperature);

  const auto m = static_cast<std::size_t>(bin_count);
  ReliabilityHistogram hist;
  hist.total_count = set.size();
  hist.bins.resize(m);
  std::vector<double> conf_sum(m, 0.0);
  std::vector<double> acc_sum(m, 0.0);
  for (std::size_t b = 0; b < m; ++b) {
    hist.bins[b].lower = static_cast<double>(b) / bin_count;
    hist.bins[b].upper = static_cast<double>(b + 1) / bin_count;
  }
  for (std::size_t i = 0; i < set.size(); ++i) {
    const double q = predictions[i].confidence;
    // (lower, upper] intervals: a boundary confidence lands in the lower bin
    auto idx = static_cast<std::ptrdiff_t>(std::ceil(q * bin_count)) - 1;
    idx = std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(m) - 1);
    hist.bins[idx].count += 1;
    conf_sum[idx] += q;
    acc_sum[idx] += predictions[i].predicted_class == set.labels[i] ? 1.0 : 0.0;
  }
  for (std::size_t b = 0; b < m; ++b) {
    if (hist.bins[b].count > 0) {
      const auto c = static_cast<double>(hist.bins[b].count);
      hist.bins[b].mean_confidence = conf_sum[b] / c;
      hist.bins[b].mean_accuracy = acc_sum[b] / c;
    }
  }
  return hist;
}

double ece(const ReliabilityHistogram& histogram) {
  if (histogram.total_count == 0) throw DomainError("ECE of an empty histogram");
  const auto n = static_cast<double>(histogram.total_count);
  double total = 0.0;
  for (const ReliabilityBin& bin : histogram.bins) {
    if (bin.count == 0) continue;
    total += (static_cast<double>(bin.count) / n) *
             std::abs(bin.mean_accuracy - bin.mean_confidence);
  }
  return total;
}

TemperatureFit fit_temperature(const LogitSet& validation_logits,
                               const FitOptions& options) {
  validation_logits.validate();
  if (!(options.t_min > 0.0) || !(options.t_min < options.t_max)) {
    throw ConfigError("temperature bounds must satisfy 0 < t_min < t_max");
  }
  if (options.t_min > 1.0 || options.t_max < 1.0) {
    throw ConfigError("temperature bounds must contain 1");
  }
  if (!(options.log_tolerance > 0.0)) {
    throw ConfigError("log tolerance must be positive");
  }

  TemperatureFit fit;
  fit.nll_before = nll(validation_logits, 1.0);
  fit.evaluations = 1;

  if (constant_rows(validation_logits.logits)) {
    fit.temperature = 1.0;
    fit.nll_after = fit.nll_before;
    fit.converged = true;
    fit.degenerate_input = true;
    return fit;
  }

  const auto f = [&](double log_t) {
    ++fit.evaluations;
    return nll(validation_logits, std::exp(log_t));
  };

  // golden-section on log T
  constexpr double kInvPhi = 0.6180339887498949;
  double lo = std::log(options.t_min);
  double hi = std::log(options.t_max);
  double x1 = hi - kInvPhi * (hi - lo);
  double x2 = lo + kInvPhi * (hi - lo);
  double f1 = f(x1);
  double f2 = f(x2);
  constexpr int kMaxIterations = 200;
  int iterations = 0;
  while (hi - lo > options.log_tolerance && iterations < kMaxIterations) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - kInvPhi * (hi - lo);
      f1 = f(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + kInvPhi * (hi - lo);
      f2 = f(x2);
    }
    ++iterations;
  }
  fit.converged = hi - lo <= options.log_tolerance;
  const double log_best = f1 <= f2 ? x1 : x2;
  double best_nll = std::min(f1, f2);
  double best_t = std::exp(log_best);

  // The search is interior-only; admit the bounds and T = 1 as candidates so
  // a monotone NLL clamps cleanly and nll_after <= nll_before always holds.
  struct Candidate {
    double t;
    double value;
  };
  const Candidate candidates[] = {
      {options.t_min, f(std::log(options.t_min))},
      {options.t_max, f(std::log(options.t_max))},
      {1.0, fit.nll_before},
  };
  for (const Candidate& c : candidates) {
    if (c.value < best_nll) {
      best_nll = c.value;
      best_t = c.t;
    }
  }
  fit.temperature = best_t;
  fit.nll_after = best_nll;
  const double log_span = std::log(options.t_max) - std::log(options.t_min);
  fit.clamped_at_bound =
      best_t == options.t_min || best_t == options.t_max ||
      std::log(best_t) - std::log(options.t_min) <= options.log_tolerance ||
      std::log(options.t_max) - std::log(best_t) <= options.log_tolerance ||
      log_span <= options.log_tolerance;
  return fit;
}

CalibrationReport calibration_report(const LogitSet& set, const TemperatureFit& fit,
                                     int bin_count) {
  CalibrationReport report;
  report.temperature = fit.temperature;
  report.ece_before = ece(reliability_histogram(set, 1.0, bin_count));
  report.ece_after = ece(reliability_histogram(set, fit.temperature, bin_count));
  report.nll_before = nll(set, 1.0);
  report.nll_after = nll(set, fit.temperature);
  report.accuracy = accuracy(set);
  return report;
}

}  // namespace calikd::calibration
