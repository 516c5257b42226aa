#pragma once

#include <cstddef>
#include <vector>

#include "calikd/matrix.hpp"

namespace calikd::calibration {

/// Per-sample class logits with true labels; the unit every calibration
/// metric operates on.
struct LogitSet {
  Matrix logits;            // n x K
  std::vector<int> labels;  // values in [0, K)

  std::size_t size() const { return logits.rows(); }
  std::size_t class_count() const { return logits.cols(); }

  /// Enforces n >= 1, K >= 2, finite logits, labels in range.
  void validate() const;
};

struct Prediction {
  double confidence = 0.0;  // max_k softmax(z / T)_k, in (0, 1]
  int predicted_class = 0;  // argmax_k z_k, ties to the lowest index
};

/// Temperature-scaled confidences. The predicted class is computed on the
/// raw logits, so it is identical for every T > 0 by construction.
std::vector<Prediction> calibrated_confidences(const LogitSet& set, double temperature);

/// Mean negative log likelihood of the true labels at temperature T.
double nll(const LogitSet& set, double temperature);

/// Fraction of samples whose predicted class equals the label.
double accuracy(const LogitSet& set);

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;  // 0 for empty bins
  double mean_accuracy = 0.0;    // 0 for empty bins
};

/// M equal-width confidence bins over (0, 1]. A confidence on a boundary
/// belongs to the lower bin (half-open intervals (lower, upper]).
struct ReliabilityHistogram {
  std::vector<ReliabilityBin> bins;
  std::size_t total_count = 0;
};

ReliabilityHistogram reliability_histogram(const LogitSet& set, double temperature,
                                           int bin_count);

/// Expected calibration error: sum_m (|B_m| / n) * |acc(B_m) - conf(B_m)|.
double ece(const ReliabilityHistogram& histogram);

struct FitOptions {
  double t_min = 0.05;
  double t_max = 20.0;
  double log_tolerance = 1e-4;  // absolute tolerance on log T
};

struct TemperatureFit {
  double temperature = 1.0;
  double nll_before = 0.0;  // at T = 1
  double nll_after = 0.0;   // at the fitted T
  bool converged = false;
  bool clamped_at_bound = false;
  bool degenerate_input = false;  // constant logit rows; T = 1 returned
  int evaluations = 0;            // NLL evaluations spent by the search
};

/// Fit the scaling temperature by minimizing NLL over [t_min, t_max] with
/// golden-section search on log T. The candidate set always includes T = 1
/// and both bounds, so nll_after <= nll(set, 1) holds unconditionally.
TemperatureFit fit_temperature(const LogitSet& validation_logits,
                               const FitOptions& options = {});

struct CalibrationReport {
  double ece_before = 0.0;
  double ece_after = 0.0;
  double nll_before = 0.0;
  double nll_after = 0.0;
  double accuracy = 0.0;  // identical before/after by argmax invariance
  double temperature = 1.0;
};

/// Before/after metrics on one logit set: before at T = 1, after at the
/// fitted temperature.
CalibrationReport calibration_report(const LogitSet& set, const TemperatureFit& fit,
                                     int bin_count);

}  // namespace calikd::calibration
