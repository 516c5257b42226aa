#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "calikd/calibration.hpp"
#include "calikd/error.hpp"
#include "calikd/matrix.hpp"
#include "calikd/rng.hpp"

using calikd::Matrix;
using namespace calikd::calibration;

namespace {

LogitSet make_set(Matrix logits, std::vector<int> labels) {
  LogitSet set;
  set.logits = std::move(logits);
  set.labels = std::move(labels);
  return set;
}

// two-class row whose top-class confidence is exactly c
double logit_for_confidence(double c) { return std::log(c / (1.0 - c)); }

// confidences [0.9, 0.8, 0.6, 0.55] with correctness [1, 0, 1, 0]:
// the label is class 0 (the argmax) when correct, class 1 when wrong
LogitSet quartet_fixture() {
  Matrix logits(4, 2);
  const double confs[4] = {0.9, 0.8, 0.6, 0.55};
  for (int i = 0; i < 4; ++i) logits(i, 0) = logit_for_confidence(confs[i]);
  return make_set(std::move(logits), {0, 1, 0, 1});
}

// overconfident three-class set: margin 5 logits, 20% label noise
LogitSet overconfident_fixture(std::size_t n = 600) {
  calikd::Pcg32 rng(2718, calikd::rng_stream::kData);
  Matrix logits(n, 3);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int truth = static_cast<int>(i % 3);
    for (int k = 0; k < 3; ++k) {
      logits(i, static_cast<std::size_t>(k)) =
          (k == truth ? 5.0 : 0.0) + 0.1 * rng.next_gaussian();
    }
    labels[i] = (i % 5 == 0) ? (truth + 1) % 3 : truth;
  }
  return make_set(std::move(logits), std::move(labels));
}

LogitSet random_set(std::size_t n, std::size_t classes, std::uint64_t seed) {
  calikd::Pcg32 rng(seed, calikd::rng_stream::kData);
  Matrix logits(n, classes);
  for (double& v : logits.data()) v = 2.0 * rng.next_gaussian();
  std::vector<int> labels(n);
  for (auto& y : labels) y = static_cast<int>(rng.next_below(static_cast<std::uint32_t>(classes)));
  return make_set(std::move(logits), std::move(labels));
}

}  // namespace

TEST_SUITE("calibration") {

TEST_CASE("LogitSet validation") {
  CHECK_THROWS_AS(make_set(Matrix(0, 2), {}).validate(), calikd::ValidationError);
  CHECK_THROWS_AS(make_set(Matrix(2, 1), {0, 0}).validate(), calikd::ValidationError);
  CHECK_THROWS_AS(make_set(Matrix(2, 2), {0}).validate(), calikd::ValidationError);
  CHECK_THROWS_AS(make_set(Matrix(1, 2), {2}).validate(), calikd::ValidationError);
  Matrix bad(1, 2);
  bad(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(make_set(std::move(bad), {0}).validate(), calikd::ValidationError);
  CHECK_NOTHROW(make_set(Matrix(2, 2), {0, 1}).validate());
}

TEST_CASE("calibrated confidences on hand rows") {
  const LogitSet uniform = make_set(Matrix(1, 3), {0});
  for (const double t : {0.5, 1.0, 7.0}) {
    const auto preds = calibrated_confidences(uniform, t);
    REQUIRE(preds.size() == 1);
    CHECK(preds[0].confidence == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(preds[0].predicted_class == 0);  // tie resolves to the lowest index
  }

  const LogitSet one_zero = make_set(Matrix::from_rows({{1.0, 0.0}}), {0});
  const auto pred = calibrated_confidences(one_zero, 1.0);
  // e / (1 + e)
  CHECK(pred[0].confidence == doctest::Approx(0.7310585786300049).epsilon(1e-15));
  CHECK(pred[0].predicted_class == 0);

  // z / T identity: [4, 0] at T = 4 is [1, 0] at T = 1, bit for bit
  const LogitSet four_zero = make_set(Matrix::from_rows({{4.0, 0.0}}), {0});
  CHECK(calibrated_confidences(four_zero, 4.0)[0].confidence == pred[0].confidence);

  CHECK_THROWS_AS(calibrated_confidences(one_zero, 0.0), calikd::DomainError);
  CHECK_THROWS_AS(calibrated_confidences(one_zero, -2.0), calikd::DomainError);
}

TEST_CASE("predicted class never depends on the temperature") {
  const LogitSet set = random_set(200, 5, 99);
  const auto base = calibrated_confidences(set, 1.0);
  for (const double t : {0.05, 0.3, 2.5, 20.0}) {
    const auto scaled = calibrated_confidences(set, t);
    for (std::size_t i = 0; i < base.size(); ++i) {
      CHECK(scaled[i].predicted_class == base[i].predicted_class);
      CHECK(scaled[i].confidence > 0.0);
      CHECK(scaled[i].confidence <= 1.0);
    }
  }
}

TEST_CASE("nll hand values") {
  // huge margin: NLL indistinguishable from 0
  const LogitSet sure = make_set(Matrix::from_rows({{40.0, 0.0}}), {0});
  CHECK(nll(sure, 1.0) >= 0.0);
  CHECK(nll(sure, 1.0) < 1e-12);

  // uniform over 10 classes
  const LogitSet flat = make_set(Matrix(1, 10), {7});
  CHECK(nll(flat, 1.0) == doctest::Approx(std::log(10.0)).epsilon(1e-15));

  // two samples at probability one half each
  const LogitSet halves = make_set(Matrix(2, 2), {0, 1});
  CHECK(nll(halves, 1.0) == doctest::Approx(std::numbers::ln2).epsilon(1e-15));

  // mean across unequal rows: (ln 2 + ln(4/3)) / 2
  Matrix mixed(2, 2);
  mixed(1, 0) = std::log(3.0);
  const LogitSet pair = make_set(std::move(mixed), {0, 0});
  const double expected = 0.5 * (std::numbers::ln2 + std::log(4.0 / 3.0));
  CHECK(nll(pair, 1.0) == doctest::Approx(expected).epsilon(1e-14));

  // z / T identity holds for the likelihood too
  const LogitSet four_zero = make_set(Matrix::from_rows({{4.0, 0.0}}), {0});
  const LogitSet one_zero = make_set(Matrix::from_rows({{1.0, 0.0}}), {0});
  CHECK(nll(four_zero, 4.0) == nll(one_zero, 1.0));
}

TEST_CASE("accuracy uses raw-logit argmax with ties to the lowest index") {
  const LogitSet set = make_set(Matrix::from_rows({{1.0, 1.0}, {0.0, 1.0}}), {0, 1});
  CHECK(accuracy(set) == 1.0);
  const LogitSet half = make_set(Matrix::from_rows({{1.0, 1.0}, {0.0, 1.0}}), {1, 1});
  CHECK(half.labels.size() == 2);
  CHECK(accuracy(half) == 0.5);
}

TEST_CASE("reliability histogram puts confidence 1 in the last bin") {
  Matrix logits(3, 2);
  for (int i = 0; i < 3; ++i) logits(i, 0) = 1000.0;
  const LogitSet set = make_set(std::move(logits), {0, 0, 1});
  const ReliabilityHistogram hist = reliability_histogram(set, 1.0, 10);
  REQUIRE(hist.bins.size() == 10);
  CHECK(hist.total_count == 3);
  for (int m = 0; m < 9; ++m) CHECK(hist.bins[m].count == 0);
  CHECK(hist.bins[9].count == 3);
  CHECK(hist.bins[9].mean_confidence == 1.0);
  CHECK(hist.bins[9].mean_accuracy == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(hist.bins[9].lower == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(hist.bins[9].upper == 1.0);
}

TEST_CASE("a single bin degenerates to overall means") {
  const LogitSet set = quartet_fixture();
  const ReliabilityHistogram hist = reliability_histogram(set, 1.0, 1);
  REQUIRE(hist.bins.size() == 1);
  CHECK(hist.bins[0].count == 4);
  CHECK(hist.bins[0].mean_confidence == doctest::Approx(0.7125).epsilon(1e-12));
  CHECK(hist.bins[0].mean_accuracy == 0.5);
  CHECK(hist.bins[0].lower == 0.0);
  CHECK(hist.bins[0].upper == 1.0);
}

TEST_CASE("boundary confidences fall into the lower bin") {
  // all-zero two-class logits give confidence exactly one half
  const LogitSet set = make_set(Matrix(1, 2), {0});
  const ReliabilityHistogram hist = reliability_histogram(set, 1.0, 2);
  CHECK(hist.bins[0].count == 1);
  CHECK(hist.bins[1].count == 0);
}

TEST_CASE("quartet fixture bins as enumerated by hand") {
  const LogitSet set = quartet_fixture();
  const ReliabilityHistogram hist = reliability_histogram(set, 1.0, 4);
  REQUIRE(hist.bins.size() == 4);
  CHECK(hist.bins[0].count == 0);
  CHECK(hist.bins[1].count == 0);
  CHECK(hist.bins[2].count == 2);  // 0.55 and 0.6 in (0.5, 0.75]
  CHECK(hist.bins[3].count == 2);  // 0.8 and 0.9 in (0.75, 1]
  CHECK(hist.bins[2].mean_confidence == doctest::Approx(0.575).epsilon(1e-12));
  CHECK(hist.bins[2].mean_accuracy == 0.5);
  CHECK(hist.bins[3].mean_confidence == doctest::Approx(0.85).epsilon(1e-12));
  CHECK(hist.bins[3].mean_accuracy == 0.5);
  // empty bins report zero means
  CHECK(hist.bins[0].mean_confidence == 0.0);
  CHECK(hist.bins[0].mean_accuracy == 0.0);
}

TEST_CASE("histogram counts always sum to n") {
  const LogitSet set = random_set(333, 4, 5);
  for (const int m : {1, 2, 15, 40}) {
    const ReliabilityHistogram hist = reliability_histogram(set, 1.3, m);
    std::size_t total = 0;
    for (const auto& bin : hist.bins) {
      total += bin.count;
      if (bin.count > 0) {
        CHECK(bin.mean_confidence > bin.lower);
        CHECK(bin.mean_confidence <= bin.upper);
      }
    }
    CHECK(total == 333);
    CHECK(hist.total_count == 333);
  }
  CHECK_THROWS_AS(reliability_histogram(set, 1.0, 0), calikd::DomainError);
}

TEST_CASE("ece extremes") {
  Matrix logits(2, 2);
  logits(0, 0) = 1000.0;
  logits(1, 0) = 1000.0;
  const LogitSet all_correct = make_set(logits, {0, 0});
  CHECK(ece(reliability_histogram(all_correct, 1.0, 15)) == 0.0);
  const LogitSet all_wrong = make_set(logits, {1, 1});
  CHECK(ece(reliability_histogram(all_wrong, 1.0, 15)) == 1.0);
  CHECK_THROWS_AS(ece(ReliabilityHistogram{}), calikd::DomainError);
}

TEST_CASE("ece of the quartet fixture is 0.2125") {
  const LogitSet set = quartet_fixture();
  CHECK(ece(reliability_histogram(set, 1.0, 2)) ==
        doctest::Approx(0.2125).scale(1.0).epsilon(1e-12));
  // the same value happens to arise at four bins
  CHECK(ece(reliability_histogram(set, 1.0, 4)) ==
        doctest::Approx(0.2125).scale(1.0).epsilon(1e-12));
}

TEST_CASE("ece stays within the unit interval") {
  for (const std::uint64_t seed : {11ull, 22ull, 33ull}) {
    const LogitSet set = random_set(100, 3, seed);
    const double value = ece(reliability_histogram(set, 1.0, 15));
    CHECK(value >= 0.0);
    CHECK(value <= 1.0);
  }
}

TEST_CASE("fit_temperature validates its options") {
  const LogitSet set = random_set(20, 3, 1);
  FitOptions bad;
  bad.t_min = 0.0;
  CHECK_THROWS_AS(fit_temperature(set, bad), calikd::ConfigError);
  bad.t_min = 5.0;
  bad.t_max = 2.0;
  CHECK_THROWS_AS(fit_temperature(set, bad), calikd::ConfigError);
  bad.t_min = 2.0;
  bad.t_max = 3.0;  // excludes 1
  CHECK_THROWS_AS(fit_temperature(set, bad), calikd::ConfigError);
  bad.t_min = 0.5;
  bad.t_max = 2.0;
  bad.log_tolerance = 0.0;
  CHECK_THROWS_AS(fit_temperature(set, bad), calikd::ConfigError);
}

TEST_CASE("fitting an overconfident set raises the temperature") {
  const LogitSet set = overconfident_fixture();
  const TemperatureFit fit = fit_temperature(set);
  CHECK(fit.converged);
  CHECK_FALSE(fit.degenerate_input);
  CHECK(fit.temperature > 1.5);
  CHECK(fit.temperature < 4.0);
  CHECK(fit.nll_after <= fit.nll_before + 1e-12);
  CHECK(fit.nll_after < fit.nll_before - 0.05);  // a real improvement here
  CHECK(fit.evaluations > 20);
  CHECK(fit.evaluations < 300);

  const CalibrationReport report = calibration_report(set, fit, 15);
  CHECK(report.ece_after < report.ece_before);
  CHECK(report.nll_before == fit.nll_before);
  CHECK(report.temperature == fit.temperature);
  // argmax invariance keeps accuracy fixed
  CHECK(report.accuracy == accuracy(set));
}

TEST_CASE("fit is scale equivariant") {
  const LogitSet set = overconfident_fixture(300);
  const TemperatureFit base = fit_temperature(set);
  for (const double c : {0.5, 2.0}) {
    LogitSet scaled = set;
    for (double& v : scaled.logits.data()) v *= c;
    const TemperatureFit fit = fit_temperature(scaled);
    CHECK(std::abs(std::log(fit.temperature / (c * base.temperature))) < 3e-4);
  }
}

TEST_CASE("a single confident sample clamps at the lower bound") {
  const LogitSet set = make_set(Matrix::from_rows({{1.2, 0.0}}), {0});
  const TemperatureFit fit = fit_temperature(set);
  CHECK(fit.temperature == FitOptions{}.t_min);
  CHECK(fit.clamped_at_bound);
  CHECK(fit.nll_after < fit.nll_before);
}

TEST_CASE("constant logit rows short-circuit to T = 1") {
  const LogitSet set =
      make_set(Matrix::from_rows({{2.0, 2.0, 2.0}, {0.0, 0.0, 0.0}}), {0, 1});
  const TemperatureFit fit = fit_temperature(set);
  CHECK(fit.degenerate_input);
  CHECK(fit.temperature == 1.0);
  CHECK(fit.converged);
  CHECK(fit.nll_after == fit.nll_before);

  const CalibrationReport report = calibration_report(set, fit, 15);
  CHECK(report.ece_before == report.ece_after);
  CHECK(report.nll_before == report.nll_after);
}

TEST_CASE("nll_after never exceeds nll_before across random sets") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const LogitSet set = random_set(60, 4, seed);
    const TemperatureFit fit = fit_temperature(set);
    CHECK(fit.nll_after <= fit.nll_before + 1e-12);
    CHECK(fit.temperature >= FitOptions{}.t_min);
    CHECK(fit.temperature <= FitOptions{}.t_max);
  }
}

}  // TEST_SUITE
