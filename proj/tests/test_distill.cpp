#include <doctest.h>

#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "calikd/data.hpp"
#include "calikd/digest.hpp"
#include "calikd/distill.hpp"
#include "calikd/error.hpp"
#include "calikd/matrix.hpp"
#include "calikd/nnet.hpp"
#include "calikd/rng.hpp"

using calikd::Matrix;
using namespace calikd::distill;

namespace {

// KL(softmax([2,0]/2) || softmax([0,0]/2)) = ln 2 - H(sigma(1))
constexpr double kQuartetKl = 0.11094407167172736;

calikd::data::Dataset small_blobs(std::size_t samples, std::uint64_t seed) {
  calikd::data::SyntheticSpec spec;
  spec.class_count = 3;
  spec.dims = 6;
  spec.clusters_per_class = 1;
  spec.cluster_spread = 0.3;
  spec.samples = samples;
  spec.seed = seed;
  return calikd::data::generate_synthetic(spec);
}

Matrix random_logits(std::size_t n, std::size_t k, std::uint64_t seed) {
  calikd::Pcg32 rng(seed, calikd::rng_stream::kData);
  Matrix m(n, k);
  for (double& v : m.data()) v = 2.0 * rng.next_gaussian();
  return m;
}

std::vector<int> cycle_labels(std::size_t n, int k) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i) % k;
  return labels;
}

}  // namespace

TEST_SUITE("distill") {

TEST_CASE("kd_loss on the hand-computed two-class fixture") {
  const Matrix student = Matrix::from_rows({{0.0, 0.0}});
  const Matrix teacher = Matrix::from_rows({{2.0, 0.0}});
  const std::vector<int> labels = {0};

  // pure soft loss: temp^2 * KL
  CHECK(kd_loss(student, teacher, labels, 2.0, 1.0) ==
        doctest::Approx(4.0 * kQuartetKl).epsilon(1e-12));
  // pure hard loss: cross entropy of uniform logits
  CHECK(kd_loss(student, teacher, labels, 2.0, 0.0) ==
        doctest::Approx(std::numbers::ln2).epsilon(1e-15));
  // blend
  CHECK(kd_loss(student, teacher, labels, 2.0, 0.3) ==
        doctest::Approx(0.3 * 4.0 * kQuartetKl + 0.7 * std::numbers::ln2)
            .epsilon(1e-12));
}

TEST_CASE("matching teacher and student logits zero the soft term") {
  const Matrix logits = random_logits(5, 3, 3);
  const std::vector<int> labels = cycle_labels(5, 3);
  const KdLossGrad out = kd_loss_grad(logits, logits, labels, 3.0, 1.0);
  CHECK(out.loss == 0.0);
  for (const double g : out.student_logit_grad.data()) CHECK(g == 0.0);
}

TEST_CASE("soft gradient pulls the student toward the teacher") {
  const Matrix student = Matrix::from_rows({{0.0, 0.0}});
  const Matrix teacher = Matrix::from_rows({{2.0, 0.0}});
  const KdLossGrad out = kd_loss_grad(student, teacher, {0}, 2.0, 1.0);
  // teacher puts more mass on class 0 than the student does
  CHECK(out.student_logit_grad(0, 0) < 0.0);
  CHECK(out.student_logit_grad(0, 1) > 0.0);
  CHECK(out.loss == doctest::Approx(4.0 * kQuartetKl).epsilon(1e-12));
}

TEST_CASE("alpha zero reduces to the plain cross-entropy path bit for bit") {
  const Matrix student = random_logits(7, 4, 8);
  const Matrix teacher = random_logits(7, 4, 9);
  const std::vector<int> labels = cycle_labels(7, 4);

  const KdLossGrad kd = kd_loss_grad(student, teacher, labels, 6.0, 0.0);
  const auto plain =
      calikd::nnet::softmax_ce(student, calikd::nnet::Targets::hard(labels), 1.0);
  CHECK(kd.loss == plain.loss);
  CHECK(kd.student_logit_grad == plain.logit_grad);
}

TEST_CASE("kd gradient matches central differences") {
  const Matrix student = random_logits(4, 3, 5);
  const Matrix teacher = random_logits(4, 3, 6);
  const std::vector<int> labels = cycle_labels(4, 3);
  const double temp = 3.0;
  const double alpha = 0.7;

  const KdLossGrad analytic = kd_loss_grad(student, teacher, labels, temp, alpha);
  const double h = 1e-6;
  for (std::size_t i = 0; i < student.data().size(); ++i) {
    Matrix plus = student;
    Matrix minus = student;
    plus.data()[i] += h;
    minus.data()[i] -= h;
    const double numeric = (kd_loss(plus, teacher, labels, temp, alpha) -
                            kd_loss(minus, teacher, labels, temp, alpha)) /
                           (2.0 * h);
    const double got = analytic.student_logit_grad.data()[i];
    CHECK(std::abs(got - numeric) < 1e-7 + 1e-6 * std::abs(got));
  }
}

TEST_CASE("kd_loss_grad reports student accuracy on raw logits") {
  const Matrix student = Matrix::from_rows({{3.0, 0.0}, {0.0, 3.0}, {3.0, 0.0}});
  const Matrix teacher = Matrix(3, 2);
  const KdLossGrad out = kd_loss_grad(student, teacher, {0, 1, 1}, 4.0, 1.0);
  CHECK(out.accuracy == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("kd_loss validates its arguments") {
  const Matrix student = random_logits(3, 2, 1);
  const Matrix teacher = random_logits(3, 2, 2);
  const std::vector<int> labels = cycle_labels(3, 2);
  CHECK_THROWS_AS(kd_loss(student, random_logits(4, 2, 2), labels, 2.0, 0.5),
                  calikd::ShapeError);
  CHECK_THROWS_AS(kd_loss(student, random_logits(3, 3, 2), labels, 2.0, 0.5),
                  calikd::ShapeError);
  CHECK_THROWS_AS(kd_loss(student, teacher, cycle_labels(2, 2), 2.0, 0.5),
                  calikd::ShapeError);
  CHECK_THROWS_AS(kd_loss(student, teacher, labels, 0.0, 0.5), calikd::DomainError);
  CHECK_THROWS_AS(kd_loss(student, teacher, labels, -1.0, 0.5), calikd::DomainError);
  CHECK_THROWS_AS(kd_loss(student, teacher, labels, 2.0, -0.01), calikd::DomainError);
  CHECK_THROWS_AS(kd_loss(student, teacher, labels, 2.0, 1.01), calikd::DomainError);
}

TEST_CASE("derive_seed is a stable hash of role, size, and seed") {
  CHECK(derive_seed(1, "teacher-init", 32) == calikd::fnv1a64("teacher-init:32:1"));
  CHECK(derive_seed(1, "teacher-init", 32) != derive_seed(1, "teacher-train", 32));
  CHECK(derive_seed(1, "teacher-init", 32) != derive_seed(1, "teacher-init", 64));
  CHECK(derive_seed(1, "teacher-init", 32) != derive_seed(2, "teacher-init", 32));
}

TEST_CASE("layer_dims builds the hidden stack") {
  CHECK(layer_dims(16, 32, 1, 8) == std::vector<std::size_t>{16, 32, 8});
  CHECK(layer_dims(16, 32, 3, 8) == std::vector<std::size_t>{16, 32, 32, 32, 8});
  CHECK_THROWS_AS(layer_dims(16, 0, 1, 8), calikd::ConfigError);
  CHECK_THROWS_AS(layer_dims(16, 32, 0, 8), calikd::ConfigError);
}

TEST_CASE("mode names are stable") {
  CHECK(std::string(to_string(Mode::vanilla)) == "vanilla");
  CHECK(std::string(to_string(Mode::calibrated)) == "calibrated");
}

TEST_CASE("aggregate_rows computes mean and sample stddev per cell") {
  std::vector<SweepRow> rows;
  for (const double acc : {0.5, 0.6, 0.7}) {
    SweepRow row;
    row.teacher_size = 32;
    row.mode = Mode::vanilla;
    row.student_accuracy = acc;
    rows.push_back(row);
  }
  SweepRow lone;
  lone.teacher_size = 32;
  lone.mode = Mode::calibrated;
  lone.student_accuracy = 0.9;
  rows.push_back(lone);

  const auto cells = aggregate_rows(rows);
  REQUIRE(cells.size() == 2);
  CHECK(cells[0].teacher_size == 32);
  CHECK(cells[0].mode == Mode::vanilla);
  CHECK(cells[0].runs == 3);
  CHECK(cells[0].student_accuracy_mean == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(cells[0].student_accuracy_stddev == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(cells[1].mode == Mode::calibrated);
  CHECK(cells[1].runs == 1);
  CHECK(cells[1].student_accuracy_mean == 0.9);
  CHECK(cells[1].student_accuracy_stddev == 0.0);
}

TEST_CASE("distill_student requires a fit in calibrated mode") {
  const auto ds = small_blobs(60, 4);
  calikd::Pcg32 teacher_rng(1, calikd::rng_stream::kInit);
  const auto teacher =
      calikd::nnet::MlpModel::initialized({6, 8, 3}, teacher_rng);
  calikd::Pcg32 student_rng(2, calikd::rng_stream::kInit);
  const auto student = calikd::nnet::MlpModel::initialized({6, 4, 3}, student_rng);

  DistillConfig config;
  config.mode = Mode::calibrated;
  config.train.batch_size = 20;
  config.train.max_epochs = 1;
  CHECK_THROWS_AS(distill_student(student, teacher, ds, config, std::nullopt),
                  calikd::ConfigError);

  calikd::calibration::TemperatureFit fit;
  fit.temperature = 2.5;
  const DistillResult result = distill_student(student, teacher, ds, config, fit);
  CHECK(result.effective_temperature == 2.5);

  DistillConfig vanilla = config;
  vanilla.mode = Mode::vanilla;
  vanilla.kd_temperature = 4.0;
  const DistillResult vresult =
      distill_student(student, teacher, ds, vanilla, std::nullopt);
  CHECK(vresult.effective_temperature == 4.0);
}

TEST_CASE("distill_student rejects mismatched teacher and student") {
  const auto ds = small_blobs(60, 4);
  calikd::Pcg32 rng(1, calikd::rng_stream::kInit);
  const auto teacher = calikd::nnet::MlpModel::initialized({5, 8, 3}, rng);
  calikd::Pcg32 rng2(2, calikd::rng_stream::kInit);
  const auto student = calikd::nnet::MlpModel::initialized({6, 4, 3}, rng2);
  DistillConfig config;
  config.train.batch_size = 20;
  config.train.max_epochs = 1;
  CHECK_THROWS_AS(distill_student(student, teacher, ds, config, std::nullopt),
                  calikd::ShapeError);
}

TEST_CASE("alpha zero distillation equals plain training exactly") {
  const auto ds = small_blobs(90, 6);
  calikd::Pcg32 teacher_rng(3, calikd::rng_stream::kInit);
  const auto teacher =
      calikd::nnet::MlpModel::initialized({6, 12, 3}, teacher_rng);
  calikd::Pcg32 student_rng(4, calikd::rng_stream::kInit);
  const auto student = calikd::nnet::MlpModel::initialized({6, 5, 3}, student_rng);

  DistillConfig config;
  config.alpha = 0.0;
  config.kd_temperature = 4.0;
  config.train.batch_size = 30;
  config.train.max_epochs = 4;
  config.train.initial_lr = 0.05;
  config.train.seed = 99;

  const DistillResult kd = distill_student(student, teacher, ds, config, std::nullopt);
  const auto plain = calikd::nnet::train(student, ds, config.train);
  CHECK(kd.student == plain.model);
  CHECK(kd.trace == plain.trace);
}

TEST_CASE("distillation transfers a trained teacher to a small student") {
  const auto ds = small_blobs(240, 12);
  calikd::Pcg32 teacher_rng(5, calikd::rng_stream::kInit);
  calikd::nnet::TrainConfig teacher_config;
  teacher_config.batch_size = 60;
  teacher_config.max_epochs = 40;
  teacher_config.initial_lr = 0.1;
  teacher_config.seed = 7;
  const auto teacher = calikd::nnet::train(
      calikd::nnet::MlpModel::initialized({6, 32, 3}, teacher_rng), ds,
      teacher_config);

  calikd::Pcg32 student_rng(6, calikd::rng_stream::kInit);
  const auto student = calikd::nnet::MlpModel::initialized({6, 8, 3}, student_rng);

  DistillConfig config;
  config.alpha = 1.0;  // learn from the teacher alone
  config.kd_temperature = 2.0;
  config.train.batch_size = 60;
  config.train.max_epochs = 40;
  config.train.initial_lr = 0.1;
  config.train.seed = 8;

  const DistillResult result =
      distill_student(student, teacher.model, ds, config, std::nullopt);
  CHECK(result.trace.epochs.back().accuracy > 0.85);

  // determinism of the full path
  const DistillResult again =
      distill_student(student, teacher.model, ds, config, std::nullopt);
  CHECK(result.student == again.student);
  CHECK(result.trace == again.trace);
}

TEST_CASE("teacher_size_sweep covers every size, mode, and seed") {
  const auto full = small_blobs(240, 20);
  const auto parts = calikd::data::split(full, {}, 17);

  SweepPlan plan;
  plan.teacher_sizes = {4, 8};
  plan.student_size = 4;
  plan.train.batch_size = 32;
  plan.train.max_epochs = 2;
  plan.train.initial_lr = 0.1;
  plan.seeds = {1, 2};

  int teachers_seen = 0;
  int students_seen = 0;
  SweepSink sink;
  sink.on_teacher = [&](const TeacherCell&) { ++teachers_seen; };
  sink.on_student = [&](const StudentCell&) { ++students_seen; };

  const auto rows = teacher_size_sweep(plan, parts[0], parts[1], parts[2], 1, &sink);
  CHECK(rows.size() == 8);  // 2 sizes x 2 modes x 2 seeds
  CHECK(teachers_seen == 4);
  CHECK(students_seen == 8);

  int vanilla_rows = 0;
  for (const SweepRow& row : rows) {
    CHECK((row.teacher_size == 4 || row.teacher_size == 8));
    CHECK((row.seed == 1 || row.seed == 2));
    CHECK(row.teacher_accuracy >= 0.0);
    CHECK(row.teacher_accuracy <= 1.0);
    CHECK(row.student_accuracy >= 0.0);
    CHECK(row.student_accuracy <= 1.0);
    CHECK(row.temperature > 0.0);
    if (row.mode == Mode::vanilla) ++vanilla_rows;
  }
  CHECK(vanilla_rows == 4);
}

TEST_CASE("sweep results do not depend on the worker count") {
  const auto full = small_blobs(240, 20);
  const auto parts = calikd::data::split(full, {}, 17);

  SweepPlan plan;
  plan.teacher_sizes = {4, 8};
  plan.student_size = 4;
  plan.train.batch_size = 32;
  plan.train.max_epochs = 2;
  plan.train.initial_lr = 0.1;
  plan.seeds = {1, 2};

  const auto serial = teacher_size_sweep(plan, parts[0], parts[1], parts[2], 1);
  const auto threaded = teacher_size_sweep(plan, parts[0], parts[1], parts[2], 3);
  REQUIRE(serial.size() == threaded.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].teacher_size == threaded[i].teacher_size);
    CHECK(serial[i].seed == threaded[i].seed);
    CHECK(serial[i].mode == threaded[i].mode);
    CHECK(serial[i].student_accuracy == threaded[i].student_accuracy);
    CHECK(serial[i].teacher_accuracy == threaded[i].teacher_accuracy);
    CHECK(serial[i].temperature == threaded[i].temperature);
  }
}

TEST_CASE("sweep plans are validated") {
  const auto full = small_blobs(120, 20);
  const auto parts = calikd::data::split(full, {}, 17);
  SweepPlan plan;
  plan.teacher_sizes = {8, 4};  // not sorted
  plan.seeds = {1};
  plan.train.batch_size = 16;
  plan.train.max_epochs = 1;
  CHECK_THROWS_AS(teacher_size_sweep(plan, parts[0], parts[1], parts[2]),
                  calikd::ConfigError);
  plan.teacher_sizes = {};
  CHECK_THROWS_AS(teacher_size_sweep(plan, parts[0], parts[1], parts[2]),
                  calikd::ConfigError);
  plan.teacher_sizes = {4};
  plan.seeds = {};
  CHECK_THROWS_AS(teacher_size_sweep(plan, parts[0], parts[1], parts[2]),
                  calikd::ConfigError);
}

}  // TEST_SUITE
