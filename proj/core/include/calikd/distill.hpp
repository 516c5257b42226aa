#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "calikd/calibration.hpp"
#include "calikd/data.hpp"
#include "calikd/nnet.hpp"

namespace calikd::distill {

enum class Mode { vanilla, calibrated };

const char* to_string(Mode mode);

struct DistillConfig {
  double alpha = 0.8;            // soft-target weight in [0, 1]
  double kd_temperature = 4.0;   // hand-chosen t, vanilla mode only
  Mode mode = Mode::vanilla;
  nnet::TrainConfig train;
};

/// Blended distillation loss:
///   alpha * temp^2 * meanKL(softmax(z_T/temp) || softmax(z_S/temp))
///   + (1 - alpha) * CE(labels, softmax(z_S))
/// The hard-label term always runs at temperature 1. With alpha == 0 the
/// computation reduces to the plain cross-entropy path, bit for bit.
double kd_loss(const Matrix& student_logits, const Matrix& teacher_logits,
               const std::vector<int>& labels, double temperature, double alpha);

/// kd_loss plus its exact gradient w.r.t. the student logits.
struct KdLossGrad {
  double loss = 0.0;
  double accuracy = 0.0;  // student accuracy against the hard labels
  Matrix student_logit_grad;
};
KdLossGrad kd_loss_grad(const Matrix& student_logits, const Matrix& teacher_logits,
                        const std::vector<int>& labels, double temperature,
                        double alpha);

struct DistillResult {
  nnet::MlpModel student;
  nnet::TrainTrace trace;
  double effective_temperature = 0.0;  // t in vanilla mode, fitted T otherwise
};

/// Train the student against the frozen teacher. Calibrated mode takes its
/// temperature from `fit` and requires one (ConfigError otherwise). Teacher
/// logits are recomputed per batch; no gradient ever reaches the teacher.
DistillResult distill_student(nnet::MlpModel student, const nnet::MlpModel& teacher,
                              const data::Dataset& dataset, const DistillConfig& config,
                              const std::optional<calibration::TemperatureFit>& fit);

/// One (teacher size, mode, seed) cell of the comparison table.
struct SweepRow {
  int teacher_size = 0;
  std::uint64_t seed = 0;
  Mode mode = Mode::vanilla;
  double teacher_accuracy = 0.0;  // test split
  double teacher_ece_before = 0.0;
  double teacher_ece_after = 0.0;
  double temperature = 0.0;  // fitted T
  double student_accuracy = 0.0;  // test split
};

/// Mean and sample standard deviation of student accuracy across seeds for
/// one (teacher size, mode) cell.
struct SweepCell {
  int teacher_size = 0;
  Mode mode = Mode::vanilla;
  double student_accuracy_mean = 0.0;
  double student_accuracy_stddev = 0.0;
  std::size_t runs = 0;
};

std::vector<SweepCell> aggregate_rows(const std::vector<SweepRow>& rows);

/// Inputs shared by every cell of a teacher-size sweep. The dataset splits
/// are fixed; the seeds vary initialization and shuffle order.
struct SweepPlan {
  std::vector<int> teacher_sizes;  // sorted ascending
  int teacher_hidden_layers = 1;
  int student_size = 16;
  int student_hidden_layers = 1;
  nnet::TrainConfig train;  // per-run seed is derived from `seeds`
  double alpha = 0.8;
  double kd_temperature = 4.0;
  calibration::FitOptions fit_options;
  int bin_count = 15;
  std::vector<std::uint64_t> seeds;
};

/// Everything produced while building one teacher: the model, its logits on
/// the two held-out splits, and the temperature fit on validation.
struct TeacherCell {
  int size = 0;
  std::uint64_t seed = 0;
  nnet::MlpModel model;
  nnet::TrainTrace trace;
  calibration::LogitSet validation_logits;
  calibration::LogitSet test_logits;
  calibration::TemperatureFit fit;
  calibration::CalibrationReport validation_report;
  calibration::CalibrationReport test_report;
};

struct StudentCell {
  int teacher_size = 0;
  std::uint64_t seed = 0;
  Mode mode = Mode::vanilla;
  DistillResult result;
  double test_accuracy = 0.0;
};

/// Optional observers invoked as cells complete (used by the pipeline to
/// persist artifacts). Calls are serialized.
struct SweepSink {
  std::function<void(const TeacherCell&)> on_teacher;
  std::function<void(const StudentCell&)> on_student;
};

/// Train every teacher, calibrate it on the validation split, then distill
/// the student in both modes per seed. Cells run on `jobs` worker threads
/// (0 = hardware concurrency); results are deterministic regardless of the
/// thread count.
std::vector<SweepRow> teacher_size_sweep(const SweepPlan& plan,
                                         const data::Dataset& train_split,
                                         const data::Dataset& validation_split,
                                         const data::Dataset& test_split,
                                         int jobs = 1,
                                         const SweepSink* sink = nullptr);

/// Seed derivation for sweep cells (exposed so pipeline stages reproduce the
/// exact same streams when run one cell at a time).
std::uint64_t derive_seed(std::uint64_t seed, const std::string& role, int size);

/// Hidden-layer stack for a teacher/student of the given width.
std::vector<std::size_t> layer_dims(std::size_t input_dim, int width, int hidden_layers,
                                    std::size_t class_count);

}  // namespace calikd::distill
