#include "calikd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "calikd/digest.hpp"
#include "calikd/error.hpp"
#include "calikd/parallel.hpp"
#include "calikd/softmax.hpp"

namespace calikd::distill {

const char* to_string(Mode mode) {
  return mode == Mode::vanilla ? "vanilla" : "calibrated";
}

namespace {

void check_kd_args(const Matrix& student_logits, const Matrix& teacher_logits,
                   const std::vector<int>& labels, double temperature, double alpha) {
  if (student_logits.rows() != teacher_logits.rows() ||
      student_logits.cols() != teacher_logits.cols()) {
    throw ShapeError("kd_loss: student logits " + std::to_string(student_logits.rows()) +
                     "x" + std::to_string(student_logits.cols()) + " vs teacher " +
                     std::to_string(teacher_logits.rows()) + "x" +
                     std::to_string(teacher_logits.cols()));
  }
  if (labels.size() != student_logits.rows()) {
    throw ShapeError("kd_loss: " + std::to_string(labels.size()) + " labels vs " +
                     std::to_string(student_logits.rows()) + " logit rows");
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw DomainError("kd temperature must be positive, got " +
                      std::to_string(temperature));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw DomainError("alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
}

}  // namespace

KdLossGrad kd_loss_grad(const Matrix& student_logits, const Matrix& teacher_logits,
                        const std::vector<int>& labels, double temperature,
                        double alpha) {
  check_kd_args(student_logits, teacher_logits, labels, temperature, alpha);
  const std::size_t n = student_logits.rows();
  const std::size_t k = student_logits.cols();

  KdLossGrad out;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (argmax(student_logits.row(i)) == static_cast<std::size_t>(labels[i])) ++correct;
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(n);

  if (alpha == 0.0) {
    // exact reduction to the plain hard-label path
    nnet::LogitLossGrad ce =
        nnet::softmax_ce(student_logits, nnet::Targets::hard(labels), 1.0);
    out.loss = ce.loss;
    out.student_logit_grad = std::move(ce.logit_grad);
    return out;
  }

  nnet::LogitLossGrad hard =
      nnet::softmax_ce(student_logits, nnet::Targets::hard(labels), 1.0);

  // soft term: temp^2 * mean KL(softmax(z_T/temp) || softmax(z_S/temp))
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> log_pt(k);
  std::vector<double> log_ps(k);
  double kl_total = 0.0;
  Matrix soft_grad(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    log_softmax(teacher_logits.row(i), temperature, log_pt);
    log_softmax(student_logits.row(i), temperature, log_ps);
    auto g = soft_grad.row(i);
    for (std::size_t c = 0; c < k; ++c) {
      const double pt = std::exp(log_pt[c]);
      kl_total += pt * (log_pt[c] - log_ps[c]);
      // d(temp^2 * meanKL)/dz_S = temp * (p_S - p_T) / n
      g[c] = temperature * inv_n * (std::exp(log_ps[c]) - pt);
    }
  }
  const double soft_loss = temperature * temperature * kl_total * inv_n;

  out.loss = alpha * soft_loss + (1.0 - alpha) * hard.loss;
  out.student_logit_grad = Matrix(n, k);
  for (std::size_t idx = 0; idx < n * k; ++idx) {
    out.student_logit_grad.data()[idx] = alpha * soft_grad.data()[idx] +
                                         (1.0 - alpha) * hard.logit_grad.data()[idx];
  }
  return out;
}

double kd_loss(const Matrix& student_logits, const Matrix& teacher_logits,
               const std::vector<int>& labels, double temperature, double alpha) {
  return kd_loss_grad(student_logits, teacher_logits, labels, temperature, alpha).loss;
}

DistillResult distill_student(nnet::MlpModel student, const nnet::MlpModel& teacher,
                              const data::Dataset& dataset, const DistillConfig& config,
                              const std::optional<calibration::TemperatureFit>& fit) {
  if (config.mode == Mode::calibrated && !fit.has_value()) {
    throw ConfigError("calibrated distillation requires a temperature fit");
  }
  if (!(config.alpha >= 0.0 && config.alpha <= 1.0)) {
    throw ConfigError("alpha must lie in [0, 1]");
  }
  if (teacher.input_dim() != student.input_dim() ||
      teacher.class_count() != student.class_count()) {
    throw ShapeError("distill: teacher " + std::to_string(teacher.input_dim()) + "->" +
                     std::to_string(teacher.class_count()) + " vs student " +
                     std::to_string(student.input_dim()) + "->" +
                     std::to_string(student.class_count()));
  }

  const double eff_temp =
      config.mode == Mode::calibrated ? fit->temperature : config.kd_temperature;
  if (!(eff_temp > 0.0)) {
    throw ConfigError("effective distillation temperature must be positive");
  }

  const double alpha = config.alpha;
  const auto eval = [&teacher, eff_temp, alpha](const nnet::MlpModel& model,
                                                const Matrix& x,
                                                const std::vector<int>& y) {
    if (alpha == 0.0) return nnet::hard_label_batch(model, x, y);
    // teacher logits per batch; the teacher never sees a gradient
    const Matrix teacher_logits = nnet::forward(teacher, x);
    nnet::ForwardCache cache;
    nnet::forward_cached(model, x, cache);
    KdLossGrad kd = kd_loss_grad(cache.logits, teacher_logits, y, eff_temp, alpha);
    nnet::BatchEval out;
    out.loss = kd.loss;
    out.accuracy = kd.accuracy;
    out.grad = nnet::backprop(model, cache, kd.student_logit_grad);
    return out;
  };

  nnet::TrainResult trained =
      nnet::run_training_loop(std::move(student), dataset, config.train, eval);
  DistillResult result;
  result.student = std::move(trained.model);
  result.trace = std::move(trained.trace);
  result.effective_temperature = eff_temp;
  return result;
}

std::vector<SweepCell> aggregate_rows(const std::vector<SweepRow>& rows) {
  std::vector<SweepCell> cells;
  for (const SweepRow& row : rows) {
    auto it = std::find_if(cells.begin(), cells.end(), [&](const SweepCell& c) {
      return c.teacher_size == row.teacher_size && c.mode == row.mode;
    });
    if (it == cells.end()) {
      cells.push_back({row.teacher_size, row.mode, 0.0, 0.0, 0});
      it = std::prev(cells.end());
    }
    it->student_accuracy_mean += row.student_accuracy;
    it->runs += 1;
  }
  for (SweepCell& cell : cells) {
    cell.student_accuracy_mean /= static_cast<double>(cell.runs);
  }
  for (const SweepRow& row : rows) {
    auto it = std::find_if(cells.begin(), cells.end(), [&](const SweepCell& c) {
      return c.teacher_size == row.teacher_size && c.mode == row.mode;
    });
    const double d = row.student_accuracy - it->student_accuracy_mean;
    it->student_accuracy_stddev += d * d;
  }
  for (SweepCell& cell : cells) {
    cell.student_accuracy_stddev =
        cell.runs > 1 ? std::sqrt(cell.student_accuracy_stddev /
                                  static_cast<double>(cell.runs - 1))
                      : 0.0;
  }
  return cells;
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& role, int size) {
  std::string key = role + ":" + std::to_string(size) + ":" + std::to_string(seed);
  return fnv1a64(key);
}

std::vector<std::size_t> layer_dims(std::size_t input_dim, int width, int hidden_layers,
                                    std::size_t class_count) {
  if (width < 1) throw ConfigError("model width must be positive");
  if (hidden_layers < 1) throw ConfigError("hidden layer count must be positive");
  std::vector<std::size_t> dims;
  dims.push_back(input_dim);
  for (int l = 0; l < hidden_layers; ++l) dims.push_back(static_cast<std::size_t>(width));
  dims.push_back(class_count);
  return dims;
}

namespace {

calibration::LogitSet logits_on(const nnet::MlpModel& model, const data::Dataset& split) {
  calibration::LogitSet set;
  set.logits = nnet::forward(model, split.features);
  set.labels = split.labels;
  return set;
}

TeacherCell build_teacher(const SweepPlan& plan, int size,
                          std::uint64_t seed, const data::Dataset& train_split,
                          const data::Dataset& validation_split,
                          const data::Dataset& test_split) {
  TeacherCell cell;
  cell.size = size;
  cell.seed = seed;

  Pcg32 init_rng(derive_seed(seed, "teacher-init", size), rng_stream::kInit);
  nnet::MlpModel model = nnet::MlpModel::initialized(
      layer_dims(train_split.dim(), size, plan.teacher_hidden_layers,
                 static_cast<std::size_t>(train_split.class_count)),
      init_rng);

  nnet::TrainConfig train_config = plan.train;
  train_config.seed = derive_seed(seed, "teacher-train", size);
  nnet::TrainResult trained = nnet::train(std::move(model), train_split, train_config);
  cell.model = std::move(trained.model);
  cell.trace = std::move(trained.trace);

  cell.validation_logits = logits_on(cell.model, validation_split);
  cell.test_logits = logits_on(cell.model, test_split);
  cell.fit = calibration::fit_temperature(cell.validation_logits, plan.fit_options);
  cell.validation_report =
      calibration::calibration_report(cell.validation_logits, cell.fit, plan.bin_count);
  cell.test_report =
      calibration::calibration_report(cell.test_logits, cell.fit, plan.bin_count);
  return cell;
}

StudentCell build_student(const SweepPlan& plan, const TeacherCell& teacher, Mode mode,
                          const data::Dataset& train_split,
                          const data::Dataset& test_split) {
  StudentCell cell;
  cell.teacher_size = teacher.size;
  cell.seed = teacher.seed;
  cell.mode = mode;

  // same initialization and shuffle either way: the two modes differ only in
  // the effective temperature
  Pcg32 init_rng(derive_seed(teacher.seed, "student-init", teacher.size),
                 rng_stream::kInit);
  nnet::MlpModel student = nnet::MlpModel::initialized(
      layer_dims(train_split.dim(), plan.student_size, plan.student_hidden_layers,
                 static_cast<std::size_t>(train_split.class_count)),
      init_rng);

  DistillConfig config;
  config.alpha = plan.alpha;
  config.kd_temperature = plan.kd_temperature;
  config.mode = mode;
  config.train = plan.train;
  config.train.seed = derive_seed(teacher.seed, "student-train", teacher.size);

  cell.result = distill_student(std::move(student), teacher.model, train_split, config,
                                mode == Mode::calibrated
                                    ? std::optional<calibration::TemperatureFit>(teacher.fit)
                                    : std::nullopt);
  calibration::LogitSet test_logits = logits_on(cell.result.student, test_split);
  cell.test_accuracy = calibration::accuracy(test_logits);
  return cell;
}

}  // namespace

std::vector<SweepRow> teacher_size_sweep(const SweepPlan& plan,
                                         const data::Dataset& train_split,
                                         const data::Dataset& validation_split,
                                         const data::Dataset& test_split, int jobs,
                                         const SweepSink* sink) {
  if (plan.teacher_sizes.empty()) throw ConfigError("sweep needs at least one teacher size");
  if (!std::is_sorted(plan.teacher_sizes.begin(), plan.teacher_sizes.end())) {
    throw ConfigError("teacher sizes must be sorted ascending");
  }
  if (plan.seeds.empty()) throw ConfigError("sweep needs at least one seed");

  struct TeacherJob {
    int size;
    std::uint64_t seed;
  };
  std::vector<TeacherJob> teacher_jobs;
  for (const int size : plan.teacher_sizes) {
    for (const std::uint64_t seed : plan.seeds) teacher_jobs.push_back({size, seed});
  }

  std::vector<TeacherCell> teachers(teacher_jobs.size());
  std::mutex sink_mutex;
  parallel_for(teacher_jobs.size(), jobs, [&](std::size_t i) {
    teachers[i] = build_teacher(plan, teacher_jobs[i].size, teacher_jobs[i].seed,
                                train_split, validation_split, test_split);
    if (sink != nullptr && sink->on_teacher) {
      std::lock_guard<std::mutex> lock(sink_mutex);
      sink->on_teacher(teachers[i]);
    }
  });

  constexpr Mode kModes[] = {Mode::vanilla, Mode::calibrated};
  std::vector<StudentCell> students(teachers.size() * 2);
  parallel_for(students.size(), jobs, [&](std::size_t i) {
    const TeacherCell& teacher = teachers[i / 2];
    students[i] = build_student(plan, teacher, kModes[i % 2], train_split, test_split);
    if (sink != nullptr && sink->on_student) {
      std::lock_guard<std::mutex> lock(sink_mutex);
      sink->on_student(students[i]);
    }
  });

  std::vector<SweepRow> rows;
  rows.reserve(students.size());
  for (std::size_t i = 0; i < students.size(); ++i) {
    const TeacherCell& teacher = teachers[i / 2];
    const StudentCell& student = students[i];
    SweepRow row;
    row.teacher_size = teacher.size;
    row.seed = teacher.seed;
    row.mode = student.mode;
    row.teacher_accuracy = calibration::accuracy(teacher.test_logits);
    row.teacher_ece_before = teacher.validation_report.ece_before;
    row.teacher_ece_after = teacher.validation_report.ece_after;
    row.temperature = teacher.fit.temperature;
    row.student_accuracy = student.test_accuracy;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace calikd::distill
