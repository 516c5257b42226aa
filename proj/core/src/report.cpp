#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "calikd/error.hpp"
#include "calikd/pipeline.hpp"
#include "calikd/version.hpp"
#include "pipeline_internal.hpp"

namespace calikd::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

double mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (const double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double sample_stddev(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double s = 0.0;
  for (const double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

std::string pad(std::string text, std::size_t width) {
  if (text.size() < width) text.resize(width, ' ');
  return text;
}

void emit(std::ostream* log, const std::string& line) {
  if (log != nullptr) (*log) << line << std::endl;
}

/// Everything report needs from one (size, seed) pair of teacher cells.
struct TeacherNumbers {
  double test_accuracy = 0.0;
  double temperature = 0.0;
  double ece_before = 0.0;
  double ece_after = 0.0;
  double nll_before = 0.0;
  double nll_after = 0.0;
};

}  // namespace

ReportResult run_report(const ExperimentConfig& config, const StageOptions& options) {
  config.validate();
  const fs::path root = experiment_root(options.out_root, config);

  // inventory first so one error lists every missing cell
  std::vector<std::string> missing;
  const auto require = [&missing](const fs::path& path, const std::string& cell) {
    if (fs::exists(path)) return true;
    missing.push_back(cell);
    return false;
  };

  std::map<std::pair<int, std::uint64_t>, TeacherNumbers> teachers;
  std::vector<distill::SweepRow> rows;
  constexpr distill::Mode kModes[] = {distill::Mode::vanilla,
                                      distill::Mode::calibrated};
  for (const int size : config.teacher_sizes) {
    for (const std::uint64_t seed : config.seeds) {
      const std::string base = cell_name(size, "base", seed);
      const fs::path teacher_metrics =
          root / "train-teacher" / base / "metrics.json";
      const fs::path fit_path = root / "calibrate" / base / "fit.json";
      TeacherNumbers numbers;
      if (require(teacher_metrics, "train-teacher/" + base)) {
        const json m = detail::load_json_file(teacher_metrics);
        numbers.test_accuracy = m.at("test_accuracy").get<double>();
      }
      if (require(fit_path, "calibrate/" + base)) {
        const json f = detail::load_json_file(fit_path);
        numbers.temperature = f.at("temperature").get<double>();
        numbers.ece_before = f.at("ece_before").get<double>();
        numbers.ece_after = f.at("ece_after").get<double>();
        numbers.nll_before = f.at("nll_before").get<double>();
        numbers.nll_after = f.at("nll_after").get<double>();
      }
      teachers[{size, seed}] = numbers;
      for (const distill::Mode mode : kModes) {
        const std::string cell = cell_name(size, distill::to_string(mode), seed);
        const fs::path student_metrics = root / "distill" / cell / "metrics.json";
        if (!require(student_metrics, "distill/" + cell)) continue;
        const json m = detail::load_json_file(student_metrics);
        distill::SweepRow row;
        row.teacher_size = size;
        row.seed = seed;
        row.mode = mode;
        row.teacher_accuracy = numbers.test_accuracy;
        row.teacher_ece_before = numbers.ece_before;
        row.teacher_ece_after = numbers.ece_after;
        row.temperature = numbers.temperature;
        row.student_accuracy = m.at("test_accuracy").get<double>();
        rows.push_back(row);
      }
    }
  }
  if (!missing.empty()) {
    std::string joined;
    for (const std::string& cell : missing) {
      if (!joined.empty()) joined += ", ";
      joined += cell;
    }
    throw ValidationError("incomplete sweep; missing cells: " + joined);
  }

  const std::string started = detail::now_utc();
  ReportResult result;

  // --- baseline table: teacher accuracy per size (Table-1 shape)
  std::string baseline_csv = "metric";
  for (const int size : config.teacher_sizes) {
    baseline_csv += "," + std::to_string(size);
  }
  baseline_csv += "\n";
  std::vector<double> baseline_mean;
  std::vector<double> baseline_std;
  for (const int size : config.teacher_sizes) {
    std::vector<double> acc;
    for (const std::uint64_t seed : config.seeds) {
      acc.push_back(teachers[{size, seed}].test_accuracy);
    }
    baseline_mean.push_back(mean(acc));
    baseline_std.push_back(sample_stddev(acc));
  }
  baseline_csv += "accuracy_mean";
  for (const double v : baseline_mean) baseline_csv += "," + detail::fixed(v, 6);
  baseline_csv += "\naccuracy_stddev";
  for (const double v : baseline_std) baseline_csv += "," + detail::fixed(v, 6);
  baseline_csv += "\n";

  std::string baseline_txt = pad("teacher width", 18);
  for (const int size : config.teacher_sizes) {
    baseline_txt += pad(std::to_string(size), 9);
  }
  baseline_txt += "\n" + pad("accuracy (mean)", 18);
  for (const double v : baseline_mean) baseline_txt += pad(detail::fixed(v, 4), 9);
  baseline_txt += "\n" + pad("accuracy (std)", 18);
  for (const double v : baseline_std) baseline_txt += pad(detail::fixed(v, 4), 9);
  baseline_txt += "\n";

  // --- calibration table: Table-2 row labels x sizes, means across seeds
  struct MetricRow {
    const char* label;
    double TeacherNumbers::* field;
    int decimals;
  };
  const MetricRow metric_rows[] = {
      {"Optimal Temp", &TeacherNumbers::temperature, 3},
      {"ECE Before", &TeacherNumbers::ece_before, 4},
      {"ECE After", &TeacherNumbers::ece_after, 4},
      {"NLL Before", &TeacherNumbers::nll_before, 4},
      {"NLL After", &TeacherNumbers::nll_after, 4},
  };
  std::string calibration_csv = "metric";
  std::string calibration_txt = pad("metric", 16);
  for (const int size : config.teacher_sizes) {
    calibration_csv += "," + std::to_string(size);
    calibration_txt += pad(std::to_string(size), 9);
  }
  calibration_csv += "\n";
  calibration_txt += "\n";
  for (const MetricRow& metric : metric_rows) {
    calibration_csv += metric.label;
    calibration_txt += pad(metric.label, 16);
    for (const int size : config.teacher_sizes) {
      std::vector<double> values;
      for (const std::uint64_t seed : config.seeds) {
        values.push_back(teachers[{size, seed}].*metric.field);
      }
      const double m = mean(values);
      calibration_csv += "," + detail::fixed(m, 6);
      calibration_txt += pad(detail::fixed(m, metric.decimals), 9);
    }
    calibration_csv += "\n";
    calibration_txt += "\n";
  }

  // --- comparison matrix: vanilla and calibrated rows interleaved per size
  const std::vector<distill::SweepCell> cells = distill::aggregate_rows(rows);
  const auto cell_of = [&cells](int size, distill::Mode mode) {
    const auto it = std::find_if(cells.begin(), cells.end(),
                                 [&](const distill::SweepCell& c) {
                                   return c.teacher_size == size && c.mode == mode;
                                 });
    return *it;  // report inventory guarantees presence
  };
  std::string comparison_csv =
      "teacher_size,mode,student_accuracy_mean,student_accuracy_stddev,runs\n";
  const std::string student_head = "student-" + std::to_string(config.student_size);
  std::string comparison_txt =
      pad("teacher", 18) + pad(student_head + " mean", 18) + "stddev\n";
  for (const int size : config.teacher_sizes) {
    for (const distill::Mode mode : kModes) {
      const distill::SweepCell cell = cell_of(size, mode);
      comparison_csv += std::to_string(size);
      comparison_csv += ",";
      comparison_csv += distill::to_string(mode);
      comparison_csv += "," + detail::fixed(cell.student_accuracy_mean, 6);
      comparison_csv += "," + detail::fixed(cell.student_accuracy_stddev, 6);
      comparison_csv += "," + std::to_string(cell.runs) + "\n";
      const std::string label = mode == distill::Mode::calibrated
                                    ? "Calibrated " + std::to_string(size)
                                    : std::to_string(size);
      comparison_txt += pad(label, 18) +
                        pad(detail::fixed(cell.student_accuracy_mean, 4), 18) +
                        detail::fixed(cell.student_accuracy_stddev, 4) + "\n";
    }
  }

  // --- verdict
  bool dominates = true;
  bool monotone = true;
  double previous_calibrated = -1.0;
  for (const int size : config.teacher_sizes) {
    const double vanilla = cell_of(size, distill::Mode::vanilla).student_accuracy_mean;
    const double calibrated =
        cell_of(size, distill::Mode::calibrated).student_accuracy_mean;
    if (calibrated < vanilla) dominates = false;
    if (calibrated < previous_calibrated) monotone = false;
    previous_calibrated = calibrated;
  }
  result.calibrated_dominates = dominates;
  result.monotone_calibrated = monotone;
  result.verdict = std::string("calibrated_dominates=") +
                   (dominates ? "true" : "false") +
                   " monotone_calibrated=" + (monotone ? "true" : "false");

  detail::write_text(root / "baseline.csv", baseline_csv);
  detail::write_text(root / "baseline.txt", baseline_txt);
  detail::write_text(root / "calibration.csv", calibration_csv);
  detail::write_text(root / "calibration.txt", calibration_txt);
  detail::write_text(root / "comparison.csv", comparison_csv);
  detail::write_text(root / "comparison.txt", comparison_txt);
  detail::write_text(root / "verdict.txt", result.verdict + "\n");
  for (const char* name : {"baseline.csv", "baseline.txt", "calibration.csv",
                           "calibration.txt", "comparison.csv", "comparison.txt",
                           "verdict.txt"}) {
    result.files.push_back(root / name);
  }

  json record;
  record["format"] = "calikd-run-1";
  record["stage"] = "report";
  record["cell"] = "report";
  record["config_digest"] = config_digest(config);
  record["library_version"] = kLibraryVersion;
  record["prng"] = kPrngId;
  record["started"] = started;
  record["finished"] = detail::now_utc();
  json artifacts = json::object();
  for (const fs::path& file : result.files) {
    artifacts[file.filename().string()] = detail::file_digest_hex(file);
  }
  record["artifacts"] = artifacts;
  detail::write_text(root / "run.json", record.dump(2) + "\n");

  emit(options.log, "[report] wrote " + std::to_string(result.files.size()) +
                        " files under " + root.string());
  emit(options.log, result.verdict);
  return result;
}

VerifyResult run_verify(const ExperimentConfig& config, const StageOptions& options) {
  config.validate();
  const fs::path root = experiment_root(options.out_root, config);
  if (!fs::exists(root)) {
    throw ValidationError("no artifacts at " + root.string() +
                          "; run the pipeline stages first");
  }
  const std::string digest = config_digest(config);
  const std::array<data::Dataset, 3> splits = build_splits(config);

  VerifyResult result;
  const auto fail = [&result](const std::string& message) {
    result.ok = false;
    result.failures.push_back(message);
  };
  const auto check_eq = [&](double got, double want, double tol,
                            const std::string& what) {
    ++result.checks;
    if (!(std::abs(got - want) <= tol)) {
      fail(what + ": recomputed " + detail::sig(got) + ", stored " +
           detail::sig(want));
    }
  };

  // run.json integrity for one cell directory, true when the dir exists
  const auto check_record = [&](const fs::path& dir) {
    if (!fs::exists(dir)) return false;
    const fs::path record_path = dir / "run.json";
    ++result.checks;
    if (!fs::exists(record_path)) {
      fail(dir.string() + ": run.json is missing");
      return true;
    }
    const json record = detail::load_json_file(record_path);
    ++result.checks;
    if (record.value("config_digest", "") != digest) {
      fail(record_path.string() + ": config digest " +
           record.value("config_digest", "<absent>") + " does not match " + digest);
    }
    for (const auto& [name, want] : record.at("artifacts").items()) {
      const fs::path artifact = dir / name;
      ++result.checks;
      if (!fs::exists(artifact)) {
        fail(artifact.string() + ": listed in run.json but missing");
        continue;
      }
      const std::string got = detail::file_digest_hex(artifact);
      if (got != want.get<std::string>()) {
        fail(artifact.string() + ": checksum " + got + " does not match run.json (" +
             want.get<std::string>() + ")");
      }
    }
    return true;
  };

  for (const int size : config.teacher_sizes) {
    for (const std::uint64_t seed : config.seeds) {
      const std::string base = cell_name(size, "base", seed);
      const fs::path teacher_dir = root / "train-teacher" / base;
      if (check_record(teacher_dir)) {
        // stored metrics must be re-derivable from the stored model
        const nnet::MlpModel model = load_model(teacher_dir / "model.json");
        const json metrics = detail::load_json_file(teacher_dir / "metrics.json");
        calibration::LogitSet test;
        test.logits = nnet::forward(model, splits[2].features);
        test.labels = splits[2].labels;
        check_eq(calibration::accuracy(test),
                 metrics.at("test_accuracy").get<double>(), 1e-12,
                 teacher_dir.string() + ": test_accuracy");
      }
      const fs::path calibrate_dir = root / "calibrate" / base;
      if (check_record(calibrate_dir)) {
        const fs::path logits_path = teacher_dir / "validation_logits.csv";
        ++result.checks;
        if (!fs::exists(logits_path)) {
          fail(calibrate_dir.string() + ": teacher validation logits are gone");
        } else {
          const calibration::LogitSet validation = data::read_logits(logits_path);
          const calibration::TemperatureFit refit =
              calibration::fit_temperature(validation, config.fit);
          const calibration::CalibrationReport report =
              calibration::calibration_report(validation, refit, config.bin_count);
          const json stored = detail::load_json_file(calibrate_dir / "fit.json");
          const std::string where = (calibrate_dir / "fit.json").string();
          check_eq(refit.temperature, stored.at("temperature").get<double>(), 1e-9,
                   where + ": temperature");
          check_eq(refit.nll_before, stored.at("nll_before").get<double>(), 1e-9,
                   where + ": nll_before");
          check_eq(refit.nll_after, stored.at("nll_after").get<double>(), 1e-9,
                   where + ": nll_after");
          check_eq(report.ece_before, stored.at("ece_before").get<double>(), 1e-9,
                   where + ": ece_before");
          check_eq(report.ece_after, stored.at("ece_after").get<double>(), 1e-9,
                   where + ": ece_after");
        }
      }
      for (const distill::Mode mode :
           {distill::Mode::vanilla, distill::Mode::calibrated}) {
        const fs::path student_dir =
            root / "distill" / cell_name(size, distill::to_string(mode), seed);
        if (!check_record(student_dir)) continue;
        const nnet::MlpModel student = load_model(student_dir / "model.json");
        const json metrics = detail::load_json_file(student_dir / "metrics.json");
        calibration::LogitSet test;
        test.logits = nnet::forward(student, splits[2].features);
        test.labels = splits[2].labels;
        check_eq(calibration::accuracy(test),
                 metrics.at("test_accuracy").get<double>(), 1e-12,
                 student_dir.string() + ": test_accuracy");
        const double temperature = metrics.at("effective_temperature").get<double>();
        if (mode == distill::Mode::vanilla) {
          check_eq(temperature, config.kd_temperature, 0.0,
                   student_dir.string() + ": effective_temperature");
        } else if (fs::exists(root / "calibrate" / base / "fit.json")) {
          const calibration::TemperatureFit fit =
              load_fit(root / "calibrate" / base / "fit.json");
          check_eq(temperature, fit.temperature, 0.0,
                   student_dir.string() + ": effective_temperature");
        }
      }
    }
  }
  if (fs::exists(root / "run.json")) check_record(root);

  if (result.checks == 0) {
    throw ValidationError("no completed cells under " + root.string() +
                          "; run the pipeline stages first");
  }
  emit(options.log, "[verify] " + std::to_string(result.checks) + " checks, " +
                        std::to_string(result.failures.size()) + " failures");
  for (const std::string& failure : result.failures) {
    emit(options.log, "  FAIL " + failure);
  }
  return result;
}

}  // namespace calikd::pipeline
