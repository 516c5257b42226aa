#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "calikd/calibration.hpp"
#include "calikd/data.hpp"
#include "calikd/distill.hpp"
#include "calikd/nnet.hpp"

namespace calikd::pipeline {

/// Where the experiment's samples come from: a seeded synthetic generator or
/// an IDX image/label file pair.
struct DatasetConfig {
  std::string kind = "synthetic";  // "synthetic" | "idx"
  data::SyntheticSpec synthetic;
  std::string idx_images;
  std::string idx_labels;
  std::size_t idx_subset = 0;  // 0 = all samples
  data::SplitFractions fractions;
  std::uint64_t split_seed = 17;
};

/// The full experiment description. One config resolves to one content
/// digest; every artifact of the experiment lives under that digest.
struct ExperimentConfig {
  DatasetConfig dataset;
  std::vector<int> teacher_sizes = {32, 256, 2048};
  int teacher_hidden_layers = 1;
  int student_size = 16;
  int student_hidden_layers = 1;
  nnet::TrainConfig train;
  double alpha = 0.8;
  double kd_temperature = 4.0;
  calibration::FitOptions fit;
  int bin_count = 15;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string output_dir;  // optional; not part of the digest

  void validate() const;
};

ExperimentConfig default_config();

/// Parse a JSON config. Absent keys keep their defaults; unknown keys are a
/// ConfigError (they are almost always typos).
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Apply one `key=value` override with dotted paths into the JSON layout,
/// e.g. `train.max_epochs=5` or `teacher.sizes=32,256`.
void apply_override(ExperimentConfig& config, const std::string& assignment);

/// Canonical serialization (sorted keys, shortest round-trip doubles,
/// output_dir omitted) and its FNV-1a 64 digest in hex.
std::string canonical_json(const ExperimentConfig& config);
std::string config_digest(const ExperimentConfig& config);

/// Output directory resolution order: --out flag, config output_dir, the
/// CALIKD_OUT environment variable, then "runs".
std::filesystem::path resolve_output_dir(const std::optional<std::string>& cli_out,
                                         const ExperimentConfig& config);

/// Build and split the dataset described by the config. Deterministic; the
/// splits are shared by every cell of the experiment.
std::array<data::Dataset, 3> build_splits(const ExperimentConfig& config);

/// Model and fit artifacts round-trip through JSON with exact doubles.
void save_model(const std::filesystem::path& path, const nnet::MlpModel& model);
nnet::MlpModel load_model(const std::filesystem::path& path);
void save_fit(const std::filesystem::path& path, const calibration::TemperatureFit& fit,
              const calibration::CalibrationReport& report, int bin_count);
calibration::TemperatureFit load_fit(const std::filesystem::path& path);

/// `<out_root>/<digest>` and `<root>/<stage>/<size>-<mode>-<seed>`. Teacher
/// stages use "base" in the mode slot.
std::filesystem::path experiment_root(const std::filesystem::path& out_root,
                                      const ExperimentConfig& config);
std::string cell_name(int size, const std::string& mode_slot, std::uint64_t seed);
std::filesystem::path cell_dir(const std::filesystem::path& root,
                               const std::string& stage, int size,
                               const std::string& mode_slot, std::uint64_t seed);

/// Cell selection for the stage runners. Unset fields select everything, so
/// a bare stage command processes every cell in the config.
struct CellFilter {
  std::optional<int> size;
  std::optional<std::uint64_t> seed;
  std::optional<distill::Mode> mode;
};

struct StageOptions {
  std::filesystem::path out_root;
  int jobs = 0;  // worker threads; 0 = hardware concurrency
  std::ostream* log = nullptr;
  CellFilter filter;
};

/// Stage runners. Each writes one directory per selected cell plus a
/// run.json record; all artifacts except run.json (which carries wall-clock
/// timestamps) are bit-identical across re-runs. Dependencies are read from
/// disk: calibrate needs the teacher cell, distill needs the teacher and (in
/// calibrated mode) the fit.
void run_train_teacher(const ExperimentConfig& config, const StageOptions& options);
void run_calibrate(const ExperimentConfig& config, const StageOptions& options);
void run_distill(const ExperimentConfig& config, const StageOptions& options);

/// All three stages for every selected cell, phase by phase, then (when
/// unfiltered) the report.
void run_sweep(const ExperimentConfig& config, const StageOptions& options);

struct ReportResult {
  bool calibrated_dominates = false;  // calibrated mean >= vanilla mean at every size
  bool monotone_calibrated = false;   // calibrated mean non-decreasing in teacher size
  std::string verdict;                // the one-line summary
  std::vector<std::filesystem::path> files;
};

/// Aggregate completed cells into the three tables (baseline, calibration,
/// comparison), each as CSV and aligned text, plus verdict.txt at the
/// experiment root. Missing cells are a ValidationError listing each one.
ReportResult run_report(const ExperimentConfig& config, const StageOptions& options);

struct VerifyResult {
  bool ok = true;
  std::size_t checks = 0;
  std::vector<std::string> failures;
};

/// Integrity pass over every completed cell: artifact bytes match the
/// checksums in run.json, and stored metrics are re-derivable (temperature
/// refit from stored logits, ECE/NLL recomputation, accuracy from the stored
/// model). Read-only.
VerifyResult run_verify(const ExperimentConfig& config, const StageOptions& options);

}  // namespace calikd::pipeline
