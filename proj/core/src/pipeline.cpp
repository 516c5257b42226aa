#include "calikd/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <map>
#include <mutex>
#include <ostream>
#include <utility>

#include <json.hpp>

#include "calikd/digest.hpp"
#include "calikd/error.hpp"
#include "calikd/parallel.hpp"
#include "calikd/rng.hpp"
#include "calikd/version.hpp"
#include "pipeline_internal.hpp"

namespace calikd::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// config <-> JSON

json encode(const ExperimentConfig& c) {
  json j;
  json& d = j["dataset"];
  d["kind"] = c.dataset.kind;
  d["class_count"] = c.dataset.synthetic.class_count;
  d["dims"] = c.dataset.synthetic.dims;
  d["clusters_per_class"] = c.dataset.synthetic.clusters_per_class;
  d["cluster_spread"] = c.dataset.synthetic.cluster_spread;
  d["label_noise_rate"] = c.dataset.synthetic.label_noise_rate;
  d["samples"] = c.dataset.synthetic.samples;
  d["seed"] = c.dataset.synthetic.seed;
  d["images"] = c.dataset.idx_images;
  d["labels"] = c.dataset.idx_labels;
  d["subset"] = c.dataset.idx_subset;
  d["split"]["train"] = c.dataset.fractions.train;
  d["split"]["validation"] = c.dataset.fractions.validation;
  d["split"]["test"] = c.dataset.fractions.test;
  d["split"]["seed"] = c.dataset.split_seed;
  j["teacher"]["sizes"] = c.teacher_sizes;
  j["teacher"]["hidden_layers"] = c.teacher_hidden_layers;
  j["student"]["size"] = c.student_size;
  j["student"]["hidden_layers"] = c.student_hidden_layers;
  j["train"]["batch_size"] = c.train.batch_size;
  j["train"]["initial_lr"] = c.train.initial_lr;
  j["train"]["max_epochs"] = c.train.max_epochs;
  j["train"]["momentum"] = c.train.momentum;
  j["train"]["shuffle"] = c.train.shuffle;
  j["distill"]["alpha"] = c.alpha;
  j["distill"]["kd_temperature"] = c.kd_temperature;
  j["calibration"]["t_min"] = c.fit.t_min;
  j["calibration"]["t_max"] = c.fit.t_max;
  j["calibration"]["log_tolerance"] = c.fit.log_tolerance;
  j["calibration"]["bin_count"] = c.bin_count;
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir;
  return j;
}

ExperimentConfig decode(const json& j) {
  ExperimentConfig c;
  const json& d = j.at("dataset");
  c.dataset.kind = d.at("kind").get<std::string>();
  c.dataset.synthetic.class_count = d.at("class_count").get<int>();
  c.dataset.synthetic.dims = d.at("dims").get<int>();
  c.dataset.synthetic.clusters_per_class = d.at("clusters_per_class").get<int>();
  c.dataset.synthetic.cluster_spread = d.at("cluster_spread").get<double>();
  c.dataset.synthetic.label_noise_rate = d.at("label_noise_rate").get<double>();
  c.dataset.synthetic.samples = d.at("samples").get<std::size_t>();
  c.dataset.synthetic.seed = d.at("seed").get<std::uint64_t>();
  c.dataset.idx_images = d.at("images").get<std::string>();
  c.dataset.idx_labels = d.at("labels").get<std::string>();
  c.dataset.idx_subset = d.at("subset").get<std::size_t>();
  const json& sp = d.at("split");
  c.dataset.fractions.train = sp.at("train").get<double>();
  c.dataset.fractions.validation = sp.at("validation").get<double>();
  c.dataset.fractions.test = sp.at("test").get<double>();
  c.dataset.split_seed = sp.at("seed").get<std::uint64_t>();
  c.teacher_sizes = j.at("teacher").at("sizes").get<std::vector<int>>();
  c.teacher_hidden_layers = j.at("teacher").at("hidden_layers").get<int>();
  c.student_size = j.at("student").at("size").get<int>();
  c.student_hidden_layers = j.at("student").at("hidden_layers").get<int>();
  c.train.batch_size = j.at("train").at("batch_size").get<std::size_t>();
  c.train.initial_lr = j.at("train").at("initial_lr").get<double>();
  c.train.max_epochs = j.at("train").at("max_epochs").get<int>();
  c.train.momentum = j.at("train").at("momentum").get<double>();
  c.train.shuffle = j.at("train").at("shuffle").get<bool>();
  c.alpha = j.at("distill").at("alpha").get<double>();
  c.kd_temperature = j.at("distill").at("kd_temperature").get<double>();
  c.fit.t_min = j.at("calibration").at("t_min").get<double>();
  c.fit.t_max = j.at("calibration").at("t_max").get<double>();
  c.fit.log_tolerance = j.at("calibration").at("log_tolerance").get<double>();
  c.bin_count = j.at("calibration").at("bin_count").get<int>();
  c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  c.output_dir = j.at("output_dir").get<std::string>();
  c.validate();
  return c;
}

std::string type_label(const json& j) {
  if (j.is_object()) return "an object";
  if (j.is_array()) return "an array";
  if (j.is_string()) return "a string";
  if (j.is_boolean()) return "a boolean";
  if (j.is_number_float()) return "a number";
  if (j.is_number()) return "an integer";
  return j.type_name();
}

bool integral_valued(const json& v) {
  const double x = v.get<double>();
  return std::isfinite(x) && x == std::floor(x);
}

/// Assign `value` into `slot`, keeping the slot's declared shape. Integer
/// slots reject fractional values; unsigned slots reject negatives.
void assign_checked(json& slot, const json& value, const std::string& path) {
  if (slot.is_string() || slot.is_boolean()) {
    if (value.type() != slot.type()) {
      throw ConfigError(path + ": expected " + type_label(slot) + ", got " +
                        type_label(value));
    }
  } else if (slot.is_number_float()) {
    if (!value.is_number()) {
      throw ConfigError(path + ": expected a number, got " + type_label(value));
    }
  } else if (slot.is_number()) {
    if (!value.is_number()) {
      throw ConfigError(path + ": expected an integer, got " + type_label(value));
    }
    if (value.is_number_float() && !integral_valued(value)) {
      throw ConfigError(path + ": expected an integer, got " + value.dump());
    }
    if (slot.is_number_unsigned() && value.is_number_integer() &&
        value.get<long long>() < 0) {
      throw ConfigError(path + ": must be non-negative, got " + value.dump());
    }
  } else if (slot.is_array()) {
    if (!value.is_array()) {
      throw ConfigError(path + ": expected an array, got " + type_label(value));
    }
    for (const json& e : value) {
      if (!e.is_number()) {
        throw ConfigError(path + ": array elements must be numbers, got " +
                          type_label(e));
      }
    }
  }
  slot = value;
}

/// Recursive merge of user JSON over the defaults. Every key must already
/// exist in the defaults — unknown keys are almost always typos.
void merge_strict(json& dst, const json& src, const std::string& path) {
  if (!src.is_object()) {
    throw ConfigError(path.empty() ? "config root must be a JSON object"
                                   : path + " must be an object");
  }
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string key_path = path.empty() ? it.key() : path + "." + it.key();
    if (!dst.contains(it.key())) throw ConfigError("unknown config key: " + key_path);
    json& slot = dst[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), key_path);
    } else {
      assign_checked(slot, it.value(), key_path);
    }
  }
}

bool parse_ll(const std::string& text, long long& out) {
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

bool parse_ull(const std::string& text, unsigned long long& out) {
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

bool parse_number(const std::string& text, double& out) {
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

json parse_scalar_like(const json& slot, const std::string& text,
                       const std::string& key) {
  if (slot.is_string()) return text;
  if (slot.is_boolean()) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError(key + ": cannot parse \"" + text + "\" as a boolean");
  }
  if (slot.is_number_float()) {
    double v = 0.0;
    if (!parse_number(text, v)) {
      throw ConfigError(key + ": cannot parse \"" + text + "\" as a number");
    }
    return v;
  }
  if (slot.is_number_unsigned()) {
    unsigned long long v = 0;
    if (!parse_ull(text, v)) {
      throw ConfigError(key + ": cannot parse \"" + text +
                        "\" as a non-negative integer");
    }
    return v;
  }
  if (slot.is_number_integer()) {
    long long v = 0;
    if (!parse_ll(text, v)) {
      throw ConfigError(key + ": cannot parse \"" + text + "\" as an integer");
    }
    return v;
  }
  throw ConfigError(key + ": cannot override " + type_label(slot) +
                    " from the command line");
}

json parse_array_like(const json& slot, const std::string& text,
                      const std::string& key) {
  // comma-separated elements; the element kind follows the existing array
  const json element_model =
      slot.empty() ? json(0LL) : slot.front();
  json out = json::array();
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string item =
        text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (!item.empty()) out.push_back(parse_scalar_like(element_model, item, key));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// cell enumeration

struct TeacherKey {
  int size = 0;
  std::uint64_t seed = 0;
};

struct StudentKey {
  int size = 0;
  distill::Mode mode = distill::Mode::vanilla;
  std::uint64_t seed = 0;
};

void check_filter(const ExperimentConfig& config, const CellFilter& filter) {
  if (filter.size.has_value() &&
      std::find(config.teacher_sizes.begin(), config.teacher_sizes.end(),
                *filter.size) == config.teacher_sizes.end()) {
    throw ValidationError("size " + std::to_string(*filter.size) +
                          " is not one of the configured teacher sizes");
  }
  if (filter.seed.has_value() &&
      std::find(config.seeds.begin(), config.seeds.end(), *filter.seed) ==
          config.seeds.end()) {
    throw ValidationError("seed " + std::to_string(*filter.seed) +
                          " is not one of the configured seeds");
  }
}

std::vector<TeacherKey> teacher_cells(const ExperimentConfig& config,
                                      const CellFilter& filter) {
  check_filter(config, filter);
  std::vector<TeacherKey> cells;
  for (const int size : config.teacher_sizes) {
    if (filter.size.has_value() && size != *filter.size) continue;
    for (const std::uint64_t seed : config.seeds) {
      if (filter.seed.has_value() && seed != *filter.seed) continue;
      cells.push_back({size, seed});
    }
  }
  return cells;
}

std::vector<StudentKey> student_cells(const ExperimentConfig& config,
                                      const CellFilter& filter) {
  check_filter(config, filter);
  constexpr distill::Mode kModes[] = {distill::Mode::vanilla,
                                      distill::Mode::calibrated};
  std::vector<StudentKey> cells;
  for (const int size : config.teacher_sizes) {
    if (filter.size.has_value() && size != *filter.size) continue;
    for (const distill::Mode mode : kModes) {
      if (filter.mode.has_value() && mode != *filter.mode) continue;
      for (const std::uint64_t seed : config.seeds) {
        if (filter.seed.has_value() && seed != *filter.seed) continue;
        cells.push_back({size, mode, seed});
      }
    }
  }
  return cells;
}

// ---------------------------------------------------------------------------
// stage context and artifact writers

struct StageContext {
  const ExperimentConfig& config;
  std::string digest;
  fs::path root;
  std::array<data::Dataset, 3> splits;
  std::ostream* log = nullptr;
  std::mutex log_mutex;

  StageContext(const ExperimentConfig& cfg, const StageOptions& options)
      : config(cfg),
        digest(config_digest(cfg)),
        root(experiment_root(options.out_root, cfg)),
        splits(build_splits(cfg)),
        log(options.log) {}

  const data::Dataset& train_split() const { return splits[0]; }
  const data::Dataset& validation_split() const { return splits[1]; }
  const data::Dataset& test_split() const { return splits[2]; }
};

void log_line(StageContext& ctx, const std::string& line) {
  if (ctx.log == nullptr) return;
  std::lock_guard<std::mutex> lock(ctx.log_mutex);
  (*ctx.log) << line << std::endl;
}

void write_run_record(const fs::path& dir, const std::string& stage,
                      const std::string& cell, const std::string& digest,
                      const std::string& started,
                      const std::vector<std::string>& artifact_names) {
  json j;
  j["format"] = "calikd-run-1";
  j["stage"] = stage;
  j["cell"] = cell;
  j["config_digest"] = digest;
  j["library_version"] = kLibraryVersion;
  j["prng"] = kPrngId;
  j["started"] = started;
  j["finished"] = detail::now_utc();
  json artifacts = json::object();
  for (const std::string& name : artifact_names) {
    artifacts[name] = detail::file_digest_hex(dir / name);
  }
  j["artifacts"] = artifacts;
  detail::write_text(dir / "run.json", j.dump(2) + "\n");
}

void write_trace(const fs::path& path, const nnet::TrainTrace& trace) {
  std::string out = "epoch,loss,accuracy,lr\n";
  for (const nnet::EpochStats& e : trace.epochs) {
    out += std::to_string(e.epoch);
    out += ',';
    out += detail::sig(e.loss);
    out += ',';
    out += detail::sig(e.accuracy);
    out += ',';
    out += detail::sig(e.lr);
    out += '\n';
  }
  detail::write_text(path, out);
}

void write_reliability(const fs::path& path,
                       const calibration::ReliabilityHistogram& histogram) {
  std::string out = "bin,lower,upper,count,mean_confidence,mean_accuracy\n";
  for (std::size_t i = 0; i < histogram.bins.size(); ++i) {
    const calibration::ReliabilityBin& b = histogram.bins[i];
    out += std::to_string(i + 1);
    out += ',';
    out += detail::sig(b.lower);
    out += ',';
    out += detail::sig(b.upper);
    out += ',';
    out += std::to_string(b.count);
    out += ',';
    out += detail::sig(b.mean_confidence);
    out += ',';
    out += detail::sig(b.mean_accuracy);
    out += '\n';
  }
  detail::write_text(path, out);
}

calibration::LogitSet logits_on(const nnet::MlpModel& model,
                                const data::Dataset& split) {
  calibration::LogitSet set;
  set.logits = nnet::forward(model, split.features);
  set.labels = split.labels;
  return set;
}

std::string seconds_since(const std::chrono::steady_clock::time_point& t0) {
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                       .count();
  return detail::fixed(s, 1) + "s";
}

// ---------------------------------------------------------------------------
// per-cell stage bodies

void train_teacher_cell(StageContext& ctx, int size, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string started = detail::now_utc();
  const std::string cell = cell_name(size, "base", seed);
  const fs::path dir = ctx.root / "train-teacher" / cell;
  fs::create_directories(dir);

  Pcg32 init_rng(distill::derive_seed(seed, "teacher-init", size), rng_stream::kInit);
  nnet::MlpModel model = nnet::MlpModel::initialized(
      distill::layer_dims(ctx.train_split().dim(), size,
                          ctx.config.teacher_hidden_layers,
                          static_cast<std::size_t>(ctx.train_split().class_count)),
      init_rng);

  nnet::TrainConfig train_config = ctx.config.train;
  train_config.seed = distill::derive_seed(seed, "teacher-train", size);
  nnet::TrainResult trained = nnet::train(std::move(model), ctx.train_split(),
                                          train_config);

  const calibration::LogitSet validation = logits_on(trained.model,
                                                     ctx.validation_split());
  const calibration::LogitSet test = logits_on(trained.model, ctx.test_split());
  const double test_accuracy = calibration::accuracy(test);

  save_model(dir / "model.json", trained.model);
  data::write_logits(dir / "validation_logits.csv", validation);
  data::write_logits(dir / "test_logits.csv", test);
  write_trace(dir / "trace.csv", trained.trace);

  json metrics;
  metrics["teacher_size"] = size;
  metrics["seed"] = seed;
  metrics["test_accuracy"] = test_accuracy;
  metrics["validation_accuracy"] = calibration::accuracy(validation);
  metrics["final_train_loss"] = trained.trace.epochs.back().loss;
  metrics["final_train_accuracy"] = trained.trace.epochs.back().accuracy;
  metrics["epochs"] = trained.trace.epochs.size();
  detail::write_text(dir / "metrics.json", metrics.dump(2) + "\n");

  write_run_record(dir, "train-teacher", cell, ctx.digest, started,
                   {"model.json", "validation_logits.csv", "test_logits.csv",
                    "trace.csv", "metrics.json"});
  log_line(ctx, "[train-teacher] " + cell + ": test accuracy " +
                    detail::fixed(test_accuracy, 4) + " (" + seconds_since(t0) + ")");
}

void calibrate_cell(StageContext& ctx, int size, std::uint64_t seed) {
  const std::string started = detail::now_utc();
  const std::string cell = cell_name(size, "base", seed);
  const fs::path logits_path =
      ctx.root / "train-teacher" / cell / "validation_logits.csv";
  if (!fs::exists(logits_path)) {
    throw ValidationError("missing teacher artifact " + logits_path.string() +
                          "; run train-teacher first");
  }
  const calibration::LogitSet validation = data::read_logits(logits_path);
  const calibration::TemperatureFit fit =
      calibration::fit_temperature(validation, ctx.config.fit);
  const calibration::CalibrationReport report =
      calibration::calibration_report(validation, fit, ctx.config.bin_count);

  const fs::path dir = ctx.root / "calibrate" / cell;
  fs::create_directories(dir);
  save_fit(dir / "fit.json", fit, report, ctx.config.bin_count);

  // Table-2-shaped single-teacher column, machine and human forms
  const std::pair<const char*, double> rows[] = {
      {"Optimal Temp", fit.temperature},
      {"ECE Before", report.ece_before},
      {"ECE After", report.ece_after},
      {"NLL Before", report.nll_before},
      {"NLL After", report.nll_after},
  };
  std::string csv = "metric,value\n";
  std::string txt;
  for (const auto& [label, value] : rows) {
    csv += label;
    csv += ',';
    csv += detail::sig(value);
    csv += '\n';
    std::string line = label;
    line.resize(14, ' ');
    txt += line + detail::fixed(value, 6) + "\n";
  }
  detail::write_text(dir / "calibration.csv", csv);
  detail::write_text(dir / "calibration.txt", txt);

  write_reliability(dir / "reliability_t1.csv",
                    calibration::reliability_histogram(validation, 1.0,
                                                       ctx.config.bin_count));
  write_reliability(dir / "reliability_fitted.csv",
                    calibration::reliability_histogram(validation, fit.temperature,
                                                       ctx.config.bin_count));

  write_run_record(dir, "calibrate", cell, ctx.digest, started,
                   {"fit.json", "calibration.csv", "calibration.txt",
                    "reliability_t1.csv", "reliability_fitted.csv"});
  log_line(ctx, "[calibrate] " + cell + ": T " + detail::fixed(fit.temperature, 3) +
                    ", nll " + detail::fixed(fit.nll_before, 4) + " -> " +
                    detail::fixed(fit.nll_after, 4) + ", ece " +
                    detail::fixed(report.ece_before, 4) + " -> " +
                    detail::fixed(report.ece_after, 4));
}

void distill_cell(StageContext& ctx, int size, distill::Mode mode,
                  std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string started = detail::now_utc();
  const std::string teacher_cell = cell_name(size, "base", seed);
  const fs::path teacher_path =
      ctx.root / "train-teacher" / teacher_cell / "model.json";
  if (!fs::exists(teacher_path)) {
    throw ValidationError("missing teacher artifact " + teacher_path.string() +
                          "; run train-teacher first");
  }
  const nnet::MlpModel teacher = load_model(teacher_path);

  std::optional<calibration::TemperatureFit> fit;
  if (mode == distill::Mode::calibrated) {
    const fs::path fit_path = ctx.root / "calibrate" / teacher_cell / "fit.json";
    if (!fs::exists(fit_path)) {
      throw ValidationError("missing temperature fit " + fit_path.string() +
                            "; run calibrate first");
    }
    fit = load_fit(fit_path);
  }

  Pcg32 init_rng(distill::derive_seed(seed, "student-init", size), rng_stream::kInit);
  nnet::MlpModel student = nnet::MlpModel::initialized(
      distill::layer_dims(ctx.train_split().dim(), ctx.config.student_size,
                          ctx.config.student_hidden_layers,
                          static_cast<std::size_t>(ctx.train_split().class_count)),
      init_rng);

  distill::DistillConfig config;
  config.alpha = ctx.config.alpha;
  config.kd_temperature = ctx.config.kd_temperature;
  config.mode = mode;
  config.train = ctx.config.train;
  config.train.seed = distill::derive_seed(seed, "student-train", size);

  distill::DistillResult result =
      distill::distill_student(std::move(student), teacher, ctx.train_split(),
                               config, fit);
  const calibration::LogitSet test = logits_on(result.student, ctx.test_split());
  const double test_accuracy = calibration::accuracy(test);

  const std::string cell = cell_name(size, distill::to_string(mode), seed);
  const fs::path dir = ctx.root / "distill" / cell;
  fs::create_directories(dir);
  save_model(dir / "model.json", result.student);
  write_trace(dir / "trace.csv", result.trace);

  json metrics;
  metrics["teacher_size"] = size;
  metrics["seed"] = seed;
  metrics["mode"] = distill::to_string(mode);
  metrics["alpha"] = ctx.config.alpha;
  metrics["effective_temperature"] = result.effective_temperature;
  metrics["test_accuracy"] = test_accuracy;
  detail::write_text(dir / "metrics.json", metrics.dump(2) + "\n");

  write_run_record(dir, "distill", cell, ctx.digest, started,
                   {"model.json", "trace.csv", "metrics.json"});
  log_line(ctx, "[distill] " + cell + ": test accuracy " +
                    detail::fixed(test_accuracy, 4) + ", temperature " +
                    detail::fixed(result.effective_temperature, 3) + " (" +
                    seconds_since(t0) + ")");
}

}  // namespace

// ---------------------------------------------------------------------------
// config API

void ExperimentConfig::validate() const {
  if (dataset.kind != "synthetic" && dataset.kind != "idx") {
    throw ConfigError("dataset.kind must be \"synthetic\" or \"idx\", got \"" +
                      dataset.kind + "\"");
  }
  if (dataset.kind == "synthetic") {
    dataset.synthetic.validate();
  } else {
    if (dataset.idx_images.empty() || dataset.idx_labels.empty()) {
      throw ConfigError("idx dataset needs dataset.images and dataset.labels paths");
    }
    for (const std::string& path : {dataset.idx_images, dataset.idx_labels}) {
      if (!fs::exists(path)) {
        throw ValidationError("dataset file does not exist: " + path);
      }
    }
  }
  const data::SplitFractions& f = dataset.fractions;
  if (!(f.train > 0.0) || !(f.validation > 0.0) || !(f.test > 0.0)) {
    throw ConfigError("split fractions must be positive");
  }
  if (std::abs(f.train + f.validation + f.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  if (teacher_sizes.empty()) throw ConfigError("teacher.sizes must be nonempty");
  for (std::size_t i = 0; i < teacher_sizes.size(); ++i) {
    if (teacher_sizes[i] < 1) throw ConfigError("teacher sizes must be positive");
    if (i > 0 && teacher_sizes[i] <= teacher_sizes[i - 1]) {
      throw ConfigError("teacher.sizes must be strictly increasing");
    }
  }
  if (teacher_hidden_layers < 1 || student_hidden_layers < 1) {
    throw ConfigError("hidden layer counts must be positive");
  }
  if (student_size < 1) throw ConfigError("student.size must be positive");
  if (train.batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (train.max_epochs < 1) throw ConfigError("train.max_epochs must be positive");
  if (!(train.initial_lr >= 0.0) || !std::isfinite(train.initial_lr)) {
    throw ConfigError("train.initial_lr must be non-negative");
  }
  if (!(train.momentum >= 0.0 && train.momentum < 1.0)) {
    throw ConfigError("train.momentum must lie in [0, 1)");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("distill.alpha must lie in [0, 1]");
  }
  if (!(kd_temperature > 0.0) || !std::isfinite(kd_temperature)) {
    throw ConfigError("distill.kd_temperature must be positive");
  }
  if (!(fit.t_min > 0.0 && fit.t_min <= 1.0 && fit.t_max >= 1.0)) {
    throw ConfigError("calibration bounds must satisfy 0 < t_min <= 1 <= t_max");
  }
  if (!(fit.log_tolerance > 0.0)) {
    throw ConfigError("calibration.log_tolerance must be positive");
  }
  if (bin_count < 1) throw ConfigError("calibration.bin_count must be positive");
  if (seeds.empty()) throw ConfigError("seeds must be nonempty");
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    for (std::size_t k = i + 1; k < seeds.size(); ++k) {
      if (seeds[i] == seeds[k]) {
        throw ConfigError("seeds must be distinct; " + std::to_string(seeds[i]) +
                          " repeats");
      }
    }
  }
}

ExperimentConfig default_config() { return {}; }

ExperimentConfig parse_config(const std::string& json_text) {
  json user;
  try {
    user = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  json merged = encode(ExperimentConfig{});
  merge_strict(merged, user, "");
  return decode(merged);
}

ExperimentConfig load_config(const fs::path& path) {
  try {
    return parse_config(detail::read_file_bytes(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("--set expects key=value, got \"" + assignment + "\"");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  json j = encode(config);
  json* slot = &j;
  std::string walked;
  std::size_t pos = 0;
  for (;;) {
    const std::size_t dot = key.find('.', pos);
    const std::string part =
        key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    walked = walked.empty() ? part : walked + "." + part;
    if (!slot->is_object() || !slot->contains(part)) {
      throw ConfigError("unknown config key: " + walked);
    }
    slot = &(*slot)[part];
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  if (slot->is_object()) {
    throw ConfigError(key + " is a config section, not a value");
  }
  if (slot->is_array()) {
    assign_checked(*slot, parse_array_like(*slot, value, key), key);
  } else {
    assign_checked(*slot, parse_scalar_like(*slot, value, key), key);
  }
  config = decode(j);
}

std::string canonical_json(const ExperimentConfig& config) {
  json j = encode(config);
  j.erase("output_dir");  // where results land does not change what they are
  return j.dump();
}

std::string config_digest(const ExperimentConfig& config) {
  return fnv1a64_hex(canonical_json(config));
}

fs::path resolve_output_dir(const std::optional<std::string>& cli_out,
                            const ExperimentConfig& config) {
  if (cli_out.has_value() && !cli_out->empty()) return *cli_out;
  if (!config.output_dir.empty()) return config.output_dir;
  if (const char* env = std::getenv("CALIKD_OUT"); env != nullptr && *env != '\0') {
    return env;
  }
  return "runs";
}

std::array<data::Dataset, 3> build_splits(const ExperimentConfig& config) {
  config.validate();
  data::Dataset full =
      config.dataset.kind == "synthetic"
          ? data::generate_synthetic(config.dataset.synthetic)
          : data::load_idx_dataset(config.dataset.idx_images, config.dataset.idx_labels,
                                   config.dataset.idx_subset);
  return data::split(full, config.dataset.fractions, config.dataset.split_seed);
}

// ---------------------------------------------------------------------------
// artifact files

void save_model(const fs::path& path, const nnet::MlpModel& model) {
  json j;
  j["format"] = "calikd-mlp-1";
  j["layer_dims"] = model.layer_dims;
  json weights = json::array();
  for (const Matrix& w : model.weights) weights.push_back(w.data());
  j["weights"] = std::move(weights);
  j["biases"] = model.biases;
  detail::write_text(path, j.dump() + "\n");
}

nnet::MlpModel load_model(const fs::path& path) {
  const json j = detail::load_json_file(path);
  if (!j.is_object() || j.value("format", "") != "calikd-mlp-1") {
    throw FormatError(path.string() + ": not a calikd-mlp-1 model file");
  }
  nnet::MlpModel model;
  try {
    model.layer_dims = j.at("layer_dims").get<std::vector<std::size_t>>();
    const json& weights = j.at("weights");
    const json& biases = j.at("biases");
    if (model.layer_dims.size() < 2 ||
        weights.size() != model.layer_dims.size() - 1 ||
        biases.size() != model.layer_dims.size() - 1) {
      throw FormatError(path.string() + ": layer structure is inconsistent");
    }
    for (std::size_t l = 0; l + 1 < model.layer_dims.size(); ++l) {
      Matrix w(model.layer_dims[l], model.layer_dims[l + 1]);
      std::vector<double> flat = weights.at(l).get<std::vector<double>>();
      if (flat.size() != w.data().size()) {
        throw FormatError(path.string() + ": layer " + std::to_string(l) + " has " +
                          std::to_string(flat.size()) + " weights, expected " +
                          std::to_string(w.data().size()));
      }
      w.data() = std::move(flat);
      model.weights.push_back(std::move(w));
      std::vector<double> b = biases.at(l).get<std::vector<double>>();
      if (b.size() != model.layer_dims[l + 1]) {
        throw FormatError(path.string() + ": layer " + std::to_string(l) + " has " +
                          std::to_string(b.size()) + " biases, expected " +
                          std::to_string(model.layer_dims[l + 1]));
      }
      model.biases.push_back(std::move(b));
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (!model.all_finite()) {
    throw ValidationError(path.string() + ": model parameters are non-finite");
  }
  return model;
}

void save_fit(const fs::path& path, const calibration::TemperatureFit& fit,
              const calibration::CalibrationReport& report, int bin_count) {
  json j;
  j["format"] = "calikd-fit-1";
  j["temperature"] = fit.temperature;
  j["nll_before"] = fit.nll_before;
  j["nll_after"] = fit.nll_after;
  j["converged"] = fit.converged;
  j["clamped_at_bound"] = fit.clamped_at_bound;
  j["degenerate_input"] = fit.degenerate_input;
  j["evaluations"] = fit.evaluations;
  j["ece_before"] = report.ece_before;
  j["ece_after"] = report.ece_after;
  j["accuracy"] = report.accuracy;
  j["bin_count"] = bin_count;
  detail::write_text(path, j.dump(2) + "\n");
}

calibration::TemperatureFit load_fit(const fs::path& path) {
  const json j = detail::load_json_file(path);
  if (!j.is_object() || j.value("format", "") != "calikd-fit-1") {
    throw FormatError(path.string() + ": not a calikd-fit-1 file");
  }
  calibration::TemperatureFit fit;
  try {
    fit.temperature = j.at("temperature").get<double>();
    fit.nll_before = j.at("nll_before").get<double>();
    fit.nll_after = j.at("nll_after").get<double>();
    fit.converged = j.at("converged").get<bool>();
    fit.clamped_at_bound = j.at("clamped_at_bound").get<bool>();
    fit.degenerate_input = j.at("degenerate_input").get<bool>();
    fit.evaluations = j.at("evaluations").get<int>();
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (!(fit.temperature > 0.0) || !std::isfinite(fit.temperature)) {
    throw ValidationError(path.string() + ": temperature must be positive");
  }
  return fit;
}

// ---------------------------------------------------------------------------
// layout

fs::path experiment_root(const fs::path& out_root, const ExperimentConfig& config) {
  return out_root / config_digest(config);
}

std::string cell_name(int size, const std::string& mode_slot, std::uint64_t seed) {
  return std::to_string(size) + "-" + mode_slot + "-" + std::to_string(seed);
}

fs::path cell_dir(const fs::path& root, const std::string& stage, int size,
                  const std::string& mode_slot, std::uint64_t seed) {
  return root / stage / cell_name(size, mode_slot, seed);
}

// ---------------------------------------------------------------------------
// stage runners

void run_train_teacher(const ExperimentConfig& config, const StageOptions& options) {
  StageContext ctx(config, options);
  const std::vector<TeacherKey> cells = teacher_cells(config, options.filter);
  parallel_for(cells.size(), options.jobs, [&](std::size_t i) {
    train_teacher_cell(ctx, cells[i].size, cells[i].seed);
  });
}

void run_calibrate(const ExperimentConfig& config, const StageOptions& options) {
  StageContext ctx(config, options);
  const std::vector<TeacherKey> cells = teacher_cells(config, options.filter);
  parallel_for(cells.size(), options.jobs, [&](std::size_t i) {
    calibrate_cell(ctx, cells[i].size, cells[i].seed);
  });
}

void run_distill(const ExperimentConfig& config, const StageOptions& options) {
  StageContext ctx(config, options);
  const std::vector<StudentKey> cells = student_cells(config, options.filter);
  parallel_for(cells.size(), options.jobs, [&](std::size_t i) {
    distill_cell(ctx, cells[i].size, cells[i].mode, cells[i].seed);
  });
}

void run_sweep(const ExperimentConfig& config, const StageOptions& options) {
  // phases are completion barriers: every teacher exists before any student
  run_train_teacher(config, options);
  run_calibrate(config, options);
  run_distill(config, options);
  const CellFilter& f = options.filter;
  if (!f.size.has_value() && !f.seed.has_value() && !f.mode.has_value()) {
    run_report(config, options);
  }
}

}  // namespace calikd::pipeline
