// calikd: train, calibrate and distill teacher/student MLPs, then compare
// vanilla against calibrated knowledge distillation.
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "calikd/error.hpp"
#include "calikd/pipeline.hpp"
#include "calikd/version.hpp"

namespace {

using calikd::pipeline::ExperimentConfig;
using calikd::pipeline::StageOptions;

struct CommandArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::string> out;
  std::optional<int> size;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  int jobs = 0;
};

void add_common_options(CLI::App* cmd, CommandArgs& args, bool with_filters) {
  cmd->add_option("--config", args.config_path,
                  "experiment config file (JSON); defaults apply when omitted")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", args.overrides,
                  "override a config value, e.g. --set train.max_epochs=5");
  cmd->add_option("--out", args.out,
                  "output directory (falls back to config output_dir, then "
                  "$CALIKD_OUT, then ./runs)");
  cmd->add_option("--jobs", args.jobs, "worker threads (0 = all cores)");
  if (with_filters) {
    cmd->add_option("--size", args.size, "restrict to one teacher size");
    cmd->add_option("--seed", args.seed, "restrict to one seed");
    cmd->add_option("--mode", args.mode,
                    "restrict distillation to one mode: vanilla|calibrated")
        ->check(CLI::IsMember({"vanilla", "calibrated"}));
  }
}

ExperimentConfig resolve_config(const CommandArgs& args) {
  ExperimentConfig config = args.config_path.empty()
                                ? calikd::pipeline::default_config()
                                : calikd::pipeline::load_config(args.config_path);
  for (const std::string& assignment : args.overrides) {
    calikd::pipeline::apply_override(config, assignment);
  }
  config.validate();
  return config;
}

StageOptions resolve_options(const CommandArgs& args, const ExperimentConfig& config) {
  StageOptions options;
  options.out_root = calikd::pipeline::resolve_output_dir(args.out, config);
  options.jobs = args.jobs;
  options.log = &std::cout;
  options.filter.size = args.size;
  options.filter.seed = args.seed;
  if (args.mode.has_value()) {
    options.filter.mode = *args.mode == "calibrated"
                              ? calikd::distill::Mode::calibrated
                              : calikd::distill::Mode::vanilla;
  }
  return options;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"calibrated knowledge distillation pipeline"};
  app.set_version_flag("--version", std::string(calikd::kLibraryVersion));
  app.require_subcommand(1);

  CommandArgs args;
  CLI::App* train_teacher = app.add_subcommand(
      "train-teacher", "train the configured teachers and store model + logits");
  CLI::App* calibrate = app.add_subcommand(
      "calibrate", "fit the scaling temperature on each teacher's validation logits");
  CLI::App* distill = app.add_subcommand(
      "distill", "train students against stored teachers (vanilla and calibrated)");
  CLI::App* sweep = app.add_subcommand(
      "sweep", "run every stage for every cell, then the report");
  CLI::App* report = app.add_subcommand(
      "report", "aggregate completed cells into comparison tables and a verdict");
  CLI::App* verify = app.add_subcommand(
      "verify", "check artifact checksums and re-derive stored metrics");
  for (CLI::App* cmd : {train_teacher, calibrate, distill, sweep}) {
    add_common_options(cmd, args, true);
  }
  for (CLI::App* cmd : {report, verify}) {
    add_common_options(cmd, args, false);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const ExperimentConfig config = resolve_config(args);
    const StageOptions options = resolve_options(args, config);
    if (train_teacher->parsed()) {
      calikd::pipeline::run_train_teacher(config, options);
    } else if (calibrate->parsed()) {
      calikd::pipeline::run_calibrate(config, options);
    } else if (distill->parsed()) {
      calikd::pipeline::run_distill(config, options);
    } else if (sweep->parsed()) {
      calikd::pipeline::run_sweep(config, options);
    } else if (report->parsed()) {
      calikd::pipeline::run_report(config, options);
    } else if (verify->parsed()) {
      const calikd::pipeline::VerifyResult result =
          calikd::pipeline::run_verify(config, options);
      if (!result.ok) return 1;
    }
    return 0;
  } catch (const calikd::DivergedError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const calikd::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << '\n';
    return 2;
  }
}
