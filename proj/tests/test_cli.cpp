#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct CommandResult {
  int exit_code = -1;
  std::string output;
};

// run the installed binary through /bin/sh; env_prefix lands before argv[0]
CommandResult run_cli(const std::string& args, const std::string& env_prefix = "") {
  static int counter = 0;
  const fs::path capture =
      fs::temp_directory_path() / ("calikd-cli-" + std::to_string(::getpid()) + "-" +
                                   std::to_string(counter++) + ".out");
  std::string command = env_prefix;
  if (!command.empty()) command += " ";
  command += CALIKD_BIN;
  command += " " + args + " >" + capture.string() + " 2>&1";

  const int status = std::system(command.c_str());
  CommandResult result;
  if (WIFEXITED(status)) result.exit_code = WEXITSTATUS(status);
  result.output = testutil::read_file(capture);
  fs::remove(capture);
  return result;
}

const char* kTinyConfig = R"({
  "dataset": {"class_count": 3, "dims": 5, "samples": 300,
              "label_noise_rate": 0.1, "seed": 5},
  "teacher": {"sizes": [4, 8]},
  "student": {"size": 4},
  "train": {"batch_size": 32, "max_epochs": 2},
  "seeds": [1, 2]
})";

// the experiment root is the single digest directory under the out root
fs::path digest_root(const fs::path& out_root) {
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(out_root)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  REQUIRE(dirs.size() == 1);
  return dirs.front();
}

struct CliFixture {
  testutil::TempDir dir;
  fs::path config_path;
  fs::path out_root;

  CliFixture() {
    config_path = dir.path() / "config.json";
    out_root = dir.path() / "out";
    testutil::write_file(config_path, kTinyConfig);
  }

  std::string base_args(const std::string& subcommand) const {
    return subcommand + " --config " + config_path.string() + " --out " +
           out_root.string() + " --jobs 1";
  }
};

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("--version prints the library version") {
  const CommandResult result = run_cli("--version");
  CHECK(result.exit_code == 0);
  CHECK(result.output.find("0.1.0") != std::string::npos);
}

TEST_CASE("--help lists every subcommand") {
  const CommandResult result = run_cli("--help");
  CHECK(result.exit_code == 0);
  for (const char* name :
       {"train-teacher", "calibrate", "distill", "sweep", "report", "verify"}) {
    CHECK(result.output.find(name) != std::string::npos);
  }
}

TEST_CASE("a subcommand is required") {
  const CommandResult result = run_cli("");
  CHECK(result.exit_code == 1);
}

TEST_CASE("unknown flags fail with exit 1") {
  const CommandResult result = run_cli("sweep --frobnicate");
  CHECK(result.exit_code == 1);
}

TEST_CASE("a missing config file is a parse failure") {
  const CommandResult result = run_cli("sweep --config /no/such/config.json");
  CHECK(result.exit_code == 1);
}

TEST_CASE("malformed --set assignments fail before any work") {
  CliFixture fix;
  CHECK(run_cli(fix.base_args("sweep") + " --set train.max_epochs").exit_code == 1);
  const CommandResult unknown =
      run_cli(fix.base_args("sweep") + " --set bogus.key=1");
  CHECK(unknown.exit_code == 1);
  CHECK(unknown.output.find("unknown config key") != std::string::npos);
  CHECK(run_cli(fix.base_args("sweep") + " --set train.max_epochs=0").exit_code == 1);
}

TEST_CASE("sweep runs end to end and verify passes") {
  CliFixture fix;
  const CommandResult sweep = run_cli(fix.base_args("sweep"));
  CHECK(sweep.exit_code == 0);
  CHECK(sweep.output.find("calibrated_dominates=") != std::string::npos);

  const fs::path root = digest_root(fix.out_root);
  CHECK(fs::exists(root / "verdict.txt"));
  CHECK(fs::exists(root / "comparison.csv"));
  CHECK(fs::exists(root / "train-teacher" / "4-base-1" / "model.json"));
  CHECK(fs::exists(root / "calibrate" / "8-base-2" / "fit.json"));
  CHECK(fs::exists(root / "distill" / "8-calibrated-2" / "model.json"));

  const CommandResult verify = run_cli(fix.base_args("verify"));
  CHECK(verify.exit_code == 0);
  CHECK(verify.output.find("0 failures") != std::string::npos);

  // report alone re-renders the tables
  const CommandResult report = run_cli(fix.base_args("report"));
  CHECK(report.exit_code == 0);
  CHECK(report.output.find("calibrated_dominates=") != std::string::npos);
}

TEST_CASE("stage filters narrow the work") {
  CliFixture fix;
  const CommandResult teacher =
      run_cli(fix.base_args("train-teacher") + " --size 4 --seed 1");
  CHECK(teacher.exit_code == 0);
  const fs::path root = digest_root(fix.out_root);
  CHECK(fs::exists(root / "train-teacher" / "4-base-1"));
  CHECK_FALSE(fs::exists(root / "train-teacher" / "4-base-2"));
  CHECK_FALSE(fs::exists(root / "train-teacher" / "8-base-1"));

  // vanilla distillation never needs a temperature fit
  CHECK(run_cli(fix.base_args("train-teacher")).exit_code == 0);
  const CommandResult vanilla =
      run_cli(fix.base_args("distill") + " --mode vanilla");
  CHECK(vanilla.exit_code == 0);
  CHECK(fs::exists(root / "distill" / "4-vanilla-1"));
  CHECK(fs::exists(root / "distill" / "8-vanilla-2"));
  CHECK_FALSE(fs::exists(root / "distill" / "4-calibrated-1"));

  const CommandResult bad_mode = run_cli(fix.base_args("distill") + " --mode other");
  CHECK(bad_mode.exit_code == 1);
  const CommandResult bad_size =
      run_cli(fix.base_args("train-teacher") + " --size 999");
  CHECK(bad_size.exit_code == 1);
}

TEST_CASE("missing upstream artifacts exit with code 1 and a hint") {
  CliFixture fix;
  const CommandResult result = run_cli(fix.base_args("calibrate"));
  CHECK(result.exit_code == 1);
  CHECK(result.output.find("missing teacher artifact") != std::string::npos);
  CHECK(result.output.find("run train-teacher first") != std::string::npos);
}

TEST_CASE("training divergence exits with code 2") {
  CliFixture fix;
  const CommandResult result = run_cli(fix.base_args("train-teacher") +
                                       " --size 4 --seed 1 --set train.initial_lr=1e15");
  CHECK(result.exit_code == 2);
  CHECK(result.output.find("diverged") != std::string::npos);
}

TEST_CASE("CALIKD_OUT supplies the output root when no flag is given") {
  CliFixture fix;
  const fs::path env_root = fix.dir.path() / "env-out";
  const std::string args = "train-teacher --config " + fix.config_path.string() +
                           " --jobs 1 --size 4 --seed 1";
  const CommandResult result =
      run_cli(args, "CALIKD_OUT=" + env_root.string());
  CHECK(result.exit_code == 0);
  REQUIRE(fs::exists(env_root));
  CHECK(fs::exists(digest_root(env_root) / "train-teacher" / "4-base-1"));

  // an explicit --out wins over the environment
  const fs::path flag_root = fix.dir.path() / "flag-out";
  const CommandResult flagged =
      run_cli(args + " --out " + flag_root.string(),
              "CALIKD_OUT=" + (fix.dir.path() / "ignored").string());
  CHECK(flagged.exit_code == 0);
  CHECK(fs::exists(flag_root));
  CHECK_FALSE(fs::exists(fix.dir.path() / "ignored"));
}

TEST_CASE("verify reports tampering with exit 1") {
  CliFixture fix;
  REQUIRE(run_cli(fix.base_args("sweep")).exit_code == 0);
  const fs::path victim =
      digest_root(fix.out_root) / "train-teacher" / "4-base-1" / "model.json";
  testutil::write_file(victim, testutil::read_file(victim) + " ");

  const CommandResult verify = run_cli(fix.base_args("verify"));
  CHECK(verify.exit_code == 1);
  CHECK(verify.output.find("model.json") != std::string::npos);
}

TEST_CASE("overrides change the digest directory") {
  CliFixture fix;
  REQUIRE(run_cli(fix.base_args("train-teacher") + " --size 4 --seed 1").exit_code ==
          0);
  REQUIRE(run_cli(fix.base_args("train-teacher") +
                  " --size 4 --seed 1 --set dataset.seed=6")
              .exit_code == 0);
  std::size_t digests = 0;
  for (const auto& entry : fs::directory_iterator(fix.out_root)) {
    if (entry.is_directory()) ++digests;
  }
  CHECK(digests == 2);
}

}  // TEST_SUITE
