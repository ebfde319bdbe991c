#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace cardiofuse::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kTrainingFailure = 3,
  kKindMismatch = 4,
};

/// Entry point of the `cardiofuse` executable. Subcommands: synth, prep,
/// train, cv, ablate, importance. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Output root: the explicit flag, else $CARDIOFUSE_OUT, else "cardiofuse_runs".
std::filesystem::path output_root(const std::string& flag);

}  // namespace cardiofuse::cli
