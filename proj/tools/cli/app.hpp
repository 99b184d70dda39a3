#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace simofdm::cli {

/// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kUsage = 1,       // bad flags or missing arguments
  kConfig = 2,      // config file missing or unreadable, syntax error, unknown key, bad override
  kValidation = 3,  // config parses but is inconsistent, or a checkpoint does not match it
  kRuntime = 4,     // numerical failure, divergence, I/O error while running
};

struct Outcome {
  int code = kOk;
  std::string run_dir;  // empty when the command creates none
};

/// Runs one invocation. `args` excludes the program name.
Outcome run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace simofdm::cli
