#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tarec::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kData = 2,
  kTraining = 3,
  kCheckpoint = 4,
  kEval = 5,
  kProbe = 6,
};

/// Environment variable naming the output root (default ./tarec-out).
inline constexpr const char* kOutputEnv = "TAREC_OUTPUT_DIR";

/// Entry point of the `tarec` executable, usable in-process.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tarec::cli
