#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace taxogloss {

/// Process exit statuses of the command-line front end.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitValidation = 3,
  kExitRuntime = 4,
};

/// Resolves a taxonomy argument: the path itself, then the same name (with and
/// without ".json") under $TAXOGLOSS_DATA_DIR, the source tree's data
/// directory and the installed data directory. Throws LookupError.
std::string resolve_taxonomy_path(const std::string& name);

/// Runs one subcommand. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace taxogloss
