#pragma once

#include <string>
#include <vector>

namespace sedsr {

/// Exit codes of the `sedsr` binary.
enum ExitCode : int {
    exit_ok = 0,
    exit_runtime_error = 1,  // training divergence, I/O failure, ...
    exit_config_error = 2,   // bad flags, unknown keys or verbs, invalid values
};

/// Entry point behind `sedsr <verb> [options]`; verbs are pretrain, train, eval, infer,
/// features and ablate.
int cli_main(int argc, char** argv);
int cli_main(const std::vector<std::string>& args);

} // namespace sedsr
