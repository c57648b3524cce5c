#pragma once

#include <spdlog/spdlog.h>

namespace netconv {

// Configures the process-wide stderr logger. Verbosity comes from the
// NETCONV_LOG environment variable (trace, debug, info, warn, error, off);
// defaults to info.
void init_logging();

spdlog::logger& log();

}  // namespace netconv
