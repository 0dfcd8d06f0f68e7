#pragma once

#include <spdlog/logger.h>

namespace cmow {

// Library-wide logger writing to stderr. The level comes from the CMOW_LOG
// environment variable (trace, debug, info, warn, error, off; default info).
spdlog::logger& logger();

}  // namespace cmow
