#include "cmow/log.hpp"

#include <spdlog/sinks/stdout_sinks.h>

#include <cstdlib>
#include <memory>

namespace cmow {

spdlog::logger& logger() {
  static std::shared_ptr<spdlog::logger> instance = [] {
    auto sink = std::make_shared<spdlog::sinks::stderr_sink_mt>();
    auto log = std::make_shared<spdlog::logger>("cmow", sink);
    log->set_pattern("[%H:%M:%S.%e] [%l] %v");
    const char* level = std::getenv("CMOW_LOG");
    log->set_level(level != nullptr ? spdlog::level::from_str(level) : spdlog::level::info);
    return log;
  }();
  return *instance;
}

}  // namespace cmow
