#include "netconv/common/logging.hpp"

#include <spdlog/sinks/stdout_sinks.h>

#include <cstdlib>
#include <memory>
#include <mutex>

namespace netconv {

namespace {

std::shared_ptr<spdlog::logger> make_logger() {
  auto logger = spdlog::stderr_logger_mt("netconv");
  logger->set_pattern("%Y-%m-%dT%H:%M:%S.%e %l %v");
  spdlog::level::level_enum level = spdlog::level::info;
  if (const char* env = std::getenv("NETCONV_LOG")) level = spdlog::level::from_str(env);
  logger->set_level(level);
  return logger;
}

std::shared_ptr<spdlog::logger>& instance() {
  static std::once_flag once;
  static std::shared_ptr<spdlog::logger> logger;
  std::call_once(once, [] { logger = make_logger(); });
  return logger;
}

}  // namespace

void init_logging() { instance(); }

spdlog::logger& log() { return *instance(); }

}  // namespace netconv
