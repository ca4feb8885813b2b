#include "densecotrain/log.hpp"

#include <cstdlib>
#include <string>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

namespace densecotrain {

spdlog::logger& log() {
  static std::shared_ptr<spdlog::logger> logger = [] {
    auto l = std::make_shared<spdlog::logger>("densecotrain",
                                              std::make_shared<spdlog::sinks::stderr_sink_mt>());
    auto level = spdlog::level::warn;
    if (const char* env = std::getenv("DENSECOTRAIN_LOG")) {
      level = spdlog::level::from_str(env);
    }
    l->set_level(level);
    l->set_pattern("[%H:%M:%S.%e] [%l] %v");
    return l;
  }();
  return *logger;
}

}  // namespace densecotrain
