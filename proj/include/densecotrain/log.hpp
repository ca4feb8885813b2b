#pragma once

#include <memory>

#include <spdlog/logger.h>

namespace densecotrain {

/// Library logger. Writes to stderr only; the level comes from the
/// DENSECOTRAIN_LOG environment variable (trace|debug|info|warn|error|off,
/// default warn).
spdlog::logger& log();

}  // namespace densecotrain
