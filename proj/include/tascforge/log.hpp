#pragma once

#include <string>

namespace tascforge {

// Leveled stderr logging controlled by TASCFORGE_LOG in {error, info, debug};
// default info. Log output never goes into run artifacts.
enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

LogLevel log_level();
void log_error(const std::string& message);
void log_info(const std::string& message);
void log_debug(const std::string& message);

}  // namespace tascforge
