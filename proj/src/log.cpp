#include "tascforge/log.hpp"

#include <cstdlib>
#include <iostream>

namespace tascforge {

LogLevel log_level() {
  static LogLevel level = [] {
    const char* env = std::getenv("TASCFORGE_LOG");
    if (!env) return LogLevel::Info;
    std::string value(env);
    if (value == "error") return LogLevel::Error;
    if (value == "debug") return LogLevel::Debug;
    return LogLevel::Info;
  }();
  return level;
}

namespace {

void emit(LogLevel wanted, const char* tag, const std::string& message) {
  if (log_level() < wanted) return;
  std::cerr << tag << message << "\n";
}

}  // namespace

void log_error(const std::string& message) { emit(LogLevel::Error, "[error] ", message); }
void log_info(const std::string& message) { emit(LogLevel::Info, "[info] ", message); }
void log_debug(const std::string& message) { emit(LogLevel::Debug, "[debug] ", message); }

}  // namespace tascforge
