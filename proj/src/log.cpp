#include "hetdiar/log.hpp"

#include <atomic>
#include <iostream>

namespace hetdiar {

namespace {
std::atomic<int> g_level{static_cast<int>(LogLevel::kWarning)};
}

void set_log_level(LogLevel level) { g_level = static_cast<int>(level); }

void log_warning(const std::string& msg) {
  if (g_level >= static_cast<int>(LogLevel::kWarning)) std::cerr << "WARNING: " << msg << '\n';
}

void log_info(const std::string& msg) {
  if (g_level >= static_cast<int>(LogLevel::kInfo)) std::cerr << "INFO: " << msg << '\n';
}

}  // namespace hetdiar
