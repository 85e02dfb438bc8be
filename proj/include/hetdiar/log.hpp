#ifndef HETDIAR_LOG_HPP
#define HETDIAR_LOG_HPP

#include <string>

namespace hetdiar {

enum class LogLevel { kQuiet = 0, kWarning = 1, kInfo = 2 };

void set_log_level(LogLevel level);
void log_warning(const std::string& msg);
void log_info(const std::string& msg);

}  // namespace hetdiar

#endif  // HETDIAR_LOG_HPP
