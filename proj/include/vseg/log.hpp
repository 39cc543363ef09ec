#ifndef VSEG_LOG_HPP
#define VSEG_LOG_HPP

#include <string_view>

namespace vseg {

enum class LogLevel { Debug = 0, Info = 1, Warning = 2, Quiet = 3 };

void set_log_level(LogLevel level);
LogLevel log_level();

void log_info(std::string_view message);
void log_warning(std::string_view message);

}  // namespace vseg

#endif  // VSEG_LOG_HPP
