#pragma once

#include <string_view>

namespace kiwiqe {

enum class LogLevel { kQuiet = 0, kWarning = 1, kInfo = 2 };

void set_log_level(LogLevel level);
LogLevel log_level();

// Both write a single line to stderr when the level allows it.
void log_warning(std::string_view message);
void log_info(std::string_view message);

}  // namespace kiwiqe
