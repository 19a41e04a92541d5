#pragma once

#include <string_view>

namespace mgh::log {

enum class Level { Quiet = 0, Warn = 1, Info = 2, Debug = 3 };

/// Current verbosity. Initialized from MGH_LOG (quiet|warn|info|debug),
/// default warn.
Level level();
void set_level(Level level);

void warn(std::string_view message);
void info(std::string_view message);
void debug(std::string_view message);

} // namespace mgh::log
