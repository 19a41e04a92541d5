#include "mgh/log.hpp"

#include <cstdlib>
#include <iostream>
#include <string>

namespace mgh::log {

namespace {

Level from_env()
{
    const char* env = std::getenv("MGH_LOG");
    if (!env) return Level::Warn;
    const std::string v(env);
    if (v == "quiet") return Level::Quiet;
    if (v == "info") return Level::Info;
    if (v == "debug") return Level::Debug;
    return Level::Warn;
}

Level& current()
{
    static Level lvl = from_env();
    return lvl;
}

void emit(Level at, std::string_view tag, std::string_view message)
{
    if (static_cast<int>(current()) < static_cast<int>(at)) return;
    std::cerr << "[mgh " << tag << "] " << message << '\n';
}

} // namespace

Level level() { return current(); }
void set_level(Level lvl) { current() = lvl; }

void warn(std::string_view message) { emit(Level::Warn, "warn", message); }
void info(std::string_view message) { emit(Level::Info, "info", message); }
void debug(std::string_view message) { emit(Level::Debug, "debug", message); }

} // namespace mgh::log
