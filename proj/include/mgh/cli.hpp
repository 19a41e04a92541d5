#pragma once

#include <iosfwd>
#include <set>
#include <string>

namespace mgh {

/// Runs one subcommand. Payloads go to `out`, diagnostics to `err`.
/// Returns 0 on success, 1 on invalid input, 2 on a numeric failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Every long flag the parser accepts, across all subcommands.
std::set<std::string> cli_flag_names();

} // namespace mgh
