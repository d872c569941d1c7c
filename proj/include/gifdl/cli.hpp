#pragma once

#include <string>
#include <vector>

namespace gifdl {

inline constexpr const char* kToolVersion = "0.1.0";

// Command-line entry point behind the gifdl binary: argv-style tokens in
// natural order, without the program name. Subcommands: dataset, train,
// embed, extract, combine, eval, report. Every command echoes its effective
// configuration to stdout and writes a JSON run manifest (inputs, outputs,
// seed, config hash, tool version) next to its primary output. Returns the
// process exit code; 0 only if the command ran and its postconditions held.
int run_cli(const std::vector<std::string>& args);

}  // namespace gifdl
