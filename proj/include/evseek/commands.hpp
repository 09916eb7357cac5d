#pragma once

// CLI front door: subcommand dispatch, config resolution, and per-run
// artifact bookkeeping (resolved-config.txt + manifest.txt).

#include <string>
#include <vector>

namespace evseek {

// Exit 0 on success, 1 on invalid config/inputs, 2 on usage errors.
int dispatch(int argc, const char* const* argv);
int dispatch(const std::vector<std::string>& args);

}  // namespace evseek
