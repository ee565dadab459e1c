#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ransim/error.hpp"

namespace ransim::cli {

// Stable process exit codes.
enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kRefused = 3,   // consent / sandbox refusal
  kKeyError = 4,
  kPartial = 5,   // some files failed
  kCapHalt = 6,
};

int exit_code_for(Errc code);

/// `args` excludes the program name. Reports go to `out`, progress and errors to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// "500MB", "2GiB", "1024". Decimal suffixes are powers of 1000.
std::uint64_t parse_size(const std::string& text);

}  // namespace ransim::cli
