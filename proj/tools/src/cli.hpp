#pragma once

#include <functional>
#include <istream>
#include <ostream>

namespace dropbp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumeric = 2;
inline constexpr int kExitLogsDiffer = 3;

using Getenv = std::function<const char*(const char*)>;

// Entry point of the `dropbp` tool. `in` feeds `allocate --table -`, output
// goes to `out`, diagnostics to `err`, environment lookups through `getenv`.
int run(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err,
        const Getenv& getenv);

}  // namespace dropbp::cli
