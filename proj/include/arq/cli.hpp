#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace arq::cli {

inline constexpr const char* kVersion = "1.0.0";

enum ExitCode : int { ok = 0, usage = 1, config = 2, runtime = 3 };

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace arq::cli
