#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace prsfda::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsage = 2;

// Runs one verb. `args` excludes the program name. Diagnostics go to `err`,
// the short human summary to `out`; every result is a file under --out.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Keeps freed training buffers in the heap instead of returning them to the
// OS after every step. No-op outside glibc.
void configure_allocator();

}  // namespace prsfda::cli
