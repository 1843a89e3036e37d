#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pf::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;     // runtime error or failed selftest
inline constexpr int kExitUsage = 2;       // unknown subcommand or flag
inline constexpr int kExitValidation = 3;  // config violation

inline constexpr const char* kMetricsSchema = "pf.metrics/1";
inline constexpr const char* kErrorSchema = "pf.error/1";
// Default output root when neither --out nor run.out is given.
inline constexpr const char* kOutputRootEnv = "PF_OUTPUT_ROOT";

// Parses argv (argv[0] is the program name), runs one subcommand, writes its
// artifacts and returns the exit status. Progress goes to `out`; errors go to
// `err` as a one-line JSON record, also saved as error.json in the run
// directory when one exists.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pf::cli
