#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dsnet::cli {

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2, kNumericFailure = 3 };

// args excludes the program name. Reports go to out, one-line failure causes to err.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace dsnet::cli
