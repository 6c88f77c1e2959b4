#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hieraddr {

/// Entry point of the `hieraddr` command. Returns 0 on success, 1 on usage
/// or configuration errors, 2 on data/model errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hieraddr
