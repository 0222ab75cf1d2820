#pragma once

// Command-line front end: run, node, elect, analyze, keygen.
// Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.

#include <iosfwd>

namespace onionpos {

int runCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace onionpos
