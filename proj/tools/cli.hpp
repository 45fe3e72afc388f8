#pragma once

#include <ostream>

namespace rldc {

// Entry point of the rldc command; returns the process exit code.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace rldc
