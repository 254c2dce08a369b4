#pragma once

#include <iosfwd>

namespace ftcaqr {

/// Exit codes: 0 ok, 1 verification failure, 2 usage error,
/// 3 unrecoverable simulated failure.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ftcaqr
