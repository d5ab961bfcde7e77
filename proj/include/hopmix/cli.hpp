#pragma once

namespace hopmix {

// Entry point behind the `hopmix` binary. Returns 0 on success, 1 on usage
// errors (bad flags, unknown config keys), 2 on runtime failures.
int cli_main(int argc, const char* const* argv);

}  // namespace hopmix
