#pragma once

namespace riser {

// Exit codes: 0 success, 2 configuration error, 3 data/artifact error,
// 4 numeric abort, 1 anything else.
inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

/// Entry point of the experiment driver (also callable in-process by tests).
int cli_main(int argc, const char* const* argv);

}  // namespace riser
