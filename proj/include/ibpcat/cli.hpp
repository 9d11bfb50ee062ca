#pragma once

#include <string_view>

namespace ibpcat::cli {

inline constexpr std::string_view kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

/// Entry point behind the ibpcat executable. Subcommands: synth-images,
/// synth-cat, gibbs, vi, analyze.
int dispatch(int argc, const char* const* argv);

}  // namespace ibpcat::cli
