#pragma once

namespace hnrfs {

/// Entry point of the hnrfs executable. Returns the process exit code:
/// 0 on success, 1 on a pipeline error, 2 on a usage error.
int run_cli(int argc, char** argv);

}  // namespace hnrfs
