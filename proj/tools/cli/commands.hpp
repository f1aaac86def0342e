#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "config.hpp"
#include "ncconv/data.hpp"

namespace ncconv::cli {

enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitConfigError = 2 };

inline constexpr const char* kDataDirEnv = "NCCONV_DATA_DIR";
inline constexpr const char* kResolvedConfigName = "config.resolved.json";

// Each command writes its resolved config and all outputs under cfg.out and returns an
// exit code. Errors propagate as exceptions; run_cli maps them to codes.
int cmd_gradcheck(const RunConfig& cfg, std::ostream& log);
int cmd_verify_theory(const RunConfig& cfg, std::ostream& log);
int cmd_train(const RunConfig& cfg, std::ostream& log);
int cmd_eval(const RunConfig& cfg, std::ostream& log);
int cmd_bench(const RunConfig& cfg, std::ostream& log);

// Resolves data.dir (falling back to $NCCONV_DATA_DIR), loads, and subsets.
DatasetSplit load_data(const RunConfig& cfg);

// argv-level entry point: `ncconv <command> --config FILE [--seed N] [--out DIR]`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ncconv::cli
