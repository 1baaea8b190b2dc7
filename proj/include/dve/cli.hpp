#pragma once

#include <atomic>
#include <string>

#include "dve/config.hpp"

// Subcommand entry points shared by the CLI binary and the test suites.
// Exit codes: 0 success, 2 configuration/input error, 3 excessive
// per-sample failures (or an interrupted run).

namespace dve::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitFailures = 3;

int cmd_classify(const RunConfig& config, std::atomic<bool>* cancel = nullptr);
int cmd_generate(const RunConfig& config, std::atomic<bool>* cancel = nullptr);
int cmd_judge(const RunConfig& config, const std::string& records_path);
int cmd_dataset(const RunConfig& config, const std::string& action, bool strict);
int cmd_cache(const RunConfig& config, const std::string& action, bool strict = false);

}  // namespace dve::cli
