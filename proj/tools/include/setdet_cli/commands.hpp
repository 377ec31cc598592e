#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace setdet::cli {

enum ExitCode : int { kSuccess = 0, kRuntimeFailure = 1, kUsageError = 2 };

struct SplitOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> manifest;
  std::size_t k = 5;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
};

struct RunOptions {
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> fold;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> out;
  std::optional<double> threshold;
  std::vector<std::filesystem::path> images;
};

// Each command throws on failure; run() maps exceptions to exit codes.
void cmd_split(const SplitOptions& opts);
void cmd_train(const RunOptions& opts);
void cmd_eval(const RunOptions& opts);
/// Returns the number of images that could not be processed.
std::size_t cmd_infer(const RunOptions& opts);

/// Parses argv, dispatches to a subcommand and returns the process exit code.
int run(int argc, const char* const* argv);

}  // namespace setdet::cli
