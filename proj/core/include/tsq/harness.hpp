#pragma once

// Command front end: configuration resolution, per-command runs, manifests and the summary report.
//
// A config is one JSON document with "schema_version": 1 and a mandatory "seed". Every default is
// written back into the resolved config, which is echoed next to the outputs; running a command
// on its own resolved config reproduces the same CSV bytes.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace tsq::harness {

inline constexpr int kExitOk = 0;        // pass or neutral
inline constexpr int kExitUsage = 1;     // usage, config, or I/O problem
inline constexpr int kExitCheck = 2;     // a scientific check failed
inline constexpr int kSchemaVersion = 1;

const std::vector<std::string>& commands();

struct RunRequest {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;  // overrides the config seed
  std::string out_dir;                // empty: ./out/<command>
};

/// Parses and validates the config for `command`, filling every default. Throws tsq::Error
/// (kind config, parse or io) on any problem. `base_dir` resolves relative file references.
std::string resolve_config(const std::string& command, const std::string& text, std::optional<std::uint64_t> seed,
                           const std::string& base_dir = ".");

/// Runs one command end to end and returns the exit code. Progress lines go to `log`, error
/// messages to `err`. Nothing is written under the output directory unless the config is valid.
int run(const RunRequest& request, std::ostream& log, std::ostream& err);

/// One row of the summary table: ensemble level, description, checks seen and their status.
struct ReportRow {
  std::string level;  // E0..E3
  std::string description;
  std::vector<std::string> commands;
  std::string status;  // pass, fail, neutral or not-run
  std::string checks;
};

std::vector<ReportRow> summarize_manifests(const std::vector<std::string>& manifest_paths);

}  // namespace tsq::harness
