#pragma once

#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "run_config.hpp"

namespace protoseg::cli {

/// Directory sources when episode_dirs is set, otherwise the synthetic preset.
std::unique_ptr<EpisodeSource> make_source(const RunConfig& cfg);

// Each command writes its outputs under cfg.out and returns a summary.

/// Writes checkpoint/, loss.csv and train.json.
nlohmann::json cmd_train(const RunConfig& cfg);

/// Writes report.json, refinement.jsonl and, for the first dump_maps
/// episodes, maps/episode_NNNNN/ tensors.
nlohmann::json cmd_eval(const RunConfig& cfg);

/// Writes episode_NNNNN/ fixtures and episodes.json.
nlohmann::json cmd_gen(const RunConfig& cfg);

/// Writes embeddings/ (one row per query pixel and prototype), labels.csv
/// and embeddings.json.
nlohmann::json cmd_dump_embeddings(const RunConfig& cfg);

/// Process exit code for an exception escaping a command.
int exit_code_for(const std::exception& e);

/// {"status": "error", "command", "error": {"type", "message"}}.
nlohmann::json error_record(const std::string& command, const std::exception& e);

/// Parses arguments, runs the command and reports the outcome as one JSON
/// line on `out` (success) or `err` (failure, also saved as out/error.json
/// when possible). Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace protoseg::cli
