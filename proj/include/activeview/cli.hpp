#pragma once

// Run configuration and the `activeview` subcommands.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "activeview/eval.hpp"
#include "activeview/microworld.hpp"
#include "activeview/model.hpp"
#include "activeview/training.hpp"

namespace av {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,    // bad flags, config or input validation
  kExitRuntime = 3,   // I/O failure, divergence, anything unexpected
  kExitEndpoint = 4,  // judge endpoint failure
};

struct JudgeSettings {
  int permutations = 8;  // must be a multiple of the candidate count
  uint64_t seed = 0;
  int max_attempts = 3;
  int max_in_flight = 4;
  std::string model = "judge";
  int timeout_seconds = 120;
  int candidate_size = 256;
  uint64_t stub_seed = 0;
};

void to_json(nlohmann::json& j, const JudgeSettings& s);
void from_json(const nlohmann::json& j, JudgeSettings& s);

struct RunConfig {
  MicroworldParams microworld;
  ModelConfig model;
  TrainConfig train;
  EvalParams eval;
  JudgeSettings judge;

  /// Every section valid on its own, and the model can consume the
  /// microworld's images and instructions.
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing fields take their defaults; unknown keys at any depth throw ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
};

/// Applies "a.b.c=value" to a config document. The value is parsed as JSON
/// when possible and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Defaults, then the optional file, then overrides in order; validated.
RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides);

/// Writes config.json (pretty, trailing newline) into `dir`.
void write_resolved_config(const std::filesystem::path& dir, const RunConfig& config);

/// Entry point of the executable; returns the process exit code.
int run_cli(const std::vector<std::string>& args);

}  // namespace av
