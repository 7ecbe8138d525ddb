// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unlearn/corpus.hpp"
#include "unlearn/engine.hpp"

namespace unlearn {

inline constexpr int kConfigSchemaVersion = 1;

// Everything one experiment needs. The model's vocab_size always follows the
// corpus.
struct ExperimentConfig {
  CorpusParams corpus;
  int heldout_samples = 256;
  PretrainConfig pretrain;
  RunConfig run;
  std::vector<std::uint64_t> seeds{1};
  std::vector<double> sweep_alpha{0.5};
  std::vector<double> sweep_beta{1.0};
  std::vector<double> sweep_lr;  // empty: the run's lr
  std::filesystem::path data_dir = "data";
  std::filesystem::path out_dir = "runs";

  void validate() const;  // throws ConfigError
  std::vector<SweepCell> sweep_grid() const;
  bool operator==(const ExperimentConfig&) const = default;
};

// `key = value` lines, '#' comments, schema_version required. Unknown or
// repeated keys and malformed values raise ConfigError naming the line.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Every key with its current value; parse_config(render_config(c)) == c.
std::string render_config(const ExperimentConfig& config);

}  // namespace unlearn
