// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "unlearn/corpus.hpp"
#include "unlearn/engine.hpp"

namespace unlearn {

inline constexpr int kReportFormatVersion = 1;

nlohmann::json to_json(const EpochReport& report);
EpochReport epoch_report_from_json(const nlohmann::json& j);  // throws FormatError

// One EpochReport object per line.
void write_epoch_lines(std::span<const EpochReport> reports, const std::filesystem::path& path);
std::vector<EpochReport> read_epoch_lines(const std::filesystem::path& path);

// A row of the method comparison table: EL10 and MA as percentages.
struct TableRow {
  std::string label;
  double el10_pct = 0.0;
  double ma_pct = 0.0;
  double embed_f1 = 0.0;
  double entropy = 0.0;
  double ppl = 0.0;
  int epoch = 0;
};

TableRow table_row(std::string label, const EpochReport& report);

std::string comparison_csv(std::span<const TableRow> rows);

// Ablation table over (alpha, beta, lr) cells; failed cells keep their error.
struct AblationRow {
  double alpha = 0.0;
  double beta = 0.0;
  double lr = 0.0;
  bool ok = false;
  TableRow metrics;
  std::string termination;
  std::string error;
};

std::string ablation_csv(std::span<const AblationRow> rows);

struct GenerationExample {
  std::string id;
  std::string prefix;
  std::string reference;
  std::string before;
  std::string after;
};

// Samples in forget order, continuations taken from the baseline and final
// reports; at most `limit` entries.
std::vector<GenerationExample> generation_examples(const Vocabulary& vocab, std::span<const TokenSequence> forget,
                                                   const EpochReport& before, const EpochReport& after,
                                                   std::size_t limit);

std::string examples_text(std::span<const GenerationExample> examples);
nlohmann::json examples_json(std::span<const GenerationExample> examples);

// Plain-text summary of one run: baseline, final metrics and termination.
std::string run_summary(const std::string& label, const EpochReport& baseline, const EpochReport& final_report,
                        const std::string& termination);

}  // namespace unlearn
