// SPDX-License-Identifier: Apache-2.0
#include "unlearn/report.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "unlearn/error.hpp"

namespace unlearn {
namespace {

using nlohmann::json;

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

template <class V>
V field(const json& j, const char* key) {
  if (!j.contains(key)) throw FormatError(std::string("epoch report is missing '") + key + "'");
  try {
    return j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("epoch report field '") + key + "': " + e.what());
  }
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

json to_json(const EpochReport& r) {
  json samples = json::array();
  for (const auto& s : r.samples) {
    samples.push_back({{"id", s.metrics.id},
                       {"el", s.metrics.el},
                       {"ma", s.metrics.ma},
                       {"bleu", s.metrics.bleu},
                       {"embed_score", s.metrics.embed_score},
                       {"continuation", s.metrics.continuation},
                       {"forgotten", s.forgotten},
                       {"forgotten_epoch", s.forgotten_epoch}});
  }
  return {{"format_version", kReportFormatVersion},
          {"epoch", r.epoch},
          {"el10", r.el},
          {"ma", r.ma},
          {"bleu", r.bleu},
          {"embed_f1", r.embed_f1},
          {"entropy", r.entropy},
          {"ppl", r.ppl},
          {"loss", {{"l_fgt", r.loss.l_fgt}, {"l_lrn", r.loss.l_lrn}, {"l_kl", r.loss.l_kl}, {"combined", r.loss.combined}}},
          {"n_active", r.n_active},
          {"n_forgotten", r.n_forgotten},
          {"newly_forgotten", r.newly_forgotten},
          {"stop_reached", r.stop_reached},
          {"samples", samples}};
}

EpochReport epoch_report_from_json(const json& j) {
  if (!j.is_object()) throw FormatError("epoch report must be a JSON object");
  if (field<int>(j, "format_version") != kReportFormatVersion) throw FormatError("unsupported epoch report version");
  EpochReport r;
  r.epoch = field<int>(j, "epoch");
  r.el = field<double>(j, "el10");
  r.ma = field<double>(j, "ma");
  r.bleu = field<double>(j, "bleu");
  r.embed_f1 = field<double>(j, "embed_f1");
  r.entropy = field<double>(j, "entropy");
  r.ppl = field<double>(j, "ppl");
  const auto loss = field<json>(j, "loss");
  r.loss = {field<double>(loss, "l_fgt"), field<double>(loss, "l_lrn"), field<double>(loss, "l_kl"),
            field<double>(loss, "combined")};
  r.n_active = field<int>(j, "n_active");
  r.n_forgotten = field<int>(j, "n_forgotten");
  r.newly_forgotten = field<std::vector<std::string>>(j, "newly_forgotten");
  r.stop_reached = field<bool>(j, "stop_reached");
  for (const auto& s : field<json>(j, "samples")) {
    SampleRecord rec;
    rec.metrics.id = field<std::string>(s, "id");
    rec.metrics.el = field<double>(s, "el");
    rec.metrics.ma = field<double>(s, "ma");
    rec.metrics.bleu = field<double>(s, "bleu");
    rec.metrics.embed_score = field<double>(s, "embed_score");
    rec.metrics.continuation = field<std::vector<TokenId>>(s, "continuation");
    rec.forgotten = field<bool>(s, "forgotten");
    rec.forgotten_epoch = field<int>(s, "forgotten_epoch");
    r.samples.push_back(std::move(rec));
  }
  return r;
}

void write_epoch_lines(std::span<const EpochReport> reports, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& r : reports) out << to_json(r).dump() << '\n';
  if (!out) throw FormatError("write failed for " + path.string());
}

std::vector<EpochReport> read_epoch_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<EpochReport> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(epoch_report_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

TableRow table_row(std::string label, const EpochReport& r) {
  return {std::move(label), 100.0 * r.el, 100.0 * r.ma, r.embed_f1, r.entropy, r.ppl, r.epoch};
}

std::string comparison_csv(std::span<const TableRow> rows) {
  std::ostringstream os;
  os << "model,el10_pct,ma_pct,embed_f1,entropy,ppl,epoch\n";
  for (const auto& r : rows) {
    os << csv_escape(r.label) << ',' << fixed(r.el10_pct, 2) << ',' << fixed(r.ma_pct, 2) << ','
       << fixed(r.embed_f1, 4) << ',' << fixed(r.entropy, 4) << ',' << fixed(r.ppl, 4) << ',' << r.epoch << '\n';
  }
  return os.str();
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::ostringstream os;
  os << "alpha,beta,lr,el10_pct,ma_pct,embed_f1,entropy,ppl,epoch,termination,error\n";
  for (const auto& r : rows) {
    os << r.alpha << ',' << r.beta << ',' << r.lr << ',';
    if (r.ok) {
      const auto& m = r.metrics;
      os << fixed(m.el10_pct, 2) << ',' << fixed(m.ma_pct, 2) << ',' << fixed(m.embed_f1, 4) << ','
         << fixed(m.entropy, 4) << ',' << fixed(m.ppl, 4) << ',' << m.epoch << ',' << r.termination << ",\n";
    } else {
      os << ",,,,,,," << csv_escape(r.error) << '\n';
    }
  }
  return os.str();
}

std::vector<GenerationExample> generation_examples(const Vocabulary& vocab, std::span<const TokenSequence> forget,
                                                   const EpochReport& before, const EpochReport& after,
                                                   std::size_t limit) {
  if (before.samples.size() != forget.size() || after.samples.size() != forget.size()) {
    throw ParameterError("reports do not cover the forget set");
  }
  std::vector<GenerationExample> out;
  for (std::size_t i = 0; i < forget.size() && out.size() < limit; ++i) {
    out.push_back({forget[i].id, vocab.render(forget[i].prefix), vocab.render(forget[i].suffix),
                   vocab.render(before.samples[i].metrics.continuation),
                   vocab.render(after.samples[i].metrics.continuation)});
  }
  return out;
}

std::string examples_text(std::span<const GenerationExample> examples) {
  std::ostringstream os;
  for (const auto& e : examples) {
    os << "[" << e.id << "]\n"
       << "  prefix:    " << e.prefix << "\n"
       << "  reference: " << e.reference << "\n"
       << "  before:    " << e.before << "\n"
       << "  after:     " << e.after << "\n\n";
  }
  return os.str();
}

nlohmann::json examples_json(std::span<const GenerationExample> examples) {
  json arr = json::array();
  for (const auto& e : examples) {
    arr.push_back({{"id", e.id}, {"prefix", e.prefix}, {"reference", e.reference}, {"before", e.before}, {"after", e.after}});
  }
  return {{"format_version", kReportFormatVersion}, {"examples", arr}};
}

std::string run_summary(const std::string& label, const EpochReport& baseline, const EpochReport& final_report,
                        const std::string& termination) {
  std::ostringstream os;
  auto line = [&](const char* name, const EpochReport& r) {
    os << "  " << std::left << std::setw(9) << name << " EL10 " << fixed(100.0 * r.el, 2) << "%  MA "
       << fixed(100.0 * r.ma, 2) << "%  BLEU " << fixed(r.bleu, 4) << "  embed-F1 " << fixed(r.embed_f1, 4)
       << "  entropy " << fixed(r.entropy, 3) << "  PPL " << fixed(r.ppl, 3) << "\n";
  };
  os << label << "\n";
  line("before", baseline);
  line("after", final_report);
  os << "  epochs " << final_report.epoch << ", forgotten " << final_report.n_forgotten << "/"
     << final_report.samples.size() << ", termination " << termination << ", PPL ratio "
     << fixed(final_report.ppl / baseline.ppl, 4) << "\n";
  return os.str();
}

}  // namespace unlearn
