// SPDX-License-Identifier: Apache-2.0
#include "unlearn/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "unlearn/error.hpp"

namespace unlearn {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class N>
N parse_number(const std::string& text) {
  N value{};
  const char* first = text.data();
  const char* last = first + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) throw ConfigError("'" + text + "' is not a valid number");
  return value;
}

template <class N>
std::string format_number(N v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw ConfigError("cannot format number");
  return {buf, ptr};
}

template <class N>
std::vector<N> parse_list(const std::string& text) {
  std::vector<N> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<N>(trim(item)));
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

template <class N>
std::string format_list(const std::vector<N>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += format_number(v[i]);
  }
  return out;
}

struct Key {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class N>
Key number(N ExperimentConfig::*outer) {
  return {[outer](ExperimentConfig& c, const std::string& v) { c.*outer = parse_number<N>(v); },
          [outer](const ExperimentConfig& c) { return format_number(c.*outer); }};
}

template <class N, class Inner>
Key number(Inner ExperimentConfig::*outer, N Inner::*inner) {
  return {[outer, inner](ExperimentConfig& c, const std::string& v) { (c.*outer).*inner = parse_number<N>(v); },
          [outer, inner](const ExperimentConfig& c) { return format_number((c.*outer).*inner); }};
}

template <class N, class Mid, class Inner>
Key number(Mid ExperimentConfig::*outer, Inner Mid::*mid, N Inner::*inner) {
  return {[=](ExperimentConfig& c, const std::string& v) { ((c.*outer).*mid).*inner = parse_number<N>(v); },
          [=](const ExperimentConfig& c) { return format_number(((c.*outer).*mid).*inner); }};
}

template <class N>
Key list(std::vector<N> ExperimentConfig::*field, bool allow_empty = false) {
  return {[=](ExperimentConfig& c, const std::string& v) {
            if (allow_empty && v.empty()) {
              (c.*field).clear();
            } else {
              c.*field = parse_list<N>(v);
            }
          },
          [=](const ExperimentConfig& c) { return format_list(c.*field); }};
}

Key path(std::filesystem::path ExperimentConfig::*field) {
  return {[=](ExperimentConfig& c, const std::string& v) {
            if (v.empty()) throw ConfigError("path must not be empty");
            c.*field = v;
          },
          [=](const ExperimentConfig& c) { return (c.*field).string(); }};
}

const std::map<std::string, Key>& keys() {
  static const std::map<std::string, Key> table = [] {
    using C = ExperimentConfig;
    std::map<std::string, Key> k;
    k["corpus.seed"] = number(&C::corpus, &CorpusParams::seed);
    k["corpus.n_samples"] = number(&C::corpus, &CorpusParams::n_samples);
    k["corpus.n_secrets"] = number(&C::corpus, &CorpusParams::n_secrets);
    k["corpus.vocab_size"] = number(&C::corpus, &CorpusParams::vocab_size);
    k["corpus.prefix_len"] = number(&C::corpus, &CorpusParams::prefix_len);
    k["corpus.suffix_len"] = number(&C::corpus, &CorpusParams::suffix_len);
    k["corpus.heldout_samples"] = number(&C::heldout_samples);
    k["model.n_layers"] = number(&C::pretrain, &PretrainConfig::model, &ModelConfig::n_layers);
    k["model.n_heads"] = number(&C::pretrain, &PretrainConfig::model, &ModelConfig::n_heads);
    k["model.d_model"] = number(&C::pretrain, &PretrainConfig::model, &ModelConfig::d_model);
    k["model.d_ff"] = number(&C::pretrain, &PretrainConfig::model, &ModelConfig::d_ff);
    k["model.context_len"] = number(&C::pretrain, &PretrainConfig::model, &ModelConfig::context_len);
    k["model.seed"] = number(&C::pretrain, &PretrainConfig::model, &ModelConfig::seed);
    k["pretrain.lr"] = number(&C::pretrain, &PretrainConfig::lr);
    k["pretrain.batch_size"] = number(&C::pretrain, &PretrainConfig::batch_size);
    k["pretrain.max_epochs"] = number(&C::pretrain, &PretrainConfig::max_epochs);
    k["pretrain.target_ma"] = number(&C::pretrain, &PretrainConfig::target_ma);
    k["pretrain.target_el"] = number(&C::pretrain, &PretrainConfig::target_el);
    k["pretrain.eval_every"] = number(&C::pretrain, &PretrainConfig::eval_every);
    k["pretrain.seed"] = number(&C::pretrain, &PretrainConfig::seed);
    k["unlearn.mode"] = {[](C& c, const std::string& v) { c.run.mode = parse_mode(v); },
                         [](const C& c) { return to_string(c.run.mode); }};
    k["unlearn.alpha"] = number(&C::run, &RunConfig::weights, &LossWeights::alpha);
    k["unlearn.beta"] = number(&C::run, &RunConfig::weights, &LossWeights::beta);
    k["unlearn.lr"] = number(&C::run, &RunConfig::lr);
    k["unlearn.batch_size"] = number(&C::run, &RunConfig::batch_size);
    k["unlearn.max_epochs"] = number(&C::run, &RunConfig::max_epochs);
    k["unlearn.seed"] = number(&C::run, &RunConfig::seed);
    k["unlearn.knn_k"] = {[](C&, const std::string& v) {
                            if (parse_number<int>(v) != 1) throw ConfigError("only knn_k = 1 is supported");
                          },
                          [](const C&) { return std::string("1"); }};
    k["thresholds.embed_a"] = number(&C::run, &RunConfig::thresholds, &Thresholds::embed_a);
    k["thresholds.bleu_b"] = number(&C::run, &RunConfig::thresholds, &Thresholds::bleu_b);
    k["thresholds.el_stop"] = number(&C::run, &RunConfig::thresholds, &Thresholds::el_stop);
    k["thresholds.ma_stop"] = number(&C::run, &RunConfig::thresholds, &Thresholds::ma_stop);
    k["metrics.el_order"] = {[](C& c, const std::string& v) {
                               c.run.el_order = parse_number<int>(v);
                               c.pretrain.el_order = c.run.el_order;
                             },
                             [](const C& c) { return format_number(c.run.el_order); }};
    k["seeds"] = list(&C::seeds);
    k["sweep.alpha"] = list(&C::sweep_alpha);
    k["sweep.beta"] = list(&C::sweep_beta);
    k["sweep.lr"] = list(&C::sweep_lr, true);
    k["paths.data"] = path(&C::data_dir);
    k["paths.out"] = path(&C::out_dir);
    return k;
  }();
  return table;
}

}  // namespace

void ExperimentConfig::validate() const {
  try {
    if (corpus.n_samples < 1 || corpus.n_secrets < 1 || corpus.n_secrets >= corpus.n_samples) {
      throw ConfigError("corpus needs 0 < n_secrets < n_samples");
    }
    if (corpus.vocab_size < Vocabulary::kMinSize) throw ConfigError("corpus.vocab_size below minimum");
    if (corpus.prefix_len < 1 || corpus.suffix_len < 1) throw ConfigError("prefix_len and suffix_len must be >= 1");
    if (heldout_samples < 1) throw ConfigError("corpus.heldout_samples must be >= 1");
    if (pretrain.model.vocab_size != corpus.vocab_size) throw ConfigError("model vocab_size must equal corpus.vocab_size");
    if (pretrain.model.context_len < corpus.prefix_len + corpus.suffix_len) {
      throw ConfigError("model.context_len must cover prefix_len + suffix_len");
    }
    if (run.el_order >= corpus.prefix_len + corpus.suffix_len) throw ConfigError("metrics.el_order must be below T");
    if (seeds.empty()) throw ConfigError("seeds must not be empty");
    if (sweep_alpha.empty() || sweep_beta.empty()) throw ConfigError("sweep grid must not be empty");
    for (double a : sweep_alpha) {
      if (!(a >= 0.0)) throw ConfigError("sweep.alpha entries must be >= 0");
    }
    for (double b : sweep_beta) {
      if (!(b >= 0.0)) throw ConfigError("sweep.beta entries must be >= 0");
    }
    for (double l : sweep_lr) {
      if (!(l > 0.0)) throw ConfigError("sweep.lr entries must be > 0");
    }
    pretrain.validate();
    run.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
}

std::vector<SweepCell> ExperimentConfig::sweep_grid() const {
  std::vector<SweepCell> grid;
  const std::vector<double> lrs = sweep_lr.empty() ? std::vector<double>{run.lr} : sweep_lr;
  for (double lr : lrs) {
    for (double b : sweep_beta) {
      for (double a : sweep_alpha) grid.push_back({a, b, lr});
    }
  }
  return grid;
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  cfg.pretrain.model.vocab_size = cfg.corpus.vocab_size;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  bool versioned = false;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(where + "repeated key '" + key + "'");
    if (key == "schema_version") {
      int v = 0;
      try {
        v = parse_number<int>(value);
      } catch (const ConfigError& e) {
        throw ConfigError(where + e.what());
      }
      if (v != kConfigSchemaVersion) throw ConfigError(where + "unsupported schema_version " + value);
      versioned = true;
      continue;
    }
    const auto it = keys().find(key);
    if (it == keys().end()) throw ConfigError(where + "unknown key '" + key + "'");
    try {
      it->second.set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  if (!versioned) throw ConfigError("config is missing schema_version");
  cfg.pretrain.model.vocab_size = cfg.corpus.vocab_size;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string render_config(const ExperimentConfig& config) {
  std::string out = "schema_version = " + std::to_string(kConfigSchemaVersion) + "\n";
  std::string section;
  for (const auto& [key, k] : keys()) {
    const auto dot = key.find('.');
    const std::string head = dot == std::string::npos ? "" : key.substr(0, dot);
    if (head != section) {
      out += "\n";
      section = head;
    }
    out += key + " = " + k.get(config) + "\n";
  }
  return out;
}

}  // namespace unlearn
