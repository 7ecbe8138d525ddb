// SPDX-License-Identifier: Apache-2.0
#include "unlearn/pairing.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "unlearn/error.hpp"

namespace unlearn {
namespace {

std::vector<double> normalized(std::span<const double> v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  std::vector<double> out(v.begin(), v.end());
  if (norm > 0.0) {
    for (double& x : out) x /= norm;
  }
  return out;
}

}  // namespace

void PairedSample::mark_forgotten(int epoch) {
  if (status == PairStatus::kForgotten) throw ParameterError("pair " + forget.id + " is already forgotten");
  status = PairStatus::kForgotten;
  forgotten_epoch = epoch;
}

SentenceEmbedding embed(const ModelState& frozen, const TokenSequence& x) {
  const auto tokens = full_sequence(x);
  const auto hidden = hidden_states(frozen, std::span<const TokenId>(tokens));
  const auto d = static_cast<std::size_t>(frozen.config.d_model);
  std::vector<double> mean(d, 0.0);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    for (std::size_t i = 0; i < d; ++i) mean[i] += hidden[t * d + i];
  }
  for (double& v : mean) v /= static_cast<double>(tokens.size());
  return {x.id, normalized(mean)};
}

SentenceEmbedding ModelEmbedder::embed(const TokenSequence& x) const { return unlearn::embed(frozen_, x); }

FileEmbedder::FileEmbedder(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open embedding file " + path.string());
  std::string line;
  int line_no = 0;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      auto id = j.at("id").get<std::string>();
      const auto v = j.at("vector").get<std::vector<double>>();
      if (v.empty() || (dim != 0 && v.size() != dim)) throw FormatError("inconsistent vector dimension");
      dim = v.size();
      vectors_[std::move(id)] = normalized(v);
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (vectors_.empty()) throw FormatError(path.string() + ": no embeddings");
}

SentenceEmbedding FileEmbedder::embed(const TokenSequence& x) const {
  auto it = vectors_.find(x.id);
  if (it == vectors_.end()) throw ConfigError("embedding file has no vector for sample " + x.id);
  return {x.id, it->second};
}

void EmbeddingIndex::add(std::string id, std::span<const double> unit_vector) {
  if (ids_.empty()) dim_ = unit_vector.size();
  if (unit_vector.size() != dim_) throw ParameterError("embedding dimension mismatch");
  ids_.push_back(std::move(id));
  data_.insert(data_.end(), unit_vector.begin(), unit_vector.end());
}

EmbeddingIndex::Hit EmbeddingIndex::nearest(std::span<const double> query) const {
  if (ids_.empty()) throw ConfigError("nearest-neighbour search over an empty candidate set");
  if (query.size() != dim_) throw ParameterError("query dimension mismatch");
  Hit best{0, ids_[0], -INFINITY};
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    const double* row = data_.data() + i * dim_;
    double sim = 0.0;
    for (std::size_t k = 0; k < dim_; ++k) sim += row[k] * query[k];
    if (sim > best.similarity || (sim == best.similarity && ids_[i] < best.id)) best = {i, ids_[i], sim};
  }
  return best;
}

PairedSample knn_pair(const TokenSequence& x_fgt, const Corpus& corpus, std::span<const SentenceEmbedding> embeddings) {
  std::unordered_map<std::string, const SentenceEmbedding*> by_id;
  for (const auto& e : embeddings) by_id[e.id] = &e;
  auto lookup = [&](const std::string& id) -> const SentenceEmbedding& {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ConfigError("no embedding for sample " + id);
    return *it->second;
  };
  EmbeddingIndex index;
  std::vector<const TokenSequence*> candidates;
  for (const auto& s : corpus.samples) {
    if (corpus.is_forget(s.id) || s.id == x_fgt.id) continue;
    index.add(s.id, lookup(s.id).vector);
    candidates.push_back(&s);
  }
  if (candidates.empty()) throw ConfigError("no retain samples to pair with " + x_fgt.id);
  const auto hit = index.nearest(lookup(x_fgt.id).vector);
  PairedSample pair;
  pair.forget = x_fgt;
  pair.learn = *candidates[hit.index];
  pair.similarity = hit.similarity;
  return pair;
}

std::vector<PairedSample> build_learn_set(const Corpus& corpus, const Embedder& embedder) {
  std::vector<SentenceEmbedding> embeddings;
  embeddings.reserve(corpus.samples.size());
  for (const auto& s : corpus.samples) embeddings.push_back(embedder.embed(s));
  std::vector<PairedSample> pairs;
  for (const auto& x : corpus.forget_samples()) pairs.push_back(knn_pair(x, corpus, embeddings));
  return pairs;
}

}  // namespace unlearn
