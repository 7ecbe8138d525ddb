// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "unlearn/corpus.hpp"
#include "unlearn/model.hpp"

namespace unlearn {

struct SentenceEmbedding {
  std::string id;
  std::vector<double> vector;  // unit L2 norm
};

enum class PairStatus { kActive, kForgotten };

struct PairedSample {
  TokenSequence forget;
  TokenSequence learn;
  PairStatus status = PairStatus::kActive;
  int forgotten_epoch = -1;
  double similarity = 0.0;

  bool active() const { return status == PairStatus::kActive; }
  // One-way transition; throws ParameterError when already forgotten.
  void mark_forgotten(int epoch);
};

// Sentence embedder f_s. The built-in one mean-pools the frozen model's final
// hidden states over every token of prefix ++ suffix and L2-normalizes.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual SentenceEmbedding embed(const TokenSequence& x) const = 0;
};

class ModelEmbedder final : public Embedder {
 public:
  explicit ModelEmbedder(const ModelState& frozen) : frozen_(frozen) {}
  SentenceEmbedding embed(const TokenSequence& x) const override;

 private:
  const ModelState& frozen_;
};

// Precomputed vectors keyed by sample id (line-delimited {"id", "vector"}).
class FileEmbedder final : public Embedder {
 public:
  explicit FileEmbedder(const std::filesystem::path& path);
  SentenceEmbedding embed(const TokenSequence& x) const override;  // throws ConfigError on unknown id

 private:
  std::unordered_map<std::string, std::vector<double>> vectors_;
};

SentenceEmbedding embed(const ModelState& frozen, const TokenSequence& x);

// Row-major matrix of candidate embeddings with an exhaustive cosine scan.
class EmbeddingIndex {
 public:
  void add(std::string id, std::span<const double> unit_vector);
  std::size_t size() const { return ids_.size(); }

  struct Hit {
    std::size_t index;
    std::string id;
    double similarity;
  };
  // Maximum cosine similarity, ties toward the lexicographically lowest id.
  Hit nearest(std::span<const double> query) const;

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<double> data_;
};

// K = 1 nearest neighbour of x_fgt among D \ D_fgt by cosine similarity.
// Throws ConfigError when the candidate set is empty.
PairedSample knn_pair(const TokenSequence& x_fgt, const Corpus& corpus, std::span<const SentenceEmbedding> embeddings);

// One pair per forget sample, computed once.
std::vector<PairedSample> build_learn_set(const Corpus& corpus, const Embedder& embedder);

}  // namespace unlearn
