#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "taxogloss/checkpoint.hpp"
#include "taxogloss/corpus.hpp"
#include "taxogloss/taxonomy.hpp"

namespace taxogloss {

/// Token-level scores over morpheme positions only (separators, BOS/EOS and
/// padding are neither counted nor scored).
struct EvalReport {
  std::size_t token_count = 0;
  std::size_t correct = 0;
  std::size_t topk_correct = 0;
  int k = 5;
  double accuracy = 0.0;       // percent
  double topk_accuracy = 0.0;  // percent
  /// (gold, top-1 prediction) -> count.
  std::map<std::pair<std::string, std::string>, std::size_t> confusion;

  nlohmann::json to_json() const;
};

/// Indices of the k largest scores, best first; ties go to the lower index.
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k);

/// Classification logits (T x labels) per encoded sequence, dropout off.
std::vector<Eigen::MatrixXd> classify_logits(const Checkpoint& checkpoint, std::span<const EncodedSequence> sequences);

/// Throws ValidationError when no position is evaluable.
EvalReport score_predictions(std::span<const EncodedSequence> sequences, std::span<const Eigen::MatrixXd> logits,
                             const Taxonomy& taxonomy, int k);

EvalReport evaluate(const Checkpoint& checkpoint, std::span<const IgtSentence> sentences, const Taxonomy& taxonomy,
                    int k = 5);

struct TopkCandidate {
  std::string gloss;
  double probability = 0.0;
  int shared_depth = 0;  // with the gold gloss
};

struct TopkRow {
  std::string sentence_id;
  std::string morpheme;
  std::string gold;
  std::vector<TopkCandidate> candidates;
};

/// One row per morpheme position, in corpus order, at most `limit` rows.
std::vector<TopkRow> topk_rows(std::span<const IgtSentence> sentences, std::span<const EncodedSequence> sequences,
                               std::span<const Eigen::MatrixXd> logits, const Taxonomy& taxonomy, int k,
                               std::size_t limit);
std::string format_topk(std::span<const TopkRow> rows);

std::string topk_dump(const Checkpoint& checkpoint, std::span<const IgtSentence> sentences,
                      const Taxonomy& taxonomy, int k, std::size_t limit);

}  // namespace taxogloss
