#include "taxogloss/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "taxogloss/error.hpp"
#include "taxogloss/losses.hpp"

namespace taxogloss {

nlohmann::json EvalReport::to_json() const {
  nlohmann::json confusion_rows = nlohmann::json::array();
  for (const auto& [key, count] : confusion)
    confusion_rows.push_back({{"gold", key.first}, {"predicted", key.second}, {"count", count}});
  return {{"token_count", token_count}, {"correct", correct},
          {"accuracy", accuracy},       {"k", k},
          {"topk_correct", topk_correct}, {"topk_accuracy", topk_accuracy},
          {"confusion", std::move(confusion_rows)}};
}

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  idx.resize(k);
  return idx;
}

std::vector<Eigen::MatrixXd> classify_logits(const Checkpoint& checkpoint, std::span<const EncodedSequence> sequences) {
  constexpr std::size_t kChunk = 64;
  std::vector<Eigen::MatrixXd> out;
  out.reserve(sequences.size());
  for (std::size_t start = 0; start < sequences.size(); start += kChunk) {
    std::vector<std::vector<int>> batch;
    for (std::size_t i = start; i < std::min(sequences.size(), start + kChunk); ++i)
      batch.push_back(sequences[i].token_ids);
    auto result = forward(checkpoint.params, checkpoint.config, batch, Head::Classify, false, {});
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto off = static_cast<Eigen::Index>(result.offsets[i]);
      auto len = static_cast<Eigen::Index>(batch[i].size());
      out.emplace_back(result.logits.middleRows(off, len));
    }
  }
  return out;
}

EvalReport score_predictions(std::span<const EncodedSequence> sequences, std::span<const Eigen::MatrixXd> logits,
                             const Taxonomy& taxonomy, int k) {
  if (k < 1) throw ValidationError("evaluate: k must be at least 1");
  if (logits.size() != sequences.size()) throw ValidationError("evaluate: one logits matrix per sequence required");
  EvalReport report;
  report.k = k;
  std::vector<double> row;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const auto& seq = sequences[s];
    const auto& m = logits[s];
    if (static_cast<std::size_t>(m.rows()) != seq.size())
      throw ValidationError("evaluate: logits rows do not match sequence length");
    for (std::size_t t = 0; t < seq.size(); ++t) {
      if (!seq.eval_mask[t]) continue;
      row.resize(static_cast<std::size_t>(m.cols()));
      for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(static_cast<Eigen::Index>(t), c);
      auto best = top_k(row, static_cast<std::size_t>(k));
      const auto gold = static_cast<std::size_t>(seq.label_ids[t]);
      ++report.token_count;
      if (best.front() == gold) ++report.correct;
      if (std::find(best.begin(), best.end(), gold) != best.end()) ++report.topk_correct;
      ++report.confusion[{taxonomy.leaf_name(gold), taxonomy.leaf_name(best.front())}];
    }
  }
  if (report.token_count == 0) throw ValidationError("evaluate: zero evaluable tokens");
  report.accuracy = 100.0 * static_cast<double>(report.correct) / static_cast<double>(report.token_count);
  report.topk_accuracy = 100.0 * static_cast<double>(report.topk_correct) / static_cast<double>(report.token_count);
  return report;
}

namespace {

std::vector<EncodedSequence> encode_all(const Checkpoint& checkpoint, std::span<const IgtSentence> sentences,
                                        const Taxonomy& taxonomy) {
  std::vector<EncodedSequence> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences)
    out.push_back(encode(s, checkpoint.vocabulary, taxonomy, static_cast<std::size_t>(checkpoint.config.max_len)));
  return out;
}

}  // namespace

EvalReport evaluate(const Checkpoint& checkpoint, std::span<const IgtSentence> sentences, const Taxonomy& taxonomy,
                    int k) {
  require_taxonomy(checkpoint, taxonomy);
  auto encoded = encode_all(checkpoint, sentences, taxonomy);
  auto logits = classify_logits(checkpoint, encoded);
  return score_predictions(encoded, logits, taxonomy, k);
}

std::vector<TopkRow> topk_rows(std::span<const IgtSentence> sentences, std::span<const EncodedSequence> sequences,
                               std::span<const Eigen::MatrixXd> logits, const Taxonomy& taxonomy, int k,
                               std::size_t limit) {
  if (k < 1) throw ValidationError("dump-topk: k must be at least 1");
  std::vector<TopkRow> rows;
  for (std::size_t s = 0; s < sequences.size() && rows.size() < limit; ++s) {
    const auto morphemes = sentences[s].flat_morphemes();
    const auto& seq = sequences[s];
    for (std::size_t t = 0; t < seq.size() && rows.size() < limit; ++t) {
      if (!seq.eval_mask[t]) continue;
      std::vector<double> row(static_cast<std::size_t>(logits[s].cols()));
      for (std::size_t c = 0; c < row.size(); ++c) row[c] = logits[s](static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c));
      auto probs = softmax(row);
      const auto gold = static_cast<std::size_t>(seq.label_ids[t]);
      TopkRow out{sentences[s].id, morphemes[static_cast<std::size_t>(seq.morpheme_index[t])], taxonomy.leaf_name(gold), {}};
      for (auto idx : top_k(probs, static_cast<std::size_t>(k)))
        out.candidates.push_back({taxonomy.leaf_name(idx), probs[idx], taxonomy.shared_depth(idx, gold)});
      rows.push_back(std::move(out));
    }
  }
  return rows;
}

std::string format_topk(std::span<const TopkRow> rows) {
  std::ostringstream out;
  char prob[32];
  for (const auto& row : rows) {
    out << row.sentence_id << '\t' << row.morpheme << "\tgold=" << row.gold << '\t';
    for (std::size_t i = 0; i < row.candidates.size(); ++i) {
      const auto& c = row.candidates[i];
      std::snprintf(prob, sizeof prob, "%.4f", c.probability);
      if (i) out << " | ";
      out << (i + 1) << ". " << c.gloss << ' ' << prob << " sd=" << c.shared_depth;
    }
    out << '\n';
  }
  return out.str();
}

std::string topk_dump(const Checkpoint& checkpoint, std::span<const IgtSentence> sentences,
                      const Taxonomy& taxonomy, int k, std::size_t limit) {
  require_taxonomy(checkpoint, taxonomy);
  auto encoded = encode_all(checkpoint, sentences, taxonomy);
  auto logits = classify_logits(checkpoint, encoded);
  auto rows = topk_rows(sentences, encoded, logits, taxonomy, k, limit);
  return format_topk(rows);
}

}  // namespace taxogloss
