#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "taxogloss/taxonomy.hpp"

namespace taxogloss {

/// One interlinear-glossed sentence: words of morphemes aligned one-to-one
/// with words of gloss tags. gloss_words is empty for unglossed text.
struct IgtSentence {
  std::string id;
  std::vector<std::vector<std::string>> words;
  std::vector<std::vector<std::string>> gloss_words;

  std::size_t morpheme_count() const noexcept;
  bool glossed() const noexcept { return !gloss_words.empty(); }
  std::vector<std::string> flat_morphemes() const;
  std::vector<std::string> flat_glosses() const;

  bool operator==(const IgtSentence&) const = default;
};

struct CorpusParseOptions {
  /// Accept blocks holding only a morpheme line (text awaiting annotation).
  bool allow_unglossed = false;
};

/// Blocks separated by blank lines. Each block holds an optional
/// "# id = ..." line, a morpheme line and a gloss line. Words are separated by
/// spaces, morphemes and glosses by '-'; '.' in gloss lines is read as '-'.
/// Throws ParseError on misalignment or dangling lines.
std::vector<IgtSentence> parse_corpus(std::string_view text, const CorpusParseOptions& options = {});
std::vector<IgtSentence> load_corpus(const std::string& path, const CorpusParseOptions& options = {});
std::string serialize_corpus(std::span<const IgtSentence> sentences);
void save_corpus(const std::string& path, std::span<const IgtSentence> sentences);

/// Lexical stem translation -> part-of-speech tag, read from "translation<TAB>POS" lines.
using StemMap = std::map<std::string, std::string>;
StemMap parse_stem_map(std::string_view text);

/// Replace every gloss that is not a taxonomy leaf through the stem map.
/// Throws ValidationError naming the first unmapped stem.
void apply_stem_map(std::vector<IgtSentence>& sentences, const StemMap& stems, const Taxonomy& taxonomy);

/// Normalized gloss tags observed in a corpus.
using GlossInventory = std::set<std::string>;
GlossInventory build_inventory(std::span<const IgtSentence> sentences);

/// Dense morpheme ids with the special tokens first.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kMask = 2;
  static constexpr int kSep = 3;
  static constexpr int kBos = 4;
  static constexpr int kEos = 5;
  static constexpr int kSpecialCount = 6;

  Vocabulary() = default;
  /// Ids assigned in order of first occurrence.
  static Vocabulary build(std::span<const IgtSentence> sentences);
  static Vocabulary from_morphemes(std::vector<std::string> morphemes);

  int id(std::string_view morpheme) const;  // kUnk when absent
  bool contains(std::string_view morpheme) const;
  const std::string& token(int id) const;
  std::size_t size() const noexcept { return morphemes_.size() + kSpecialCount; }
  const std::vector<std::string>& morphemes() const noexcept { return morphemes_; }
  static bool is_special(int id) noexcept { return id < kSpecialCount; }
  std::string hash() const;

  bool operator==(const Vocabulary& other) const { return morphemes_ == other.morphemes_; }

 private:
  std::vector<std::string> morphemes_;
  std::unordered_map<std::string, int> ids_;
};

inline constexpr int kIgnoreLabel = -1;

struct EncodedSequence {
  std::vector<int> token_ids;
  /// Leaf index per position; the separator leaf at SEP, kIgnoreLabel at BOS/EOS/PAD.
  std::vector<int> label_ids;
  /// True only at morpheme positions.
  std::vector<bool> eval_mask;
  /// Morpheme ordinal (in flat_morphemes order) per position, -1 elsewhere.
  std::vector<int> morpheme_index;
  bool truncated = false;

  std::size_t size() const noexcept { return token_ids.size(); }
};

inline constexpr std::size_t kDefaultMaxLen = 512;

/// BOS m m SEP m m EOS, then PAD up to pad_to. Sequences longer than max_len
/// are cut (truncated = true) keeping the trailing EOS. Unknown morphemes map
/// to UNK. Throws LookupError for glosses outside the taxonomy.
EncodedSequence encode(const IgtSentence& sentence, const Vocabulary& vocabulary,
                       const Taxonomy& taxonomy, std::size_t max_len = kDefaultMaxLen,
                       std::size_t pad_to = 0);

/// Token layout only; every label is kIgnoreLabel. Works on unglossed sentences.
EncodedSequence encode_tokens(const IgtSentence& sentence, const Vocabulary& vocabulary,
                              std::size_t max_len = kDefaultMaxLen);

/// Uniform sample without replacement, determined by (sentences, size, seed).
/// Throws ValidationError when size exceeds the population.
std::vector<IgtSentence> sample_subset(std::span<const IgtSentence> sentences, std::size_t size,
                                       std::uint64_t seed);
std::vector<std::size_t> sample_indices(std::size_t population, std::size_t size, std::uint64_t seed);

}  // namespace taxogloss
