#include "taxogloss/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "taxogloss/error.hpp"
#include "taxogloss/hash.hpp"
#include "taxogloss/rng.hpp"

namespace taxogloss {

std::size_t IgtSentence::morpheme_count() const noexcept {
  std::size_t n = 0;
  for (const auto& w : words) n += w.size();
  return n;
}

std::vector<std::string> IgtSentence::flat_morphemes() const {
  std::vector<std::string> out;
  for (const auto& w : words) out.insert(out.end(), w.begin(), w.end());
  return out;
}

std::vector<std::string> IgtSentence::flat_glosses() const {
  std::vector<std::string> out;
  for (const auto& w : gloss_words) out.insert(out.end(), w.begin(), w.end());
  return out;
}

namespace {

std::string_view trim(std::string_view s) {
  auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return {};
  auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_words(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<std::string> split_parts(std::string_view word, const std::string& id, std::size_t word_index,
                                     const char* what) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = word.find('-', start);
    auto part = word.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    if (part.empty())
      throw ParseError("corpus: sentence '" + id + "' word " + std::to_string(word_index) + ": empty " + what);
    out.emplace_back(part);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

struct Block {
  std::size_t first_line = 0;
  std::vector<std::string_view> lines;
};

}  // namespace

std::vector<IgtSentence> parse_corpus(std::string_view text, const CorpusParseOptions& options) {
  std::vector<Block> blocks;
  {
    Block current;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      auto end = text.find('\n', pos);
      if (end == std::string_view::npos) end = text.size();
      auto line = trim(text.substr(pos, end - pos));
      ++line_no;
      if (line.empty()) {
        if (!current.lines.empty()) blocks.push_back(std::move(current));
        current = Block{};
      } else {
        if (current.lines.empty()) current.first_line = line_no;
        current.lines.push_back(line);
      }
      if (end == text.size()) break;
      pos = end + 1;
    }
    if (!current.lines.empty()) blocks.push_back(std::move(current));
  }

  std::vector<IgtSentence> sentences;
  sentences.reserve(blocks.size());
  for (const auto& block : blocks) {
    IgtSentence s;
    std::vector<std::string_view> content;
    for (auto line : block.lines) {
      if (line.front() == '#') {
        auto body = trim(line.substr(1));
        if (body.substr(0, 2) == "id") {
          auto eq = body.find('=');
          if (eq != std::string_view::npos) s.id = std::string(trim(body.substr(eq + 1)));
        }
        continue;
      }
      content.push_back(line);
    }
    if (s.id.empty()) s.id = "s" + std::to_string(sentences.size() + 1);
    const std::string where = "corpus: sentence '" + s.id + "' (line " + std::to_string(block.first_line) + ")";
    if (content.empty()) throw ParseError(where + ": block has no text lines");
    if (content.size() == 1 && !options.allow_unglossed)
      throw ParseError(where + ": morpheme line has no gloss line");
    if (content.size() > 2) throw ParseError(where + ": block has more than two text lines");

    auto words = split_words(content[0]);
    for (std::size_t w = 0; w < words.size(); ++w) s.words.push_back(split_parts(words[w], s.id, w, "morpheme"));
    if (content.size() == 2) {
      std::string gloss_line(content[1]);
      std::replace(gloss_line.begin(), gloss_line.end(), '.', '-');
      auto gwords = split_words(gloss_line);
      if (gwords.size() != words.size())
        throw ParseError(where + ": " + std::to_string(words.size()) + " words but " +
                         std::to_string(gwords.size()) + " gloss words");
      for (std::size_t w = 0; w < gwords.size(); ++w) {
        auto tags = split_parts(gwords[w], s.id, w, "gloss");
        if (tags.size() != s.words[w].size())
          throw ParseError(where + ": word " + std::to_string(w) + " has " + std::to_string(s.words[w].size()) +
                           " morphemes but " + std::to_string(tags.size()) + " glosses");
        s.gloss_words.push_back(std::move(tags));
      }
    }
    sentences.push_back(std::move(s));
  }
  return sentences;
}

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void join_line(std::ostringstream& out, const std::vector<std::vector<std::string>>& words) {
  for (std::size_t w = 0; w < words.size(); ++w) {
    if (w) out << ' ';
    for (std::size_t m = 0; m < words[w].size(); ++m) {
      if (m) out << '-';
      out << words[w][m];
    }
  }
  out << '\n';
}

}  // namespace

std::vector<IgtSentence> load_corpus(const std::string& path, const CorpusParseOptions& options) {
  return parse_corpus(read_file(path), options);
}

std::string serialize_corpus(std::span<const IgtSentence> sentences) {
  std::ostringstream out;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (i) out << '\n';
    out << "# id = " << sentences[i].id << '\n';
    join_line(out, sentences[i].words);
    if (sentences[i].glossed()) join_line(out, sentences[i].gloss_words);
  }
  return out.str();
}

void save_corpus(const std::string& path, std::span<const IgtSentence> sentences) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << serialize_corpus(sentences);
  if (!out) throw Error("write failed for " + path);
}

StemMap parse_stem_map(std::string_view text) {
  StemMap map;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto tab = t.find('\t');
    if (tab == std::string_view::npos)
      throw ParseError("stem map: line " + std::to_string(line_no) + " has no tab separator");
    auto key = trim(t.substr(0, tab));
    auto value = trim(t.substr(tab + 1));
    if (key.empty() || value.empty())
      throw ParseError("stem map: line " + std::to_string(line_no) + " has an empty field");
    map[normalize_tag(key)] = std::string(value);
  }
  return map;
}

void apply_stem_map(std::vector<IgtSentence>& sentences, const StemMap& stems, const Taxonomy& taxonomy) {
  for (auto& s : sentences) {
    for (auto& word : s.gloss_words) {
      for (auto& tag : word) {
        if (taxonomy.find(tag)) continue;
        auto it = stems.find(normalize_tag(tag));
        if (it == stems.end())
          throw ValidationError("sentence '" + s.id + "': stem gloss '" + tag + "' has no part-of-speech mapping");
        tag = it->second;
      }
    }
  }
}

GlossInventory build_inventory(std::span<const IgtSentence> sentences) {
  GlossInventory inventory;
  for (const auto& s : sentences)
    for (const auto& word : s.gloss_words)
      for (const auto& tag : word) inventory.insert(normalize_tag(tag));
  return inventory;
}

Vocabulary Vocabulary::build(std::span<const IgtSentence> sentences) {
  std::vector<std::string> morphemes;
  std::unordered_map<std::string, int> seen;
  for (const auto& s : sentences)
    for (const auto& word : s.words)
      for (const auto& m : word)
        if (seen.emplace(m, 0).second) morphemes.push_back(m);
  return from_morphemes(std::move(morphemes));
}

Vocabulary Vocabulary::from_morphemes(std::vector<std::string> morphemes) {
  Vocabulary v;
  v.morphemes_ = std::move(morphemes);
  for (std::size_t i = 0; i < v.morphemes_.size(); ++i) {
    if (!v.ids_.emplace(v.morphemes_[i], static_cast<int>(i) + kSpecialCount).second)
      throw ValidationError("vocabulary: duplicate morpheme '" + v.morphemes_[i] + "'");
  }
  return v;
}

int Vocabulary::id(std::string_view morpheme) const {
  auto it = ids_.find(std::string(morpheme));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view morpheme) const { return ids_.count(std::string(morpheme)) > 0; }

const std::string& Vocabulary::token(int id) const {
  static const std::string kNames[kSpecialCount] = {"<pad>", "<unk>", "<mask>", "<sep>", "<s>", "</s>"};
  if (id < 0 || static_cast<std::size_t>(id) >= size()) throw LookupError("vocabulary: id out of range");
  if (id < kSpecialCount) return kNames[id];
  return morphemes_[static_cast<std::size_t>(id - kSpecialCount)];
}

std::string Vocabulary::hash() const {
  std::string buf;
  for (const auto& m : morphemes_) {
    buf += m;
    buf.push_back('\n');
  }
  return sha256_hex(buf);
}

namespace {

EncodedSequence encode_impl(const IgtSentence& sentence, const Vocabulary& vocabulary, const Taxonomy* taxonomy,
                            std::size_t max_len, std::size_t pad_to) {
  if (max_len < 2) throw ValidationError("encode: max_len must be at least 2");
  if (taxonomy && !sentence.glossed()) throw ValidationError("encode: sentence '" + sentence.id + "' has no glosses");
  std::optional<int> sep_label;
  if (taxonomy && sentence.words.size() > 1) {
    auto sep = taxonomy->separator_index();
    if (!sep) throw LookupError("encode: taxonomy has no " + std::string(kSeparatorGloss) + " leaf");
    sep_label = static_cast<int>(*sep);
  }

  EncodedSequence e;
  auto push = [&](int token, int label, bool eval, int morpheme) {
    e.token_ids.push_back(token);
    e.label_ids.push_back(label);
    e.eval_mask.push_back(eval);
    e.morpheme_index.push_back(morpheme);
  };
  push(Vocabulary::kBos, kIgnoreLabel, false, -1);
  int ordinal = 0;
  for (std::size_t w = 0; w < sentence.words.size(); ++w) {
    if (w > 0) push(Vocabulary::kSep, taxonomy ? *sep_label : kIgnoreLabel, false, -1);
    for (std::size_t m = 0; m < sentence.words[w].size(); ++m) {
      int label = kIgnoreLabel;
      if (taxonomy) label = static_cast<int>(taxonomy->index_of(sentence.gloss_words[w][m]));
      push(vocabulary.id(sentence.words[w][m]), label, true, ordinal++);
    }
  }
  if (e.size() + 1 > max_len) {
    e.truncated = true;
    auto keep = max_len - 1;
    if (e.token_ids[keep - 1] == Vocabulary::kSep) --keep;
    e.token_ids.resize(keep);
    e.label_ids.resize(keep);
    e.eval_mask.resize(keep);
    e.morpheme_index.resize(keep);
  }
  push(Vocabulary::kEos, kIgnoreLabel, false, -1);
  while (e.size() < pad_to) push(Vocabulary::kPad, kIgnoreLabel, false, -1);
  return e;
}

}  // namespace

EncodedSequence encode(const IgtSentence& sentence, const Vocabulary& vocabulary, const Taxonomy& taxonomy,
                       std::size_t max_len, std::size_t pad_to) {
  return encode_impl(sentence, vocabulary, &taxonomy, max_len, pad_to);
}

EncodedSequence encode_tokens(const IgtSentence& sentence, const Vocabulary& vocabulary, std::size_t max_len) {
  return encode_impl(sentence, vocabulary, nullptr, max_len, 0);
}

std::vector<std::size_t> sample_indices(std::size_t population, std::size_t size, std::uint64_t seed) {
  if (size > population)
    throw ValidationError("sample_subset: requested " + std::to_string(size) + " of " +
                          std::to_string(population) + " sentences");
  std::vector<std::size_t> idx(population);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  CounterRng rng(derive_seed(seed, Stream::Subset));
  // Partial Fisher-Yates: the first `size` slots are the sample.
  for (std::size_t i = 0; i < size; ++i) {
    std::size_t j = i + uniform_index(rng, population - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(size);
  return idx;
}

std::vector<IgtSentence> sample_subset(std::span<const IgtSentence> sentences, std::size_t size,
                                       std::uint64_t seed) {
  std::vector<IgtSentence> out;
  out.reserve(size);
  for (auto i : sample_indices(sentences.size(), size, seed)) out.push_back(sentences[i]);
  return out;
}

}  // namespace taxogloss
