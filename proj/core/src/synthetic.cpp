#include "taxogloss/synthetic.hpp"

#include <array>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>

#include "taxogloss/rng.hpp"

namespace taxogloss {

namespace {

constexpr std::uint64_t kLexiconKey = 0x1e71c0de5eedULL;

/// Sentences keep to one topic: open-class stems come mostly from the
/// topic's share of each lexicon, so stems are predictable from each other.
constexpr std::size_t kTopics = 5;
constexpr double kOnTopic = 0.85;

std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = CounterRng::mix(h ^ c);
  return h;
}

std::string make_form(CounterRng& rng, int syllables) {
  static constexpr std::string_view kOnsets[] = {"b", "ch", "j", "k", "k'", "l", "m", "n", "p",
                                                 "q", "r", "s", "t", "t'", "tz", "w", "x", "y"};
  static constexpr std::string_view kVowels[] = {"a", "e", "i", "o", "u", "aa", "ii"};
  static constexpr std::string_view kCodas[] = {"", "", "", "j", "k", "l", "m", "n", "q", "r", "s", "x"};
  std::string out;
  for (int i = 0; i < syllables; ++i) {
    out += kOnsets[uniform_index(rng, std::size(kOnsets))];
    out += kVowels[uniform_index(rng, std::size(kVowels))];
  }
  out += kCodas[uniform_index(rng, std::size(kCodas))];
  return out;
}

struct Lexicon {
  // gloss -> surface forms
  std::map<std::string, std::vector<std::string>> forms;
  std::set<std::string> open_classes;

  const std::vector<std::string>& of(const std::string& gloss) const { return forms.at(gloss); }
};

Lexicon build_lexicon() {
  Lexicon lex;
  // Functional morphemes: one or two short allomorphs tied to a form key.
  auto functional = [&](const std::string& gloss, const std::string& key, int variants) {
    CounterRng rng(kLexiconKey ^ stable_hash(key));
    std::vector<std::string> forms;
    for (int v = 0; v < variants; ++v) forms.push_back(make_form(rng, 1));
    lex.forms[gloss] = std::move(forms);
  };
  for (const char* g : {"COM", "INC", "PRG", "COND", "IMP", "INT", "TAM"}) functional(g, g, 1);
  for (const char* pn : {"1S", "2S", "1P", "2P"}) functional(std::string("A") + pn, pn, 1);
  for (const char* pn : {"1S", "2S", "3S", "1P", "2P", "3P"}) functional(std::string("E") + pn, pn, 2);
  for (const char* pn : {"1", "2", "3"}) functional(std::string("E") + pn, std::string("E") + pn, 1);
  for (const char* g : {"AP", "APLI", "CAU", "MOV", "PAS", "REC", "RFX", "ITR", "TRN", "AFE"}) functional(g, g, 1);
  for (const char* g : {"CLAS", "DIM", "GNT", "NUM", "AGT", "INS", "Pl", "NEG", "AFI", "PART", "SREL", "ART",
                        "DEM", "ENF", "ITS", "MED"})
    functional(g, g, 1);

  // Open classes: lexical variation.
  auto open_class = [&](const std::string& gloss, int size) {
    CounterRng rng(kLexiconKey ^ stable_hash("stem:" + gloss));
    std::set<std::string> seen;
    std::vector<std::string> forms;
    while (static_cast<int>(forms.size()) < size) {
      auto f = make_form(rng, 1 + static_cast<int>(uniform_index(rng, 2)));
      if (seen.insert(f).second) forms.push_back(std::move(f));
    }
    lex.forms[gloss] = std::move(forms);
    lex.open_classes.insert(gloss);
  };
  open_class("VT", 40);
  open_class("VI", 30);
  open_class("POS", 8);
  open_class("EXS", 2);
  open_class("NOM", 50);
  open_class("S", 25);
  open_class("ADJ", 20);
  open_class("PRON", 6);
  open_class("SAB", 5);
  open_class("TOP", 8);
  open_class("VOC", 4);
  open_class("Adv", 10);
  open_class("Conj", 4);
  open_class("Prep", 4);
  return lex;
}

const Lexicon& lexicon() {
  static const Lexicon lex = build_lexicon();
  return lex;
}

template <std::size_t N>
const char* weighted(CounterRng& rng, const std::array<std::pair<const char*, double>, N>& table) {
  double total = 0.0;
  for (const auto& [_, w] : table) total += w;
  double u = uniform_real(rng) * total;
  for (const auto& [g, w] : table) {
    if (u < w) return g;
    u -= w;
  }
  return table.back().first;
}

template <std::size_t N>
const char* pick(CounterRng& rng, const std::array<const char*, N>& options) {
  return options[uniform_index(rng, N)];
}

bool chance(CounterRng& rng, double p) { return uniform_real(rng) < p; }

struct WordBuilder {
  const Lexicon& lex;
  CounterRng& rng;
  std::size_t topic;
  std::vector<std::string> morphemes;
  std::vector<std::string> glosses;

  void add(const std::string& gloss) {
    const auto& forms = lex.of(gloss);
    std::size_t index = uniform_index(rng, forms.size());
    if (forms.size() >= kTopics && lex.open_classes.contains(gloss) && chance(rng, kOnTopic)) {
      // Forms topic, topic + kTopics, topic + 2 kTopics, ...
      const std::size_t share = (forms.size() - topic + kTopics - 1) / kTopics;
      index = topic + kTopics * uniform_index(rng, share);
    }
    morphemes.push_back(forms[index]);
    glosses.push_back(gloss);
  }
};

void verbal_word(WordBuilder& b) {
  auto& rng = b.rng;
  static constexpr std::array<std::pair<const char*, double>, 7> kTam{
      {{"COM", 0.35}, {"INC", 0.35}, {"PRG", 0.08}, {"COND", 0.05}, {"IMP", 0.07}, {"INT", 0.05}, {"TAM", 0.05}}};
  static constexpr std::array<std::pair<const char*, double>, 4> kRoot{
      {{"VT", 0.45}, {"VI", 0.35}, {"POS", 0.12}, {"EXS", 0.08}}};
  static constexpr std::array<const char*, 4> kAbs{"A1S", "A2S", "A1P", "A2P"};
  static constexpr std::array<std::pair<const char*, double>, 9> kErg{
      {{"E3S", 0.3}, {"E1S", 0.15}, {"E2S", 0.1}, {"E3P", 0.1}, {"E1P", 0.08}, {"E2P", 0.05}, {"E1", 0.08},
       {"E2", 0.05}, {"E3", 0.09}}};
  static constexpr std::array<const char*, 7> kVoice{"AP", "APLI", "CAU", "MOV", "PAS", "REC", "RFX"};

  const std::string root = weighted(rng, kRoot);
  b.add(weighted(rng, kTam));
  if (chance(rng, 0.45)) b.add(pick(rng, kAbs));
  if (root == "VT" && chance(rng, 0.85)) b.add(weighted(rng, kErg));
  b.add(root);
  std::string voice;
  if ((root == "VT" || root == "VI") && chance(rng, 0.25)) {
    voice = pick(rng, kVoice);
    b.add(voice);
  }
  if (chance(rng, 0.6)) {
    bool detransitivized = voice == "AP" || voice == "PAS" || voice == "RFX" || voice == "REC";
    if (root == "VT" && !detransitivized) {
      b.add("TRN");
    } else if (root == "VT" || root == "VI") {
      b.add("ITR");
    } else {
      b.add("AFE");
    }
  }
}

void nominal_word(WordBuilder& b) {
  auto& rng = b.rng;
  static constexpr std::array<std::pair<const char*, double>, 7> kStem{
      {{"NOM", 0.4}, {"S", 0.2}, {"ADJ", 0.15}, {"PRON", 0.1}, {"SAB", 0.05}, {"TOP", 0.06}, {"VOC", 0.04}}};
  const std::string stem = weighted(rng, kStem);
  if (stem != "PRON" && chance(rng, 0.12)) b.add(chance(rng, 0.5) ? "NUM" : "CLAS");
  b.add(stem);
  if (stem == "NOM" || stem == "S") {
    if (chance(rng, 0.15)) b.add("DIM");
    if (chance(rng, 0.2)) b.add("Pl");
    if (chance(rng, 0.05)) b.add("GNT");
    if (chance(rng, 0.1)) b.add(chance(rng, 0.5) ? "AGT" : "INS");
  }
}

void particle_word(WordBuilder& b) {
  static constexpr std::array<std::pair<const char*, double>, 12> kParticle{
      {{"Adv", 0.2}, {"NEG", 0.08}, {"AFI", 0.05}, {"PART", 0.1}, {"SREL", 0.07}, {"ART", 0.12}, {"DEM", 0.08},
       {"Conj", 0.12}, {"Prep", 0.1}, {"ENF", 0.03}, {"ITS", 0.03}, {"MED", 0.02}}};
  b.add(weighted(b.rng, kParticle));
}

}  // namespace

std::vector<IgtSentence> generate_synthetic(std::uint64_t seed, std::size_t count) {
  const auto& lex = lexicon();
  std::vector<IgtSentence> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    CounterRng rng(derive_seed(seed, Stream::Synthetic, i));
    IgtSentence s;
    s.id = "syn" + std::to_string(i + 1);
    const std::size_t topic = uniform_index(rng, kTopics);
    const std::size_t words = 2 + uniform_index(rng, 6);
    bool has_verb = false;
    for (std::size_t w = 0; w < words; ++w) {
      WordBuilder b{lex, rng, topic, {}, {}};
      double u = uniform_real(rng);
      // Every sentence gets a predicate in its first two words.
      if ((w == 1 && !has_verb) || u < 0.35) {
        verbal_word(b);
        has_verb = true;
      } else if (u < 0.7) {
        nominal_word(b);
      } else {
        particle_word(b);
      }
      s.words.push_back(std::move(b.morphemes));
      s.gloss_words.push_back(std::move(b.glosses));
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace taxogloss
