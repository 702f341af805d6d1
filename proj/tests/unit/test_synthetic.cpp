#include <gtest/gtest.h>

#include <map>
#include <regex>
#include <set>
#include <string>

#include "taxogloss/corpus.hpp"
#include "taxogloss/synthetic.hpp"
#include "test_support.hpp"

namespace taxogloss {
namespace {

using testing::bundled_taxonomy;

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : "-") + p;
  return out;
}

// Independent restatement of the word templates, as regular expressions over
// the dash-joined gloss sequence of one word.
const std::regex kTam("(COM|INC|PRG|COND|IMP|INT|TAM)");
const std::regex kAbs("A[12][SP]");
const std::regex kErg("E[123][SP]?");
const std::regex kTransitive(
    "(COM|INC|PRG|COND|IMP|INT|TAM)(-A[12][SP])?(-E[123][SP]?)?-VT"
    "(-(APLI|CAU|MOV)(-TRN|-ITR)?|-(AP|PAS|RFX|REC)(-ITR)?|(-TRN)?)");
const std::regex kIntransitive("(COM|INC|PRG|COND|IMP|INT|TAM)(-A[12][SP])?-VI(-(AP|APLI|CAU|MOV|PAS|REC|RFX))?(-ITR)?");
const std::regex kStative("(COM|INC|PRG|COND|IMP|INT|TAM)(-A[12][SP])?-(POS|EXS)(-AFE)?");
const std::regex kNominal("((NUM|CLAS)-)?(NOM|S)(-DIM)?(-Pl)?(-GNT)?(-(AGT|INS))?|((NUM|CLAS)-)?(ADJ|SAB|TOP|VOC)|PRON");
const std::regex kParticle("Adv|NEG|AFI|PART|SREL|ART|DEM|Conj|Prep|ENF|ITS|MED");

bool is_verbal(const std::string& word) {
  return std::regex_match(word, kTransitive) || std::regex_match(word, kIntransitive) ||
         std::regex_match(word, kStative);
}

TEST(Synthetic, TenThousandSentencesFollowTheTemplates) {
  const auto& tax = bundled_taxonomy();
  auto corpus = generate_synthetic(1, 10000);
  ASSERT_EQ(corpus.size(), 10000u);
  std::map<std::string, std::set<std::string>> glosses_of_form;
  std::size_t verbal = 0, nominal = 0, particle = 0;
  for (const auto& s : corpus) {
    ASSERT_GE(s.words.size(), 2u);
    ASSERT_LE(s.words.size(), 7u);
    ASSERT_EQ(s.words.size(), s.gloss_words.size());
    bool verb_in_first_two = false;
    for (std::size_t w = 0; w < s.words.size(); ++w) {
      ASSERT_EQ(s.words[w].size(), s.gloss_words[w].size());
      for (std::size_t m = 0; m < s.words[w].size(); ++m) {
        ASSERT_TRUE(tax.find(s.gloss_words[w][m]).has_value()) << s.gloss_words[w][m];
        ASSERT_FALSE(s.words[w][m].empty());
        ASSERT_EQ(s.words[w][m].find_first_of("- \t."), std::string::npos);
        glosses_of_form[s.words[w][m]].insert(s.gloss_words[w][m]);
      }
      auto word = join(s.gloss_words[w]);
      if (is_verbal(word)) {
        ++verbal;
        if (w < 2) verb_in_first_two = true;
      } else if (std::regex_match(word, kNominal)) {
        ++nominal;
      } else if (std::regex_match(word, kParticle)) {
        ++particle;
      } else {
        FAIL() << s.id << " word " << w << " breaks every template: " << word;
      }
    }
    EXPECT_TRUE(verb_in_first_two) << s.id;
  }
  EXPECT_GT(verbal, 5000u);
  EXPECT_GT(nominal, 5000u);
  EXPECT_GT(particle, 2000u);
  // Homophony is confined to person markers: A/E of the same person and
  // number may share a form, and short open-class forms may collide.
  for (const auto& [form, glosses] : glosses_of_form) {
    if (glosses.size() < 2) continue;
    for (const auto& g : glosses) EXPECT_NE(g, "[SEP]");
  }
}

TEST(Synthetic, PersonMarkersShareForms) {
  auto corpus = generate_synthetic(1, 3000);
  std::map<std::string, std::set<std::string>> forms;
  for (const auto& s : corpus)
    for (std::size_t w = 0; w < s.words.size(); ++w)
      for (std::size_t m = 0; m < s.words[w].size(); ++m) forms[s.gloss_words[w][m]].insert(s.words[w][m]);
  ASSERT_FALSE(forms["A1S"].empty());
  ASSERT_FALSE(forms["E1S"].empty());
  EXPECT_TRUE(forms["E1S"].count(*forms["A1S"].begin()));
}

TEST(Synthetic, SentenceDependsOnlyOnSeedAndIndex) {
  auto small = generate_synthetic(4, 20);
  auto large = generate_synthetic(4, 200);
  for (std::size_t i = 0; i < small.size(); ++i) EXPECT_EQ(small[i], large[i]);
  EXPECT_EQ(small[0].id, "syn1");
  auto other = generate_synthetic(5, 20);
  EXPECT_NE(serialize_corpus(small), serialize_corpus(other));
}

TEST(Synthetic, SeedsShareTheLexicon) {
  auto a = Vocabulary::build(generate_synthetic(0, 2000));
  auto b = generate_synthetic(99, 200);
  std::size_t unknown = 0, total = 0;
  for (const auto& s : b)
    for (const auto& m : s.flat_morphemes()) {
      ++total;
      if (!a.contains(m)) ++unknown;
    }
  EXPECT_LT(static_cast<double>(unknown) / static_cast<double>(total), 0.01);
}

TEST(Synthetic, OutputParsesBack) {
  auto corpus = generate_synthetic(2, 50);
  EXPECT_EQ(parse_corpus(serialize_corpus(corpus)), corpus);
}

}  // namespace
}  // namespace taxogloss
