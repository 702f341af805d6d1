#include <gtest/gtest.h>

#include <fstream>

#include "gradcheck.hpp"
#include "taxogloss/checkpoint.hpp"
#include "taxogloss/error.hpp"
#include "test_support.hpp"

namespace taxogloss {
namespace {

Checkpoint finetuned_checkpoint() {
  Checkpoint ck;
  ck.phase = Phase::Finetune;
  ck.config = testing::small_config();
  ck.vocabulary = Vocabulary::from_morphemes({"a", "b", "c", "d", "e"});
  ck.taxonomy_hash = Taxonomy::flat({"A", "B", "C", "D", "E"}).hash();
  ck.loss_kind = LossKind::Harmonic;
  ck.seed = 17;
  ck.params = testing::perturbed_parameters(ck.config, 4);
  ck.params.mlm_w.resize(ck.config.hidden_dim, 0);
  ck.params.mlm_b.resize(1, 0);
  return ck;
}

void expect_same_parameters(const ModelParameters& a, const ModelParameters& b) {
  auto sa = a.slots();
  auto sb = b.slots();
  ASSERT_EQ(sa.size(), sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) {
    EXPECT_EQ(sa[i].name, sb[i].name);
    EXPECT_EQ(*sa[i].value, *sb[i].value) << sa[i].name;
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto ck = finetuned_checkpoint();
  auto bytes = serialize_checkpoint(ck);
  EXPECT_EQ(bytes.rfind("TAXOGLOSS-CKPT 1\n", 0), 0u);
  auto back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back.phase, Phase::Finetune);
  EXPECT_EQ(back.config, ck.config);
  EXPECT_EQ(back.vocabulary, ck.vocabulary);
  EXPECT_EQ(back.taxonomy_hash, ck.taxonomy_hash);
  EXPECT_EQ(back.loss_kind, LossKind::Harmonic);
  EXPECT_EQ(back.seed, 17u);
  expect_same_parameters(back.params, ck.params);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
}

TEST(Checkpoint, PretrainCheckpointHasNoClassifier) {
  Checkpoint ck;
  ck.config = testing::small_config();
  ck.config.num_labels = 0;
  ck.vocabulary = Vocabulary::from_morphemes({"a", "b", "c", "d", "e"});
  ck.params = init_parameters(ck.config, 1);
  auto back = deserialize_checkpoint(serialize_checkpoint(ck));
  EXPECT_EQ(back.phase, Phase::Pretrain);
  EXPECT_FALSE(back.loss_kind.has_value());
  EXPECT_EQ(back.params.cls_w.cols(), 0);
  expect_same_parameters(back.params, ck.params);
  EXPECT_THROW(require_taxonomy(back, Taxonomy::flat({"A", "B"})), ValidationError);
}

TEST(Checkpoint, FileRoundTrip) {
  testing::TempDir dir("ckpt");
  auto ck = finetuned_checkpoint();
  save_checkpoint(ck, dir.file("m.ckpt"));
  auto back = load_checkpoint(dir.file("m.ckpt"));
  expect_same_parameters(back.params, ck.params);
  EXPECT_THROW(load_checkpoint(dir.file("none.ckpt")), Error);
}

TEST(Checkpoint, CorruptionIsDetected) {
  auto bytes = serialize_checkpoint(finetuned_checkpoint());
  EXPECT_THROW(deserialize_checkpoint("not a checkpoint"), ParseError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 8)), ParseError);
  EXPECT_THROW(deserialize_checkpoint(bytes + "x"), ParseError);
  // Tamper with the stored vocabulary: its hash no longer matches.
  auto tampered = bytes;
  auto pos = tampered.find("\"a\"");
  ASSERT_NE(pos, std::string::npos);
  tampered[pos + 1] = 'z';
  EXPECT_THROW(deserialize_checkpoint(tampered), ValidationError);
}

TEST(Checkpoint, TaxonomyMustMatch) {
  auto ck = finetuned_checkpoint();
  EXPECT_NO_THROW(require_taxonomy(ck, Taxonomy::flat({"A", "B", "C", "D", "E"})));
  EXPECT_THROW(require_taxonomy(ck, Taxonomy::flat({"A", "B", "C", "D", "F"})), ValidationError);
}

}  // namespace
}  // namespace taxogloss
