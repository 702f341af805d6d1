#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "taxogloss/error.hpp"
#include "taxogloss/synthetic.hpp"
#include "taxogloss/training.hpp"
#include "test_support.hpp"

namespace taxogloss {
namespace {

using testing::bundled_taxonomy;

ModelConfig tiny_config() {
  ModelConfig c;
  c.layers = 1;
  c.hidden_dim = 16;
  c.heads = 2;
  c.ff_dim = 32;
  c.max_len = 48;
  c.dropout = 0.1;
  return c;
}

TrainPlan tiny_plan(Phase phase, int epochs) {
  TrainPlan p = phase == Phase::Pretrain ? TrainPlan::pretrain_defaults() : TrainPlan::finetune_defaults();
  p.epochs = epochs;
  p.batch_size = 4;
  p.grad_accum_steps = 1;
  p.learning_rate = 3e-3;
  return p;
}

const std::vector<IgtSentence>& corpus() {
  static const auto c = generate_synthetic(3, 40);
  return c;
}

const Checkpoint& pretrained() {
  static const Checkpoint ck = pretrain(corpus(), tiny_config(), tiny_plan(Phase::Pretrain, 2)).checkpoint;
  return ck;
}

std::span<const IgtSentence> first(std::size_t n) { return std::span(corpus()).first(n); }
std::span<const IgtSentence> validation() { return std::span(corpus()).subspan(30); }

TEST(Training, AccumulationMatchesOneLargeBatch) {
  // 24 sentences, 2 optimizer steps per epoch either way.
  auto accumulated = tiny_plan(Phase::Finetune, 3);
  accumulated.batch_size = 4;
  accumulated.grad_accum_steps = 3;
  auto single = accumulated;
  single.batch_size = 12;
  single.grad_accum_steps = 1;
  auto a = finetune(pretrained(), first(24), validation(), bundled_taxonomy(), accumulated);
  auto b = finetune(pretrained(), first(24), validation(), bundled_taxonomy(), single);
  ASSERT_EQ(a.history.step_losses.size(), 6u);
  ASSERT_EQ(b.history.step_losses.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(a.history.step_losses[i], b.history.step_losses[i], 1e-8) << i;
  const auto& pa = a.checkpoint.params;
  const auto& pb = b.checkpoint.params;
  EXPECT_LT((pa.cls_w - pb.cls_w).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Training, TrailingPartialGroupStillSteps) {
  auto plan = tiny_plan(Phase::Finetune, 2);
  plan.batch_size = 4;
  plan.grad_accum_steps = 2;  // 10 sentences -> groups of 8 and 2
  auto run = finetune(pretrained(), first(10), validation(), bundled_taxonomy(), plan);
  EXPECT_EQ(run.history.step_losses.size(), 4u);
  EXPECT_EQ(run.history.epoch_losses.size(), 2u);
}

TEST(Training, LossKindsCoincideOnFlatTaxonomy) {
  auto flat = Taxonomy::flat(bundled_taxonomy().leaves());
  auto plan = tiny_plan(Phase::Finetune, 3);
  std::vector<std::vector<double>> trajectories;
  for (auto kind : {LossKind::CrossEntropy, LossKind::Taxonomic, LossKind::Harmonic}) {
    plan.loss_kind = kind;
    trajectories.push_back(finetune(pretrained(), first(12), validation(), flat, plan).history.step_losses);
  }
  ASSERT_FALSE(trajectories[0].empty());
  for (std::size_t k = 1; k < trajectories.size(); ++k) {
    ASSERT_EQ(trajectories[k].size(), trajectories[0].size());
    for (std::size_t i = 0; i < trajectories[0].size(); ++i)
      EXPECT_NEAR(trajectories[k][i], trajectories[0][i], 1e-10) << "kind " << k << " step " << i;
  }
}

TEST(Training, LossDecreasesWhenFinetuning) {
  auto plan = tiny_plan(Phase::Finetune, 30);
  auto run = finetune(pretrained(), first(8), validation(), bundled_taxonomy(), plan);
  ASSERT_EQ(run.history.epoch_losses.size(), 30u);
  EXPECT_LT(run.history.epoch_losses.back(), 0.75 * run.history.epoch_losses.front());
  for (std::size_t i = 1; i < run.history.epoch_losses.size(); ++i)
    EXPECT_LT(run.history.epoch_losses[i], run.history.epoch_losses[i - 1]) << i;
}

TEST(Training, SamePlanGivesIdenticalRecord) {
  auto plan = tiny_plan(Phase::Finetune, 2);
  plan.loss_kind = LossKind::Harmonic;
  plan.seed = 9;
  auto a = finetune(pretrained(), first(12), validation(), bundled_taxonomy(), plan).record.to_json();
  auto b = finetune(pretrained(), first(12), validation(), bundled_taxonomy(), plan).record.to_json();
  ASSERT_TRUE(a.contains("metadata"));
  EXPECT_TRUE(a["metadata"].contains("wall_time_seconds"));
  a.erase("metadata");
  b.erase("metadata");
  EXPECT_EQ(a.dump(), b.dump());
  EXPECT_EQ(a["loss_kind"], "harmonic");
  EXPECT_EQ(a["train_size"], 12);
  EXPECT_EQ(a["epoch_losses"].size(), 2u);

  plan.seed = 10;
  auto c = finetune(pretrained(), first(12), validation(), bundled_taxonomy(), plan).record.to_json();
  c.erase("metadata");
  EXPECT_NE(c.dump(), a.dump());
}

TEST(Training, PretrainIsDeterministicAndRejectsBadPlans) {
  auto plan = tiny_plan(Phase::Pretrain, 1);
  auto a = pretrain(first(8), tiny_config(), plan);
  auto b = pretrain(first(8), tiny_config(), plan);
  EXPECT_EQ(a.history.step_losses, b.history.step_losses);
  EXPECT_EQ(a.checkpoint.phase, Phase::Pretrain);
  EXPECT_EQ(a.checkpoint.params.cls_w.size(), 0);
  EXPECT_EQ(static_cast<std::size_t>(a.checkpoint.config.vocab_size), a.checkpoint.vocabulary.size());

  auto zero_mask = plan;
  zero_mask.mask_rate = 0.0;
  EXPECT_THROW(pretrain(first(8), tiny_config(), zero_mask), ValidationError);
  EXPECT_THROW(pretrain(first(3), tiny_config(), plan), ValidationError);  // smaller than one batch
  auto bad_batch = plan;
  bad_batch.batch_size = 0;
  EXPECT_THROW(pretrain(first(8), tiny_config(), bad_batch), ValidationError);
  EXPECT_THROW(finetune(pretrained(), first(0), validation(), bundled_taxonomy(), tiny_plan(Phase::Finetune, 1)),
               ValidationError);
}

TEST(Training, MaskingRatesAndDeterminism) {
  std::vector<int> tokens{Vocabulary::kBos};
  for (int i = 0; i < 20000; ++i) tokens.push_back(Vocabulary::kSpecialCount + i % 50);
  tokens.push_back(Vocabulary::kEos);
  const std::size_t vocab = Vocabulary::kSpecialCount + 50;
  auto ex = mask_tokens(tokens, vocab, 0.15, 7, 0, 3);
  EXPECT_EQ(ex.tokens.size(), tokens.size());
  EXPECT_EQ(ex.targets.front(), kIgnoreLabel);
  EXPECT_EQ(ex.targets.back(), kIgnoreLabel);
  std::size_t selected = 0, masked = 0, replaced = 0, kept = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (ex.targets[i] < 0) {
      EXPECT_EQ(ex.tokens[i], tokens[i]);
      continue;
    }
    EXPECT_EQ(ex.targets[i], tokens[i]);
    ++selected;
    if (ex.tokens[i] == Vocabulary::kMask) {
      ++masked;
    } else if (ex.tokens[i] == tokens[i]) {
      ++kept;
    } else {
      ++replaced;
      EXPECT_FALSE(Vocabulary::is_special(ex.tokens[i]));
    }
  }
  const double n = 20000.0;
  EXPECT_NEAR(selected / n, 0.15, 0.01);
  EXPECT_NEAR(static_cast<double>(masked) / static_cast<double>(selected), 0.8, 0.03);
  // A random replacement can draw the original morpheme (1 in 50).
  EXPECT_NEAR(static_cast<double>(replaced + kept) / static_cast<double>(selected), 0.2, 0.03);
  EXPECT_NEAR(static_cast<double>(kept) / static_cast<double>(selected), 0.1 + 0.1 / 50, 0.02);

  auto again = mask_tokens(tokens, vocab, 0.15, 7, 0, 3);
  EXPECT_EQ(again.tokens, ex.tokens);
  EXPECT_EQ(again.targets, ex.targets);
  EXPECT_NE(mask_tokens(tokens, vocab, 0.15, 7, 1, 3).targets, ex.targets);
  EXPECT_NE(mask_tokens(tokens, vocab, 0.15, 7, 0, 4).targets, ex.targets);
  EXPECT_NE(mask_tokens(tokens, vocab, 0.15, 8, 0, 3).targets, ex.targets);
}

TEST(Training, SeparatorsAreNeverMasked) {
  std::vector<int> tokens{Vocabulary::kBos};
  for (int i = 0; i < 500; ++i) tokens.push_back(i % 2 ? Vocabulary::kSep : Vocabulary::kSpecialCount);
  tokens.push_back(Vocabulary::kEos);
  auto ex = mask_tokens(tokens, Vocabulary::kSpecialCount + 1, 0.5, 1, 0, 0);
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] == Vocabulary::kSep) EXPECT_EQ(ex.targets[i], kIgnoreLabel);
}

TEST(Training, MaskedLmAccuracyReportsBaseline) {
  auto score = masked_lm_accuracy(pretrained(), corpus(), 0.15, 99);
  EXPECT_GT(score.positions, 0u);
  EXPECT_GT(score.majority_baseline, 0.0);
  EXPECT_LE(score.majority_baseline, 100.0);
  EXPECT_GE(score.accuracy, 0.0);
  auto finetuned = finetune(pretrained(), first(8), validation(), bundled_taxonomy(), tiny_plan(Phase::Finetune, 1));
  EXPECT_THROW(masked_lm_accuracy(finetuned.checkpoint, corpus(), 0.15, 99), ValidationError);
}

// 200 epochs on a 200-sentence corpus at the default model size. Micro-batches
// of 8 give 5000 optimizer steps; the default 64x3 grouping gives ~400 steps,
// too few to learn the corpus. Takes a few minutes on one core.
TEST(Training, LongPretrainBeatsMajorityBaselineFivefold) {
  const auto sentences = generate_synthetic(0, 200);
  auto plan = TrainPlan::pretrain_defaults();
  plan.epochs = 200;
  plan.batch_size = 8;
  plan.grad_accum_steps = 1;
  plan.learning_rate = 1e-3;
  auto run = pretrain(sentences, ModelConfig{}, plan);
  auto score = masked_lm_accuracy(run.checkpoint, sentences, 0.15, 12345);
  EXPECT_GE(score.accuracy, 5.0 * score.majority_baseline)
      << "accuracy " << score.accuracy << "%, baseline " << score.majority_baseline << "%";
}

ExperimentResults fake_results() {
  ExperimentResults r;
  auto row = [](std::size_t size, LossKind kind, std::uint64_t seed, double acc, double top5) {
    ExperimentRow x{size, kind, seed, {}};
    x.record.accuracy = acc;
    x.record.top5 = top5;
    x.record.wall_seconds = 1.25;
    return x;
  };
  r.rows = {row(10, LossKind::CrossEntropy, 0, 40, 70), row(10, LossKind::CrossEntropy, 1, 50, 80),
            row(10, LossKind::Taxonomic, 0, 60, 75), row(10, LossKind::Taxonomic, 1, 40, 85),
            row(100, LossKind::CrossEntropy, 0, 70, 90)};
  return r;
}

TEST(Experiment, ResultTables) {
  auto r = fake_results();
  std::istringstream results(r.results_table());
  std::string header, line;
  std::getline(results, header);
  EXPECT_EQ(header, "size\tlossKind\tseed\taccuracy\ttop5\twallTimeSeconds");
  std::getline(results, line);
  EXPECT_EQ(line, "10\tce\t0\t40.0000\t70.0000\t1.250");

  EXPECT_EQ(r.aggregate_table(),
            "size\tlossKind\truns\taccuracy\ttop5\n"
            "10\tce\t2\t45.0000\t75.0000\n"
            "10\ttax\t2\t50.0000\t80.0000\n"
            "100\tce\t1\t70.0000\t90.0000\n");
  auto md = r.summary_tables();
  EXPECT_NE(md.find("| size | ce | tax |"), std::string::npos) << md;
  EXPECT_NE(md.find("| 10 | 45.0 | **50.0** |"), std::string::npos) << md;
  EXPECT_NE(md.find("| 100 | **70.0** | - |"), std::string::npos) << md;
  EXPECT_NE(md.find("| 10 | 75.0 | **80.0** |"), std::string::npos) << md;
}

TEST(Experiment, GridOrderAndSharedSubsets) {
  auto plan = tiny_plan(Phase::Finetune, 1);
  const std::vector<std::size_t> sizes{6, 12};
  const std::vector<LossKind> kinds{LossKind::CrossEntropy, LossKind::Harmonic};
  const std::vector<std::uint64_t> seeds{0, 1};
  auto pool = first(30);
  auto serial = run_experiment(pretrained(), pool, validation(), bundled_taxonomy(), sizes, kinds, seeds, plan, 1);
  auto parallel = run_experiment(pretrained(), pool, validation(), bundled_taxonomy(), sizes, kinds, seeds, plan, 3);
  ASSERT_EQ(serial.rows.size(), 8u);
  std::size_t i = 0;
  for (auto size : sizes)
    for (auto kind : kinds)
      for (auto seed : seeds) {
        const auto& row = serial.rows[i];
        EXPECT_EQ(row.size, size);
        EXPECT_EQ(row.loss_kind, kind);
        EXPECT_EQ(row.seed, seed);
        EXPECT_EQ(row.record.train_size, size);
        auto a = row.record.to_json();
        auto b = parallel.rows[i].record.to_json();
        a.erase("metadata");
        b.erase("metadata");
        EXPECT_EQ(a.dump(), b.dump()) << "cell " << i;
        ++i;
      }

  // Each cell equals a standalone finetune on sample_subset(size, seed).
  auto subset = sample_subset(pool, 6, 1);
  plan.loss_kind = LossKind::Harmonic;
  plan.seed = 1;
  auto direct = finetune(pretrained(), subset, validation(), bundled_taxonomy(), plan).record;
  EXPECT_EQ(direct.epoch_losses, serial.rows[3].record.epoch_losses);
  EXPECT_EQ(direct.accuracy, serial.rows[3].record.accuracy);

  const std::vector<std::size_t> too_big{31};
  EXPECT_THROW(run_experiment(pretrained(), pool, validation(), bundled_taxonomy(), too_big, kinds, seeds, plan),
               ValidationError);
}

}  // namespace
}  // namespace taxogloss
