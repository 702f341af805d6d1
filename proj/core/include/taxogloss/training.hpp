#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "taxogloss/checkpoint.hpp"
#include "taxogloss/corpus.hpp"
#include "taxogloss/losses.hpp"
#include "taxogloss/model.hpp"
#include "taxogloss/optimizer.hpp"
#include "taxogloss/taxonomy.hpp"

namespace taxogloss {

struct TrainPlan {
  Phase phase = Phase::Finetune;
  /// Ignored when pretraining.
  LossKind loss_kind = LossKind::CrossEntropy;
  /// Informational: number of labeled sentences, nullopt for the full set.
  std::optional<std::size_t> train_size;
  std::uint64_t seed = 0;
  int epochs = 100;
  int batch_size = 64;
  int grad_accum_steps = 3;
  double learning_rate = 3e-4;
  double warmup_fraction = 0.05;
  /// MLM: share of morpheme positions selected for prediction.
  double mask_rate = 0.15;
  AdamWConfig adamw;
  /// Replaces the loss kind's level weights when set (one per taxonomy level).
  std::optional<std::vector<double>> level_weights;
  /// Written after training when non-empty.
  std::string checkpoint_path;

  static TrainPlan pretrain_defaults();
  static TrainPlan finetune_defaults();
};

struct TrainingHistory {
  /// Mean loss over the loss positions of each optimizer step.
  std::vector<double> step_losses;
  /// Token-weighted mean loss of each epoch.
  std::vector<double> epoch_losses;
};

/// Output of a finetuning run.
struct RunRecord {
  LossKind loss_kind = LossKind::CrossEntropy;
  std::size_t train_size = 0;
  std::uint64_t seed = 0;
  int epochs = 0;
  double final_loss = 0.0;
  double accuracy = 0.0;  // validation, percent
  double top5 = 0.0;      // validation top-5, percent
  double wall_seconds = 0.0;
  std::vector<double> epoch_losses;

  /// Wall time sits under "metadata" so the rest is reproducible byte for byte.
  nlohmann::json to_json() const;
};

struct PretrainResult {
  Checkpoint checkpoint;
  TrainingHistory history;
};

struct FinetuneResult {
  Checkpoint checkpoint;
  RunRecord record;
  TrainingHistory history;
};

/// MLM pretraining from scratch. The vocabulary is built from the corpus and
/// config.vocab_size/num_labels are overwritten. Throws ValidationError when
/// the corpus is smaller than one batch or the mask rate is not positive.
PretrainResult pretrain(std::span<const IgtSentence> corpus, ModelConfig config, const TrainPlan& plan);

/// Replace the MLM head by a fresh linear classifier over the taxonomy's
/// leaves (seeded from plan.seed) and train all weights under plan.loss_kind.
/// The record's accuracies are measured on `validation`.
FinetuneResult finetune(const Checkpoint& pretrained, std::span<const IgtSentence> train,
                        std::span<const IgtSentence> validation, const Taxonomy& taxonomy, const TrainPlan& plan);

/// One training example: input tokens and per-position targets
/// (kIgnoreLabel where no loss applies).
struct TrainingExample {
  std::vector<int> tokens;
  std::vector<int> targets;
};

using ExampleSource = std::function<TrainingExample(int epoch, std::size_t index)>;
using TokenLoss = std::function<LossResult(std::span<const double> logits, int target)>;

/// Shared optimization loop. Each epoch visits the examples in a seeded
/// shuffle, groups them into batch_size x grad_accum_steps sequences per
/// optimizer step (a trailing partial group still steps) and averages the
/// loss over every loss position of the group.
TrainingHistory train_loop(ModelParameters& params, const ModelConfig& config, Head head, std::size_t example_count,
                           const ExampleSource& examples, const TokenLoss& loss, const TrainPlan& plan);

/// MLM input/targets for one sentence: each morpheme position is selected
/// with probability mask_rate; selected positions become MASK (80%), a random
/// morpheme (10%) or stay unchanged (10%). Deterministic in (seed, epoch, index).
TrainingExample mask_tokens(const std::vector<int>& tokens, std::size_t vocab_size, double mask_rate,
                            std::uint64_t seed, int epoch, std::size_t index);

/// Accuracy (percent) of MLM predictions at the masked positions of one
/// masking pass over the corpus, and the majority-class baseline on the same
/// positions.
struct MaskedLmScore {
  double accuracy = 0.0;
  double majority_baseline = 0.0;
  std::size_t positions = 0;
};
MaskedLmScore masked_lm_accuracy(const Checkpoint& checkpoint, std::span<const IgtSentence> corpus,
                                 double mask_rate, std::uint64_t seed);

struct ExperimentRow {
  std::size_t size = 0;
  LossKind loss_kind = LossKind::CrossEntropy;
  std::uint64_t seed = 0;
  RunRecord record;
};

struct ExperimentResults {
  std::vector<ExperimentRow> rows;

  /// size, lossKind, seed, accuracy, top5, wallTimeSeconds
  std::string results_table() const;
  /// size, lossKind, runs, accuracy, top5 (means)
  std::string aggregate_table() const;
  /// Accuracy and top-5 tables: one row per size, one column per loss kind.
  std::string summary_tables() const;
};

/// For every (size, seed) a subset is sampled once and shared by all loss
/// kinds; each cell finetunes from `pretrained`. Up to `jobs` cells run
/// concurrently; results are ordered by (size, loss kind, seed) regardless.
ExperimentResults run_experiment(const Checkpoint& pretrained, std::span<const IgtSentence> corpus,
                                 std::span<const IgtSentence> validation, const Taxonomy& taxonomy,
                                 std::span<const std::size_t> sizes, std::span<const LossKind> loss_kinds,
                                 std::span<const std::uint64_t> seeds, const TrainPlan& base, int jobs = 1);

}  // namespace taxogloss
