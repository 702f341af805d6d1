#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "taxogloss/corpus.hpp"
#include "taxogloss/losses.hpp"
#include "taxogloss/model.hpp"

namespace taxogloss {

enum class Phase { Pretrain, Finetune };

std::string_view to_string(Phase phase) noexcept;

/// Everything needed to run a trained model.
struct Checkpoint {
  Phase phase = Phase::Pretrain;
  ModelConfig config;
  Vocabulary vocabulary;
  /// Hash of the taxonomy the classifier head was trained against; empty
  /// for pretrained checkpoints.
  std::string taxonomy_hash;
  std::optional<LossKind> loss_kind;
  std::uint64_t seed = 0;
  ModelParameters params;
};

/// File layout:
///   line 1: "TAXOGLOSS-CKPT 1"
///   line 2: JSON header (format_version, phase, config, vocabulary,
///           vocabulary_hash, taxonomy_hash, loss_kind, seed, arrays)
///   then, for each entry of header.arrays in order, rows*cols little-endian
///   IEEE-754 float64 values in row-major order.
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
/// Verifies the vocabulary hash and every array name and shape.
Checkpoint load_checkpoint(const std::string& path);

/// Throws ValidationError unless the checkpoint's classifier was trained
/// against this taxonomy.
void require_taxonomy(const Checkpoint& checkpoint, const Taxonomy& taxonomy);

}  // namespace taxogloss
