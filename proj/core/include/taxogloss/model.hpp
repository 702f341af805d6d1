#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace taxogloss {

/// Encoder hyperparameters. Defaults are the small RoBERTa-style encoder:
/// 3 blocks of width 100 with 5 heads and a 4x feed-forward expansion.
struct ModelConfig {
  int layers = 3;
  int hidden_dim = 100;
  int heads = 5;
  int ff_dim = 400;
  int vocab_size = 0;
  int num_labels = 0;
  int max_len = 512;
  double dropout = 0.1;

  /// Throws ValidationError when dimensions are non-positive or
  /// hidden_dim is not divisible by heads.
  void validate() const;
  int head_dim() const noexcept { return hidden_dim / heads; }

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& config);
void from_json(const nlohmann::json& j, ModelConfig& config);

/// Which output layer a forward pass ends in.
enum class Head { Mlm, Classify };

struct LayerParameters {
  Eigen::MatrixXd wq, bq, wk, bk, wv, bv, wo, bo;
  Eigen::MatrixXd ln1_gamma, ln1_beta;
  Eigen::MatrixXd w1, b1, w2, b2;
  Eigen::MatrixXd ln2_gamma, ln2_beta;
};

/// Every weight of the encoder and both heads. Biases and normalization
/// parameters are 1 x width matrices so every parameter has one type.
/// Also used to hold gradients and optimizer moments (same shapes).
struct ModelParameters {
  Eigen::MatrixXd token_embedding;     // vocab x hidden
  Eigen::MatrixXd position_embedding;  // max_len x hidden
  Eigen::MatrixXd emb_ln_gamma, emb_ln_beta;
  std::vector<LayerParameters> layers;
  Eigen::MatrixXd mlm_w, mlm_b;  // hidden x vocab, 1 x vocab
  Eigen::MatrixXd cls_w, cls_b;  // hidden x labels, 1 x labels

  struct Slot {
    std::string name;
    /// Weight decay applies (matrices and embeddings, not biases or norms).
    bool decay;
    Eigen::MatrixXd* value;
  };
  struct ConstSlot {
    std::string name;
    bool decay;
    const Eigen::MatrixXd* value;
  };
  /// Stable, named enumeration of all parameters.
  std::vector<Slot> slots();
  std::vector<ConstSlot> slots() const;

  /// Same shapes, all zeros.
  ModelParameters zeros_like() const;
  std::size_t scalar_count() const;
};

/// Normal(0, 0.02) weights, unit norm scales, zero offsets and biases.
/// Head matrices are sized from config (empty when vocab_size/num_labels is 0).
ModelParameters init_parameters(const ModelConfig& config, std::uint64_t seed);

/// Fresh classification head of config.num_labels outputs.
void init_classifier_head(ModelParameters& params, const ModelConfig& config, std::uint64_t seed);

/// Activations kept for backward. Opaque to callers.
struct ForwardCache {
  struct Layer {
    Eigen::MatrixXd input, q, k, v, context;
    std::vector<Eigen::MatrixXd> attention;  // per (sequence, head): T x T, before dropout
    std::vector<Eigen::MatrixXd> attention_keep;  // same layout; empty when no dropout
    Eigen::MatrixXd ln1_hat, ln1_rstd, h1, ff_pre, ff_act;
    Eigen::MatrixXd ff_keep;  // empty when no dropout
    Eigen::MatrixXd ln2_hat, ln2_rstd;
  };
  std::vector<std::vector<int>> sequences;
  std::vector<std::size_t> offsets;
  Head head = Head::Classify;
  bool dropout_active = false;
  double dropout = 0.0;
  Eigen::MatrixXd emb_hat, emb_rstd;
  std::vector<Layer> layers;
  Eigen::MatrixXd final_hidden;
};

struct ForwardResult {
  /// Rows of all sequences stacked in order; sequence i occupies rows
  /// offsets[i] .. offsets[i+1].
  Eigen::MatrixXd logits;
  std::vector<std::size_t> offsets;
  ForwardCache cache;
};

/// Bidirectional encoder over a packed batch of token sequences. PAD keys are
/// excluded from attention. With train = true, dropout (on attention weights
/// and feed-forward output) is drawn from the counter stream keyed by each
/// sequence's dropout key, so masks do not depend on batch composition.
ForwardResult forward(const ModelParameters& params, const ModelConfig& config,
                      std::span<const std::vector<int>> sequences, Head head, bool train,
                      std::span<const std::uint64_t> dropout_keys);

ForwardResult forward(const ModelParameters& params, const ModelConfig& config, const std::vector<int>& tokens,
                      Head head, bool train, std::uint64_t seed);

/// Exact gradients of sum(upstream .* logits) with respect to every
/// parameter. Throws ValidationError when upstream does not match the cache.
ModelParameters backward(const ModelParameters& params, const ModelConfig& config, const ForwardCache& cache,
                         const Eigen::MatrixXd& upstream);

}  // namespace taxogloss
