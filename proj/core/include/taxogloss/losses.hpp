#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "taxogloss/taxonomy.hpp"

namespace taxogloss {

enum class LossKind { CrossEntropy, Taxonomic, Harmonic };

/// "ce", "tax", "harmonic".
std::string_view to_string(LossKind kind) noexcept;
LossKind parse_loss_kind(std::string_view name);

struct LossResult {
  double value = 0.0;
  /// d value / d logits.
  std::vector<double> gradient;
  /// Unweighted per-level losses, shallowest level first.
  std::vector<double> per_level;
};

/// Throws ValidationError on non-finite input.
std::vector<double> softmax(std::span<const double> logits);
double logsumexp(std::span<const double> values);

/// Weights applied to each level's loss, shallowest first:
/// all ones for taxonomic, 1/(d - j) for harmonic (leaf level weight 1),
/// and a single 1 for cross-entropy.
std::vector<double> level_weights(LossKind kind, int depth);

LossResult cross_entropy(std::span<const double> logits, std::size_t target);

/// Sum over levels of weights[j] * -log q_j(target's class), where q_j is the
/// softmax mass aggregated over each level-j class. Class masses are formed
/// in log space. This is the general form behind taxonomic_loss and
/// harmonic_taxonomic_loss, and the hook for custom level weightings.
LossResult weighted_level_loss(std::span<const double> logits, std::size_t target,
                               const Taxonomy& taxonomy, std::span<const double> weights);

LossResult taxonomic_loss(std::span<const double> logits, std::size_t target,
                          const Taxonomy& taxonomy);
LossResult harmonic_taxonomic_loss(std::span<const double> logits, std::size_t target,
                                   const Taxonomy& taxonomy);

/// Dispatch on kind. The taxonomy is ignored for cross-entropy.
LossResult token_loss(LossKind kind, std::span<const double> logits, std::size_t target,
                      const Taxonomy& taxonomy);

struct BatchLossResult {
  double value = 0.0;
  /// T x n, zero rows at masked positions.
  Eigen::MatrixXd gradient;
  /// Mean per-level losses over the counted positions.
  std::vector<double> per_level;
  std::size_t counted = 0;
};

/// Mean of the per-token loss over positions where mask is true.
/// Throws ValidationError when no position is counted.
BatchLossResult batch_loss(const Eigen::MatrixXd& logits, std::span<const int> targets,
                           const std::vector<bool>& mask, LossKind kind, const Taxonomy& taxonomy);

}  // namespace taxogloss
