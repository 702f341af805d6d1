#include "taxogloss/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "taxogloss/error.hpp"

namespace taxogloss {

std::string_view to_string(LossKind kind) noexcept {
  switch (kind) {
    case LossKind::CrossEntropy: return "ce";
    case LossKind::Taxonomic: return "tax";
    case LossKind::Harmonic: return "harmonic";
  }
  return "?";
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "ce" || name == "cross-entropy") return LossKind::CrossEntropy;
  if (name == "tax" || name == "taxonomic") return LossKind::Taxonomic;
  if (name == "harmonic" || name == "harmonic-taxonomic") return LossKind::Harmonic;
  throw ValidationError("unknown loss kind '" + std::string(name) + "' (expected ce, tax or harmonic)");
}

namespace {

void require_finite(std::span<const double> logits) {
  if (logits.empty()) throw ValidationError("loss: empty logits");
  for (double v : logits)
    if (!std::isfinite(v)) throw ValidationError("loss: non-finite logit");
}

double logsumexp_unchecked(std::span<const double> values) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : values) m = std::max(m, v);
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - m);
  return m + std::log(sum);
}

}  // namespace

double logsumexp(std::span<const double> values) {
  require_finite(values);
  return logsumexp_unchecked(values);
}

std::vector<double> softmax(std::span<const double> logits) {
  require_finite(logits);
  // Shift by the max and normalize explicitly: exp(l - lse) loses the low
  // bits of lse when logits are large.
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += p[i] = std::exp(logits[i] - m);
  for (double& v : p) v /= sum;
  return p;
}

std::vector<double> level_weights(LossKind kind, int depth) {
  switch (kind) {
    case LossKind::CrossEntropy: return {1.0};
    case LossKind::Taxonomic: return std::vector<double>(static_cast<std::size_t>(depth), 1.0);
    case LossKind::Harmonic: {
      std::vector<double> w(static_cast<std::size_t>(depth));
      for (int j = 0; j < depth; ++j) w[static_cast<std::size_t>(j)] = 1.0 / static_cast<double>(depth - j);
      return w;
    }
  }
  return {};
}

LossResult cross_entropy(std::span<const double> logits, std::size_t target) {
  require_finite(logits);
  if (target >= logits.size()) throw ValidationError("cross_entropy: target index out of range");
  const double lse = logsumexp_unchecked(logits);
  LossResult r;
  r.gradient.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) r.gradient[i] = std::exp(logits[i] - lse);
  r.gradient[target] -= 1.0;
  r.value = std::max(0.0, lse - logits[target]);
  r.per_level = {r.value};
  return r;
}

LossResult weighted_level_loss(std::span<const double> logits, std::size_t target,
                               const Taxonomy& taxonomy, std::span<const double> weights) {
  require_finite(logits);
  if (logits.size() != taxonomy.leaf_count())
    throw ValidationError("loss: logits length " + std::to_string(logits.size()) +
                          " does not match taxonomy leaf count " +
                          std::to_string(taxonomy.leaf_count()));
  if (target >= logits.size()) throw ValidationError("loss: target index out of range");
  const int depth = taxonomy.depth();
  if (weights.size() != static_cast<std::size_t>(depth))
    throw ValidationError("loss: expected one weight per taxonomy level");

  const std::size_t n = logits.size();
  const double lse_all = logsumexp_unchecked(logits);
  LossResult r;
  r.gradient.assign(n, 0.0);
  r.per_level.resize(static_cast<std::size_t>(depth));
  double weight_sum = 0.0;
  std::vector<double> member_logits;
  for (int level = 0; level < depth; ++level) {
    const double w = weights[static_cast<std::size_t>(level)];
    auto members = taxonomy.class_members(level, taxonomy.class_of(target, level));
    member_logits.clear();
    for (std::size_t i : members) member_logits.push_back(logits[i]);
    const double lse_class = logsumexp_unchecked(member_logits);
    const double level_loss = std::max(0.0, lse_all - lse_class);
    r.per_level[static_cast<std::size_t>(level)] = level_loss;
    r.value += w * level_loss;
    weight_sum += w;
    // d(-log q)/dl_i = p_i - [i in class] * softmax-within-class_i
    for (std::size_t i : members) r.gradient[i] -= w * std::exp(logits[i] - lse_class);
  }
  for (std::size_t i = 0; i < n; ++i) r.gradient[i] += weight_sum * std::exp(logits[i] - lse_all);
  return r;
}

LossResult taxonomic_loss(std::span<const double> logits, std::size_t target,
                          const Taxonomy& taxonomy) {
  auto w = level_weights(LossKind::Taxonomic, taxonomy.depth());
  return weighted_level_loss(logits, target, taxonomy, w);
}

LossResult harmonic_taxonomic_loss(std::span<const double> logits, std::size_t target,
                                   const Taxonomy& taxonomy) {
  auto w = level_weights(LossKind::Harmonic, taxonomy.depth());
  return weighted_level_loss(logits, target, taxonomy, w);
}

LossResult token_loss(LossKind kind, std::span<const double> logits, std::size_t target,
                      const Taxonomy& taxonomy) {
  switch (kind) {
    case LossKind::CrossEntropy: return cross_entropy(logits, target);
    case LossKind::Taxonomic: return taxonomic_loss(logits, target, taxonomy);
    case LossKind::Harmonic: return harmonic_taxonomic_loss(logits, target, taxonomy);
  }
  throw ValidationError("unknown loss kind");
}

BatchLossResult batch_loss(const Eigen::MatrixXd& logits, std::span<const int> targets,
                           const std::vector<bool>& mask, LossKind kind, const Taxonomy& taxonomy) {
  const auto rows = static_cast<std::size_t>(logits.rows());
  if (targets.size() != rows || mask.size() != rows)
    throw ValidationError("batch_loss: logits, targets and mask disagree in length");
  BatchLossResult out;
  out.gradient = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
  std::vector<double> row(static_cast<std::size_t>(logits.cols()));
  for (std::size_t t = 0; t < rows; ++t) {
    if (!mask[t]) continue;
    if (targets[t] < 0) throw ValidationError("batch_loss: counted position has no target");
    for (Eigen::Index c = 0; c < logits.cols(); ++c) row[static_cast<std::size_t>(c)] = logits(static_cast<Eigen::Index>(t), c);
    auto r = token_loss(kind, row, static_cast<std::size_t>(targets[t]), taxonomy);
    out.value += r.value;
    if (out.per_level.size() < r.per_level.size()) out.per_level.resize(r.per_level.size(), 0.0);
    for (std::size_t j = 0; j < r.per_level.size(); ++j) out.per_level[j] += r.per_level[j];
    for (std::size_t c = 0; c < r.gradient.size(); ++c)
      out.gradient(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) = r.gradient[c];
    ++out.counted;
  }
  if (out.counted == 0) throw ValidationError("batch_loss: no unmasked positions");
  const double scale = 1.0 / static_cast<double>(out.counted);
  out.value *= scale;
  out.gradient *= scale;
  for (double& v : out.per_level) v *= scale;
  return out;
}

}  // namespace taxogloss
