#include "taxogloss/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "taxogloss/error.hpp"
#include "taxogloss/evaluation.hpp"
#include "taxogloss/rng.hpp"

namespace taxogloss {

TrainPlan TrainPlan::pretrain_defaults() {
  TrainPlan p;
  p.phase = Phase::Pretrain;
  p.epochs = 200;
  return p;
}

TrainPlan TrainPlan::finetune_defaults() {
  TrainPlan p;
  p.phase = Phase::Finetune;
  p.epochs = 100;
  return p;
}

nlohmann::json RunRecord::to_json() const {
  return {{"loss_kind", std::string(to_string(loss_kind))},
          {"train_size", train_size},
          {"seed", seed},
          {"epochs", epochs},
          {"final_loss", final_loss},
          {"accuracy", accuracy},
          {"top5", top5},
          {"epoch_losses", epoch_losses},
          {"metadata", {{"wall_time_seconds", wall_seconds}}}};
}

namespace {

void accumulate(ModelParameters& into, const ModelParameters& grads) {
  auto dst = into.slots();
  auto src = grads.slots();
  for (std::size_t i = 0; i < dst.size(); ++i) *dst[i].value += *src[i].value;
}

std::uint64_t dropout_key(std::uint64_t seed, int epoch, std::size_t index) {
  return derive_seed(derive_seed(seed, Stream::Dropout, static_cast<std::uint64_t>(epoch)), Stream::Dropout, index);
}

}  // namespace

TrainingHistory train_loop(ModelParameters& params, const ModelConfig& config, Head head, std::size_t example_count,
                           const ExampleSource& examples, const TokenLoss& loss, const TrainPlan& plan) {
  if (example_count == 0) throw ValidationError("training: no examples");
  if (plan.epochs < 0 || plan.batch_size <= 0 || plan.grad_accum_steps <= 0)
    throw ValidationError("training: epochs, batch size and accumulation steps must be positive");
  const std::size_t group_size = static_cast<std::size_t>(plan.batch_size) * static_cast<std::size_t>(plan.grad_accum_steps);
  const std::size_t groups_per_epoch = (example_count + group_size - 1) / group_size;
  const auto total_steps = static_cast<std::int64_t>(groups_per_epoch) * plan.epochs;

  TrainingHistory history;
  OptimizerState state = make_optimizer_state(params);
  std::int64_t step = 0;
  std::vector<std::size_t> order(example_count);
  for (int epoch = 0; epoch < plan.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng shuffle_rng(derive_seed(plan.seed, Stream::Shuffle, static_cast<std::uint64_t>(epoch)));
    shuffle(std::span<std::size_t>(order), shuffle_rng);

    double epoch_loss = 0.0;
    std::size_t epoch_positions = 0;
    for (std::size_t g = 0; g < groups_per_epoch; ++g) {
      const std::size_t begin = g * group_size;
      const std::size_t end = std::min(example_count, begin + group_size);
      std::vector<TrainingExample> group;
      group.reserve(end - begin);
      std::size_t positions = 0;
      for (std::size_t i = begin; i < end; ++i) {
        group.push_back(examples(epoch, order[i]));
        for (int t : group.back().targets) positions += t >= 0;
      }
      if (positions == 0) continue;
      const double norm = 1.0 / static_cast<double>(positions);

      std::optional<ModelParameters> grad_sum;
      double loss_sum = 0.0;
      for (std::size_t mb = 0; mb < group.size(); mb += static_cast<std::size_t>(plan.batch_size)) {
        const std::size_t mb_end = std::min(group.size(), mb + static_cast<std::size_t>(plan.batch_size));
        std::vector<std::vector<int>> tokens;
        std::vector<std::uint64_t> keys;
        for (std::size_t i = mb; i < mb_end; ++i) {
          tokens.push_back(group[i].tokens);
          keys.push_back(dropout_key(plan.seed, epoch, order[begin + i]));
        }
        auto fwd = forward(params, config, tokens, head, true, keys);
        Eigen::MatrixXd upstream = Eigen::MatrixXd::Zero(fwd.logits.rows(), fwd.logits.cols());
        std::vector<double> row(static_cast<std::size_t>(fwd.logits.cols()));
        for (std::size_t i = mb; i < mb_end; ++i) {
          const auto& targets = group[i].targets;
          const std::size_t off = fwd.offsets[i - mb];
          for (std::size_t t = 0; t < targets.size(); ++t) {
            if (targets[t] < 0) continue;
            const auto r = static_cast<Eigen::Index>(off + t);
            for (std::size_t c = 0; c < row.size(); ++c) row[c] = fwd.logits(r, static_cast<Eigen::Index>(c));
            auto res = loss(row, targets[t]);
            loss_sum += res.value;
            for (std::size_t c = 0; c < row.size(); ++c)
              upstream(r, static_cast<Eigen::Index>(c)) = res.gradient[c] * norm;
          }
        }
        auto grads = backward(params, config, fwd.cache, upstream);
        if (grad_sum) {
          accumulate(*grad_sum, grads);
        } else {
          grad_sum = std::move(grads);
        }
      }
      const double lr = scheduled_learning_rate(plan.learning_rate, step, total_steps, plan.warmup_fraction);
      adamw_step(params, *grad_sum, state, lr, plan.adamw);
      ++step;
      history.step_losses.push_back(loss_sum * norm);
      epoch_loss += loss_sum;
      epoch_positions += positions;
    }
    history.epoch_losses.push_back(epoch_positions ? epoch_loss / static_cast<double>(epoch_positions) : 0.0);
  }
  return history;
}

TrainingExample mask_tokens(const std::vector<int>& tokens, std::size_t vocab_size, double mask_rate,
                            std::uint64_t seed, int epoch, std::size_t index) {
  CounterRng rng(derive_seed(derive_seed(seed, Stream::Masking, static_cast<std::uint64_t>(epoch)), Stream::Masking, index));
  TrainingExample ex{tokens, std::vector<int>(tokens.size(), kIgnoreLabel)};
  const std::size_t morpheme_ids = vocab_size - Vocabulary::kSpecialCount;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    // UNK counts as a morpheme position; the other specials never do.
    if (Vocabulary::is_special(tokens[t]) && tokens[t] != Vocabulary::kUnk) continue;
    if (uniform_real(rng) >= mask_rate) continue;
    ex.targets[t] = tokens[t];
    const double u = uniform_real(rng);
    if (u < 0.8) {
      ex.tokens[t] = Vocabulary::kMask;
    } else if (u < 0.9 && morpheme_ids > 0) {
      ex.tokens[t] = Vocabulary::kSpecialCount + static_cast<int>(uniform_index(rng, morpheme_ids));
    }
  }
  return ex;
}

PretrainResult pretrain(std::span<const IgtSentence> corpus, ModelConfig config, const TrainPlan& plan) {
  if (corpus.empty()) throw ValidationError("pretrain: empty corpus");
  if (corpus.size() < static_cast<std::size_t>(plan.batch_size))
    throw ValidationError("pretrain: corpus of " + std::to_string(corpus.size()) +
                          " sentences is smaller than one batch (" + std::to_string(plan.batch_size) + ")");
  if (!(plan.mask_rate > 0.0)) throw ValidationError("pretrain: mask rate must be positive (no loss positions)");

  PretrainResult result;
  auto& ck = result.checkpoint;
  ck.phase = Phase::Pretrain;
  ck.vocabulary = Vocabulary::build(corpus);
  config.vocab_size = static_cast<int>(ck.vocabulary.size());
  config.num_labels = 0;
  config.validate();
  ck.config = config;
  ck.seed = plan.seed;
  ck.params = init_parameters(config, plan.seed);

  std::vector<std::vector<int>> tokens;
  tokens.reserve(corpus.size());
  for (const auto& s : corpus)
    tokens.push_back(encode_tokens(s, ck.vocabulary, static_cast<std::size_t>(config.max_len)).token_ids);

  const auto vocab_size = ck.vocabulary.size();
  ExampleSource source = [&](int epoch, std::size_t index) {
    return mask_tokens(tokens[index], vocab_size, plan.mask_rate, plan.seed, epoch, index);
  };
  TokenLoss loss = [](std::span<const double> logits, int target) {
    return cross_entropy(logits, static_cast<std::size_t>(target));
  };
  result.history = train_loop(ck.params, config, Head::Mlm, tokens.size(), source, loss, plan);
  if (!plan.checkpoint_path.empty()) save_checkpoint(ck, plan.checkpoint_path);
  return result;
}

FinetuneResult finetune(const Checkpoint& pretrained, std::span<const IgtSentence> train,
                        std::span<const IgtSentence> validation, const Taxonomy& taxonomy, const TrainPlan& plan) {
  if (train.empty()) throw ValidationError("finetune: empty training subset");
  if (validation.empty()) throw ValidationError("finetune: empty validation set");
  if (pretrained.phase == Phase::Finetune) require_taxonomy(pretrained, taxonomy);
  const auto started = std::chrono::steady_clock::now();

  FinetuneResult result;
  auto& ck = result.checkpoint;
  ck.phase = Phase::Finetune;
  ck.config = pretrained.config;
  ck.config.num_labels = static_cast<int>(taxonomy.leaf_count());
  ck.vocabulary = pretrained.vocabulary;
  ck.taxonomy_hash = taxonomy.hash();
  ck.loss_kind = plan.loss_kind;
  ck.seed = plan.seed;
  ck.params = pretrained.params;
  ck.params.mlm_w.resize(ck.config.hidden_dim, 0);
  ck.params.mlm_b.resize(1, 0);
  init_classifier_head(ck.params, ck.config, plan.seed);

  std::vector<EncodedSequence> encoded;
  encoded.reserve(train.size());
  for (const auto& s : train)
    encoded.push_back(encode(s, ck.vocabulary, taxonomy, static_cast<std::size_t>(ck.config.max_len)));

  std::vector<double> weights = plan.level_weights ? *plan.level_weights
                                : plan.loss_kind == LossKind::CrossEntropy
                                    ? std::vector<double>{}
                                    : level_weights(plan.loss_kind, taxonomy.depth());
  ExampleSource source = [&](int, std::size_t index) {
    return TrainingExample{encoded[index].token_ids, encoded[index].label_ids};
  };
  TokenLoss loss = [&](std::span<const double> logits, int target) {
    if (weights.empty()) return cross_entropy(logits, static_cast<std::size_t>(target));
    return weighted_level_loss(logits, static_cast<std::size_t>(target), taxonomy, weights);
  };
  result.history = train_loop(ck.params, ck.config, Head::Classify, encoded.size(), source, loss, plan);

  auto report = evaluate(ck, validation, taxonomy, 5);
  auto& rec = result.record;
  rec.loss_kind = plan.loss_kind;
  rec.train_size = plan.train_size.value_or(train.size());
  rec.seed = plan.seed;
  rec.epochs = plan.epochs;
  rec.final_loss = result.history.epoch_losses.empty() ? 0.0 : result.history.epoch_losses.back();
  rec.accuracy = report.accuracy;
  rec.top5 = report.topk_accuracy;
  rec.epoch_losses = result.history.epoch_losses;
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (!plan.checkpoint_path.empty()) save_checkpoint(ck, plan.checkpoint_path);
  return result;
}

MaskedLmScore masked_lm_accuracy(const Checkpoint& checkpoint, std::span<const IgtSentence> corpus,
                                 double mask_rate, std::uint64_t seed) {
  if (checkpoint.params.mlm_w.cols() == 0) throw ValidationError("masked_lm_accuracy: checkpoint has no MLM head");
  std::map<int, std::size_t> counts;
  std::size_t positions = 0, hits = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto tokens = encode_tokens(corpus[i], checkpoint.vocabulary, static_cast<std::size_t>(checkpoint.config.max_len)).token_ids;
    auto ex = mask_tokens(tokens, checkpoint.vocabulary.size(), mask_rate, seed, 0, i);
    auto fwd = forward(checkpoint.params, checkpoint.config, ex.tokens, Head::Mlm, false, 0);
    for (std::size_t t = 0; t < ex.targets.size(); ++t) {
      if (ex.targets[t] < 0) continue;
      Eigen::Index best = 0;
      fwd.logits.row(static_cast<Eigen::Index>(t)).maxCoeff(&best);
      hits += best == ex.targets[t];
      ++counts[ex.targets[t]];
      ++positions;
    }
  }
  MaskedLmScore score;
  score.positions = positions;
  if (positions == 0) return score;
  std::size_t majority = 0;
  for (const auto& [_, c] : counts) majority = std::max(majority, c);
  score.accuracy = 100.0 * static_cast<double>(hits) / static_cast<double>(positions);
  score.majority_baseline = 100.0 * static_cast<double>(majority) / static_cast<double>(positions);
  return score;
}

namespace {

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

constexpr LossKind kAllKinds[] = {LossKind::CrossEntropy, LossKind::Taxonomic, LossKind::Harmonic};

}  // namespace

std::string ExperimentResults::results_table() const {
  std::ostringstream out;
  out << "size\tlossKind\tseed\taccuracy\ttop5\twallTimeSeconds\n";
  for (const auto& r : rows)
    out << r.size << '\t' << to_string(r.loss_kind) << '\t' << r.seed << '\t' << fixed(r.record.accuracy, 4) << '\t'
        << fixed(r.record.top5, 4) << '\t' << fixed(r.record.wall_seconds, 3) << '\n';
  return out.str();
}

namespace {

struct Cell {
  double accuracy = 0.0, top5 = 0.0;
  std::size_t runs = 0;
};

std::map<std::pair<std::size_t, int>, Cell> aggregate(const std::vector<ExperimentRow>& rows) {
  std::map<std::pair<std::size_t, int>, Cell> cells;
  for (const auto& r : rows) {
    auto& c = cells[{r.size, static_cast<int>(r.loss_kind)}];
    c.accuracy += r.record.accuracy;
    c.top5 += r.record.top5;
    ++c.runs;
  }
  for (auto& [_, c] : cells) {
    c.accuracy /= static_cast<double>(c.runs);
    c.top5 /= static_cast<double>(c.runs);
  }
  return cells;
}

}  // namespace

std::string ExperimentResults::aggregate_table() const {
  std::ostringstream out;
  out << "size\tlossKind\truns\taccuracy\ttop5\n";
  for (const auto& [key, c] : aggregate(rows))
    out << key.first << '\t' << to_string(static_cast<LossKind>(key.second)) << '\t' << c.runs << '\t'
        << fixed(c.accuracy, 4) << '\t' << fixed(c.top5, 4) << '\n';
  return out.str();
}

std::string ExperimentResults::summary_tables() const {
  const auto cells = aggregate(rows);
  std::vector<std::size_t> sizes;
  std::vector<LossKind> kinds;
  for (auto kind : kAllKinds)
    for (const auto& [key, _] : cells)
      if (key.second == static_cast<int>(kind) && std::find(kinds.begin(), kinds.end(), kind) == kinds.end())
        kinds.push_back(kind);
  for (const auto& [key, _] : cells)
    if (std::find(sizes.begin(), sizes.end(), key.first) == sizes.end()) sizes.push_back(key.first);

  std::ostringstream out;
  auto table = [&](const char* title, bool top5) {
    out << "## " << title << "\n\n| size |";
    for (auto k : kinds) out << ' ' << to_string(k) << " |";
    out << "\n|---|";
    for (std::size_t i = 0; i < kinds.size(); ++i) out << "---|";
    out << '\n';
    for (auto size : sizes) {
      // Best cell per row is bolded.
      double best = -1.0;
      for (auto k : kinds)
        if (auto it = cells.find({size, static_cast<int>(k)}); it != cells.end())
          best = std::max(best, top5 ? it->second.top5 : it->second.accuracy);
      out << "| " << size << " |";
      for (auto k : kinds) {
        auto it = cells.find({size, static_cast<int>(k)});
        if (it == cells.end()) {
          out << " - |";
          continue;
        }
        double v = top5 ? it->second.top5 : it->second.accuracy;
        auto text = fixed(v, 1);
        out << ' ' << (fixed(v, 1) == fixed(best, 1) ? "**" + text + "**" : text) << " |";
      }
      out << '\n';
    }
    out << '\n';
  };
  table("Average accuracy", false);
  table("Average top-5 accuracy", true);
  return out.str();
}

ExperimentResults run_experiment(const Checkpoint& pretrained, std::span<const IgtSentence> corpus,
                                 std::span<const IgtSentence> validation, const Taxonomy& taxonomy,
                                 std::span<const std::size_t> sizes, std::span<const LossKind> loss_kinds,
                                 std::span<const std::uint64_t> seeds, const TrainPlan& base, int jobs) {
  for (auto size : sizes)
    if (size == 0 || size > corpus.size())
      throw ValidationError("experiment: subset size " + std::to_string(size) + " is not within the corpus (" +
                            std::to_string(corpus.size()) + " sentences)");

  struct Job {
    std::size_t size;
    LossKind kind;
    std::uint64_t seed;
    const std::vector<IgtSentence>* subset;
  };
  // Subsets depend on (size, seed) only, so every loss kind sees the same data.
  std::map<std::pair<std::size_t, std::uint64_t>, std::vector<IgtSentence>> subsets;
  for (auto size : sizes)
    for (auto seed : seeds) subsets.try_emplace({size, seed}, sample_subset(corpus, size, seed));

  std::vector<Job> grid;
  for (auto size : sizes)
    for (auto kind : loss_kinds)
      for (auto seed : seeds) grid.push_back({size, kind, seed, &subsets.at({size, seed})});

  ExperimentResults results;
  results.rows.resize(grid.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < grid.size(); i = next++) {
      try {
        const auto& job = grid[i];
        TrainPlan plan = base;
        plan.phase = Phase::Finetune;
        plan.loss_kind = job.kind;
        plan.seed = job.seed;
        plan.train_size = job.size;
        plan.checkpoint_path.clear();
        auto run = finetune(pretrained, *job.subset, validation, taxonomy, plan);
        results.rows[i] = ExperimentRow{job.size, job.kind, job.seed, std::move(run.record)};
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = grid.size();
      }
    }
  };
  const int workers = std::clamp(jobs, 1, static_cast<int>(std::max<std::size_t>(grid.size(), 1)));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

}  // namespace taxogloss
