// Microbenchmarks for the hot paths: per-token losses on the bundled
// 65-leaf taxonomy and the model's forward/backward pass.
#include <benchmark/benchmark.h>

#include <vector>

#include "taxogloss/corpus.hpp"
#include "taxogloss/losses.hpp"
#include "taxogloss/model.hpp"
#include "taxogloss/rng.hpp"
#include "taxogloss/synthetic.hpp"
#include "taxogloss/taxonomy.hpp"

namespace {

using namespace taxogloss;

const Taxonomy& taxonomy() {
  static const Taxonomy t = Taxonomy::load(TAXOGLOSS_BENCH_DATA_DIR "/uspanteko_taxonomy.json");
  return t;
}

std::vector<double> logits(std::size_t n, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = normal(rng, 0.0, 2.0);
  return v;
}

void BM_TokenLoss(benchmark::State& state) {
  const auto kind = static_cast<LossKind>(state.range(0));
  const auto& t = taxonomy();
  auto l = logits(t.leaf_count(), 1);
  std::size_t target = 0;
  for (auto _ : state) {
    auto r = token_loss(kind, l, target, t);
    benchmark::DoNotOptimize(r.value);
    target = (target + 7) % t.leaf_count();
  }
  state.SetLabel(std::string(to_string(kind)));
}
BENCHMARK(BM_TokenLoss)
    ->Arg(static_cast<int>(LossKind::CrossEntropy))
    ->Arg(static_cast<int>(LossKind::Taxonomic))
    ->Arg(static_cast<int>(LossKind::Harmonic));

void BM_BatchLoss(benchmark::State& state) {
  const auto kind = static_cast<LossKind>(state.range(0));
  const auto& t = taxonomy();
  const Eigen::Index rows = 2048;
  Eigen::MatrixXd m(rows, static_cast<Eigen::Index>(t.leaf_count()));
  CounterRng rng(2);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng, 0.0, 2.0);
  std::vector<int> targets(static_cast<std::size_t>(rows));
  for (auto& x : targets) x = static_cast<int>(uniform_index(rng, t.leaf_count()));
  std::vector<bool> mask(static_cast<std::size_t>(rows), true);
  for (auto _ : state) {
    auto r = batch_loss(m, targets, mask, kind, t);
    benchmark::DoNotOptimize(r.value);
  }
  state.SetItemsProcessed(state.iterations() * rows);
  state.SetLabel(std::string(to_string(kind)));
}
BENCHMARK(BM_BatchLoss)
    ->Arg(static_cast<int>(LossKind::CrossEntropy))
    ->Arg(static_cast<int>(LossKind::Taxonomic))
    ->Arg(static_cast<int>(LossKind::Harmonic))
    ->Unit(benchmark::kMillisecond);

/// A micro-batch of synthetic sentences through the default-size model.
struct ModelFixture {
  ModelConfig config;
  ModelParameters params;
  std::vector<std::vector<int>> batch;

  explicit ModelFixture(std::size_t sentences) {
    auto corpus = generate_synthetic(0, sentences);
    auto vocab = Vocabulary::build(corpus);
    config.vocab_size = static_cast<int>(vocab.size());
    config.num_labels = static_cast<int>(taxonomy().leaf_count());
    params = init_parameters(config, 0);
    init_classifier_head(params, config, 0);
    for (const auto& s : corpus) batch.push_back(encode(s, vocab, taxonomy()).token_ids);
  }
};

void BM_Forward(benchmark::State& state) {
  ModelFixture f(static_cast<std::size_t>(state.range(0)));
  std::vector<std::uint64_t> keys(f.batch.size(), 1);
  std::int64_t tokens = 0;
  for (const auto& s : f.batch) tokens += static_cast<std::int64_t>(s.size());
  for (auto _ : state) {
    auto r = forward(f.params, f.config, f.batch, Head::Classify, true, keys);
    benchmark::DoNotOptimize(r.logits.data());
  }
  state.SetItemsProcessed(state.iterations() * tokens);
}
BENCHMARK(BM_Forward)->Arg(8)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  ModelFixture f(static_cast<std::size_t>(state.range(0)));
  std::vector<std::uint64_t> keys(f.batch.size(), 1);
  std::int64_t tokens = 0;
  for (const auto& s : f.batch) tokens += static_cast<std::int64_t>(s.size());
  for (auto _ : state) {
    auto r = forward(f.params, f.config, f.batch, Head::Classify, true, keys);
    Eigen::MatrixXd upstream = Eigen::MatrixXd::Constant(r.logits.rows(), r.logits.cols(), 1e-3);
    auto g = backward(f.params, f.config, r.cache, upstream);
    benchmark::DoNotOptimize(g.cls_w.data());
  }
  state.SetItemsProcessed(state.iterations() * tokens);
}
BENCHMARK(BM_ForwardBackward)->Arg(8)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

// benchmark_main from the system package ships as LTO bytecode; define main here.
BENCHMARK_MAIN();
