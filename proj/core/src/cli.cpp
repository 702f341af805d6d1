#include "taxogloss/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <thread>

#include <pthread.h>
#include <signal.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "taxogloss/annotate.hpp"
#include "taxogloss/checkpoint.hpp"
#include "taxogloss/corpus.hpp"
#include "taxogloss/error.hpp"
#include "taxogloss/evaluation.hpp"
#include "taxogloss/synthetic.hpp"
#include "taxogloss/taxonomy.hpp"
#include "taxogloss/training.hpp"

// After Eigen: <resolv.h>, pulled in by httplib, defines a macro that
// collides with Eigen parameter names.
#include <httplib.h>

namespace taxogloss {

namespace fs = std::filesystem;

std::string resolve_taxonomy_path(const std::string& name) {
  std::vector<fs::path> candidates{name, name + ".json"};
  std::vector<fs::path> dirs;
  if (const char* env = std::getenv("TAXOGLOSS_DATA_DIR"); env && *env) dirs.emplace_back(env);
  dirs.emplace_back(TAXOGLOSS_SOURCE_DATA_DIR);
  dirs.emplace_back(TAXOGLOSS_INSTALL_DATA_DIR);
  for (const auto& dir : dirs) {
    candidates.push_back(dir / name);
    candidates.push_back(dir / (name + ".json"));
  }
  for (const auto& c : candidates) {
    std::error_code ec;
    if (fs::is_regular_file(c, ec)) return c.string();
  }
  throw LookupError("taxonomy '" + name + "' not found (set TAXOGLOSS_DATA_DIR or pass a path)");
}

namespace {

void write_file(const std::string& path, const std::string& content) {
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path);
  f << content;
  if (!f.flush()) throw Error("write failed: " + path);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    auto b = item.find_first_not_of(" \t");
    auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ValidationError("empty item in list '" + text + "'");
    items.push_back(item.substr(b, e - b + 1));
  }
  if (items.empty()) throw ValidationError("empty list");
  return items;
}

std::uint64_t parse_u64(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    auto v = std::stoull(s, &used);
    if (used != s.size() || s.front() == '-') throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(std::string("invalid ") + what + " '" + s + "'");
  }
}

/// A labeled corpus, optionally with stems rewritten to their part of speech.
std::vector<IgtSentence> load_labeled(const std::string& path, const std::string& stem_map, const Taxonomy& taxonomy) {
  auto corpus = load_corpus(path);
  if (!stem_map.empty()) {
    std::ifstream f(stem_map, std::ios::binary);
    if (!f) throw Error("cannot read " + stem_map);
    std::stringstream ss;
    ss << f.rdbuf();
    apply_stem_map(corpus, parse_stem_map(ss.str()), taxonomy);
  }
  return corpus;
}

/// Options shared by the training subcommands.
struct PlanFlags {
  std::optional<int> epochs;
  std::optional<double> learning_rate;
  std::optional<int> batch_size;
  std::optional<int> grad_accum;
  std::optional<double> warmup;

  void add_to(CLI::App& app) {
    app.add_option("--epochs", epochs, "Training epochs")->check(CLI::PositiveNumber);
    app.add_option("--learning-rate", learning_rate, "Peak learning rate")->check(CLI::PositiveNumber);
    app.add_option("--batch-size", batch_size, "Sequences per micro-batch")->check(CLI::PositiveNumber);
    app.add_option("--grad-accum", grad_accum, "Micro-batches per optimizer step")->check(CLI::PositiveNumber);
    app.add_option("--warmup", warmup, "Warmup share of optimizer steps")->check(CLI::Range(0.0, 1.0));
  }
  void apply(TrainPlan& plan) const {
    if (epochs) plan.epochs = *epochs;
    if (learning_rate) plan.learning_rate = *learning_rate;
    if (batch_size) plan.batch_size = *batch_size;
    if (grad_accum) plan.grad_accum_steps = *grad_accum;
    if (warmup) plan.warmup_fraction = *warmup;
  }
};

struct Options {
  std::uint64_t seed = 0;
  std::string taxonomy = "uspanteko_taxonomy";
  std::string corpus, train, validation, checkpoint, output, stem_map, record, history;
  std::size_t count = 2000;
  std::string size = "full";
  std::string loss = "ce";
  std::string sizes = "10,100,500,1000,full";
  std::string losses = "ce,tax,harmonic";
  std::string seeds = "0";
  int jobs = 1;
  int k = 5;
  std::size_t limit = 100;
  ModelConfig model;
  double mask_rate = 0.15;
  PlanFlags plan;
  // serve
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string store = "annotations.jsonl";
  std::string export_path = "annotations.igt";
  std::string static_dir;
};

int cmd_validate(const Options& o, std::ostream& out) {
  auto taxonomy = Taxonomy::load(resolve_taxonomy_path(o.taxonomy));
  out << "taxonomy: depth " << taxonomy.depth() << ", " << taxonomy.leaf_count() << " leaves, hash "
      << taxonomy.hash().substr(0, 16) << "\n";
  if (o.corpus.empty()) return kExitOk;
  auto corpus = load_labeled(o.corpus, o.stem_map, taxonomy);
  std::size_t morphemes = 0;
  for (const auto& s : corpus) morphemes += s.morpheme_count();
  out << "corpus: " << corpus.size() << " sentences, " << morphemes << " morphemes\n";
  auto inventory = build_inventory(corpus);
  auto report = taxonomy.validate_labelset(inventory);
  out << "unused leaves: " << report.unused_leaves.size() << "\n";
  if (report.missing_from_taxonomy.empty()) return kExitOk;
  out << "glosses missing from taxonomy:";
  for (const auto& g : report.missing_from_taxonomy) out << " " << g;
  out << "\n";
  return kExitValidation;
}

int cmd_generate(const Options& o, std::ostream& out) {
  auto corpus = generate_synthetic(o.seed, o.count);
  auto text = serialize_corpus(corpus);
  if (o.output.empty() || o.output == "-") {
    out << text;
  } else {
    write_file(o.output, text);
    out << "wrote " << corpus.size() << " sentences to " << o.output << "\n";
  }
  return kExitOk;
}

nlohmann::json history_json(const TrainingHistory& h) {
  return {{"step_losses", h.step_losses}, {"epoch_losses", h.epoch_losses}};
}

int cmd_pretrain(const Options& o, std::ostream& out) {
  auto corpus = load_corpus(o.corpus, {.allow_unglossed = true});
  auto plan = TrainPlan::pretrain_defaults();
  plan.seed = o.seed;
  plan.mask_rate = o.mask_rate;
  o.plan.apply(plan);
  plan.checkpoint_path = o.output;
  auto result = pretrain(corpus, o.model, plan);
  if (!o.history.empty()) write_file(o.history, history_json(result.history).dump(2) + "\n");
  auto score = masked_lm_accuracy(result.checkpoint, corpus, plan.mask_rate, plan.seed);
  out << "pretrained " << plan.epochs << " epochs on " << corpus.size() << " sentences; final loss "
      << (result.history.epoch_losses.empty() ? 0.0 : result.history.epoch_losses.back()) << "; masked accuracy "
      << score.accuracy << "% (majority baseline " << score.majority_baseline << "%)\n";
  out << "checkpoint: " << o.output << "\n";
  return kExitOk;
}

int cmd_finetune(const Options& o, std::ostream& out) {
  auto taxonomy = Taxonomy::load(resolve_taxonomy_path(o.taxonomy));
  auto pretrained = load_checkpoint(o.checkpoint);
  auto train = load_labeled(o.train, o.stem_map, taxonomy);
  auto validation = load_labeled(o.validation, o.stem_map, taxonomy);
  auto plan = TrainPlan::finetune_defaults();
  plan.seed = o.seed;
  plan.loss_kind = parse_loss_kind(o.loss);
  o.plan.apply(plan);
  plan.checkpoint_path = o.output;
  if (o.size != "full") {
    auto n = static_cast<std::size_t>(parse_u64(o.size, "size"));
    train = sample_subset(train, n, o.seed);
    plan.train_size = n;
  }
  auto result = finetune(pretrained, train, validation, taxonomy, plan);
  if (!o.record.empty()) write_file(o.record, result.record.to_json().dump(2) + "\n");
  if (!o.history.empty()) write_file(o.history, history_json(result.history).dump(2) + "\n");
  char line[160];
  std::snprintf(line, sizeof line, "finetuned %s on %zu sentences: accuracy %.2f%%, top-5 %.2f%%\n",
                std::string(to_string(plan.loss_kind)).c_str(), train.size(), result.record.accuracy,
                result.record.top5);
  out << line << "checkpoint: " << o.output << "\n";
  return kExitOk;
}

int cmd_experiment(const Options& o, std::ostream& out) {
  auto taxonomy = Taxonomy::load(resolve_taxonomy_path(o.taxonomy));
  auto pretrained = load_checkpoint(o.checkpoint);
  auto corpus = load_labeled(o.corpus, o.stem_map, taxonomy);
  auto validation = load_labeled(o.validation, o.stem_map, taxonomy);
  std::vector<std::size_t> sizes;
  for (const auto& s : split_list(o.sizes))
    sizes.push_back(s == "full" ? corpus.size() : static_cast<std::size_t>(parse_u64(s, "size")));
  std::vector<LossKind> kinds;
  for (const auto& s : split_list(o.losses)) kinds.push_back(parse_loss_kind(s));
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_list(o.seeds)) seeds.push_back(parse_u64(s, "seed"));
  for (auto n : sizes)
    if (n == 0 || n > corpus.size())
      throw ValidationError("size " + std::to_string(n) + " outside 1.." + std::to_string(corpus.size()));

  auto plan = TrainPlan::finetune_defaults();
  o.plan.apply(plan);
  auto results = run_experiment(pretrained, corpus, validation, taxonomy, sizes, kinds, seeds, plan, o.jobs);
  fs::path dir = o.output.empty() ? fs::path(".") : fs::path(o.output);
  write_file((dir / "results.tsv").string(), results.results_table());
  write_file((dir / "aggregate.tsv").string(), results.aggregate_table());
  write_file((dir / "tables.md").string(), results.summary_tables());
  out << results.rows.size() << " runs; results in " << dir.string() << "\n" << results.summary_tables();
  return kExitOk;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
  auto taxonomy = Taxonomy::load(resolve_taxonomy_path(o.taxonomy));
  auto checkpoint = load_checkpoint(o.checkpoint);
  auto corpus = load_labeled(o.corpus, o.stem_map, taxonomy);
  auto report = evaluate(checkpoint, corpus, taxonomy, o.k);
  if (!o.output.empty()) write_file(o.output, report.to_json().dump(2) + "\n");
  char line[160];
  std::snprintf(line, sizeof line, "tokens %zu: accuracy %.2f%%, top-%d %.2f%%\n", report.token_count,
                report.accuracy, report.k, report.topk_accuracy);
  out << line;
  return kExitOk;
}

int cmd_dump_topk(const Options& o, std::ostream& out) {
  auto taxonomy = Taxonomy::load(resolve_taxonomy_path(o.taxonomy));
  auto checkpoint = load_checkpoint(o.checkpoint);
  auto corpus = load_labeled(o.corpus, o.stem_map, taxonomy);
  auto text = topk_dump(checkpoint, corpus, taxonomy, o.k, o.limit);
  if (o.output.empty() || o.output == "-")
    out << text;
  else
    write_file(o.output, text);
  return kExitOk;
}

int cmd_serve(const Options& o, std::ostream& out) {
  auto taxonomy = Taxonomy::load(resolve_taxonomy_path(o.taxonomy));
  auto suggester = std::make_shared<const Suggester>(load_checkpoint(o.checkpoint), taxonomy);
  auto corpus = load_corpus(o.corpus, {.allow_unglossed = true});
  AnnotationService service(std::move(corpus), suggester, o.store, o.k);
  httplib::Server server;
  register_routes(server, service, {.export_path = o.export_path, .static_dir = o.static_dir});
  // Port 0 picks a free port; the banner below reports the one bound.
  const int port = o.port == 0 ? server.bind_to_any_port(o.host) : (server.bind_to_port(o.host, o.port) ? o.port : -1);
  if (port <= 0) throw Error("cannot bind " + o.host + ":" + std::to_string(o.port));

  // SIGINT/SIGTERM stop the server cleanly (exit 0). The signals are blocked
  // before any server thread exists and collected by a dedicated thread.
  sigset_t stop_signals, previous;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, &previous);
  std::atomic<bool> signalled{false};
  std::thread watcher([&] {
    int sig = 0;
    sigwait(&stop_signals, &sig);
    signalled = true;
    server.stop();
  });
  out << "serving on http://" << o.host << ":" << port << " (journal " << o.store << ")" << std::endl;
  const bool clean = server.listen_after_bind();
  if (!signalled) pthread_kill(watcher.native_handle(), SIGTERM);
  watcher.join();
  pthread_sigmask(SIG_SETMASK, &previous, nullptr);
  if (!clean) throw Error("server stopped unexpectedly");
  out << "stopped" << std::endl;
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"taxogloss: taxonomy-aware morpheme glossing"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML config file; flags override its values");
  Options o;

  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "Root random seed")->capture_default_str(); };
  auto add_taxonomy = [&](CLI::App* c) {
    c->add_option("--taxonomy", o.taxonomy, "Taxonomy file or bundled name")->capture_default_str();
  };
  auto add_stems = [&](CLI::App* c) {
    c->add_option("--stem-map", o.stem_map, "TAB-separated stem -> part-of-speech map")->check(CLI::ExistingFile);
  };
  auto add_checkpoint = [&](CLI::App* c) {
    c->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  };

  auto* validate = app.add_subcommand("validate", "Check a taxonomy and optionally a corpus against it");
  add_taxonomy(validate);
  validate->add_option("--corpus", o.corpus, "Glossed corpus")->check(CLI::ExistingFile);
  add_stems(validate);

  auto* generate = app.add_subcommand("generate", "Write a synthetic glossed corpus");
  add_seed(generate);
  generate->add_option("--count", o.count, "Number of sentences")->capture_default_str()->check(CLI::PositiveNumber);
  generate->add_option("--output,-o", o.output, "Output corpus (stdout when omitted)");

  auto* pre = app.add_subcommand("pretrain", "Masked-language-model pretraining");
  add_seed(pre);
  pre->add_option("--corpus", o.corpus, "Training corpus (gloss lines optional)")->required()->check(CLI::ExistingFile);
  pre->add_option("--output,-o", o.output, "Checkpoint to write")->required();
  pre->add_option("--history", o.history, "Write the loss curve as JSON");
  pre->add_option("--mask-rate", o.mask_rate, "Share of morphemes selected per pass")->check(CLI::Range(0.0, 1.0));
  pre->add_option("--layers", o.model.layers, "Encoder layers")->capture_default_str()->check(CLI::PositiveNumber);
  pre->add_option("--hidden-dim", o.model.hidden_dim, "Hidden size")->capture_default_str()->check(CLI::PositiveNumber);
  pre->add_option("--heads", o.model.heads, "Attention heads")->capture_default_str()->check(CLI::PositiveNumber);
  pre->add_option("--ff-dim", o.model.ff_dim, "Feed-forward size")->capture_default_str()->check(CLI::PositiveNumber);
  pre->add_option("--max-len", o.model.max_len, "Maximum sequence length")->capture_default_str()->check(CLI::PositiveNumber);
  pre->add_option("--dropout", o.model.dropout, "Dropout rate")->capture_default_str()->check(CLI::Range(0.0, 0.99));
  o.plan.add_to(*pre);

  auto* fine = app.add_subcommand("finetune", "Finetune a pretrained checkpoint as a gloss classifier");
  add_seed(fine);
  add_taxonomy(fine);
  add_checkpoint(fine);
  add_stems(fine);
  fine->add_option("--train", o.train, "Labeled training corpus")->required()->check(CLI::ExistingFile);
  fine->add_option("--validation", o.validation, "Validation corpus")->required()->check(CLI::ExistingFile);
  fine->add_option("--loss", o.loss, "ce, tax or harmonic")->capture_default_str();
  fine->add_option("--size", o.size, "Training subset size or 'full'")->capture_default_str();
  fine->add_option("--output,-o", o.output, "Checkpoint to write")->required();
  fine->add_option("--record", o.record, "Write the run record as JSON");
  fine->add_option("--history", o.history, "Write the loss curve as JSON");
  o.plan.add_to(*fine);

  auto* exp = app.add_subcommand("experiment", "Finetune a grid of sizes x losses x seeds");
  add_taxonomy(exp);
  add_checkpoint(exp);
  add_stems(exp);
  exp->add_option("--corpus", o.corpus, "Labeled pool to sample subsets from")->required()->check(CLI::ExistingFile);
  exp->add_option("--validation", o.validation, "Validation corpus")->required()->check(CLI::ExistingFile);
  exp->add_option("--sizes", o.sizes, "Comma-separated subset sizes ('full' = whole pool)")->capture_default_str();
  exp->add_option("--losses", o.losses, "Comma-separated loss kinds")->capture_default_str();
  exp->add_option("--seeds", o.seeds, "Comma-separated seeds")->capture_default_str();
  exp->add_option("--jobs,-j", o.jobs, "Grid cells trained concurrently")->capture_default_str()->check(CLI::PositiveNumber);
  exp->add_option("--output-dir,-o", o.output, "Directory for results.tsv, aggregate.tsv, tables.md");
  o.plan.add_to(*exp);

  auto* eval = app.add_subcommand("evaluate", "Accuracy and top-k accuracy of a finetuned checkpoint");
  add_taxonomy(eval);
  add_checkpoint(eval);
  add_stems(eval);
  eval->add_option("--corpus", o.corpus, "Labeled corpus")->required()->check(CLI::ExistingFile);
  eval->add_option("--k", o.k, "Top-k cutoff")->capture_default_str()->check(CLI::PositiveNumber);
  eval->add_option("--output,-o", o.output, "Write the report as JSON");

  auto* dump = app.add_subcommand("dump-topk", "Per-morpheme top-k predictions with taxonomic distances");
  add_taxonomy(dump);
  add_checkpoint(dump);
  add_stems(dump);
  dump->add_option("--corpus", o.corpus, "Labeled corpus")->required()->check(CLI::ExistingFile);
  dump->add_option("--k", o.k, "Candidates per morpheme")->capture_default_str()->check(CLI::PositiveNumber);
  dump->add_option("--limit", o.limit, "Maximum rows")->capture_default_str();
  dump->add_option("--output,-o", o.output, "Output file (stdout when omitted)");

  auto* serve = app.add_subcommand("serve", "Annotation service over HTTP");
  add_taxonomy(serve);
  add_checkpoint(serve);
  serve->add_option("--corpus", o.corpus, "Sentences to annotate")->required()->check(CLI::ExistingFile);
  serve->add_option("--host", o.host, "Listen address")->capture_default_str();
  serve->add_option("--port", o.port, "Listen port (0 picks a free one)")->capture_default_str()->check(CLI::Range(0, 65535));
  serve->add_option("--store", o.store, "Annotation journal (JSON lines)")->capture_default_str();
  serve->add_option("--export", o.export_path, "Target of POST /api/export")->capture_default_str();
  serve->add_option("--static-dir", o.static_dir, "Directory served at /")->check(CLI::ExistingDirectory);
  serve->add_option("--k", o.k, "Default suggestions per morpheme")->capture_default_str()->check(CLI::PositiveNumber);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (validate->parsed()) return cmd_validate(o, out);
    if (generate->parsed()) return cmd_generate(o, out);
    if (pre->parsed()) return cmd_pretrain(o, out);
    if (fine->parsed()) return cmd_finetune(o, out);
    if (exp->parsed()) return cmd_experiment(o, out);
    if (eval->parsed()) return cmd_evaluate(o, out);
    if (dump->parsed()) return cmd_dump_topk(o, out);
    if (serve->parsed()) return cmd_serve(o, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const LookupError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace taxogloss
