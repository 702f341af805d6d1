#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "taxogloss/cli.hpp"
#include "taxogloss/corpus.hpp"
#include "taxogloss/synthetic.hpp"
#include "test_support.hpp"

namespace taxogloss {
namespace {

struct CliRun {
  int code;
  std::string out, err;
};

CliRun run(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const std::string& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

const std::vector<std::string> kTinyModel{"--layers", "1", "--hidden-dim", "8", "--heads", "2", "--ff-dim", "16",
                                          "--max-len", "48", "--batch-size", "4", "--grad-accum", "1"};

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(run({"generate", "--count", "zero"}).code, kExitUsage);
  EXPECT_EQ(run({"finetune"}).code, kExitUsage);  // required options missing
  auto help = run({"--help"});
  EXPECT_EQ(help.code, kExitOk);
  for (const char* sub : {"validate", "generate", "pretrain", "finetune", "experiment", "evaluate", "dump-topk", "serve"})
    EXPECT_NE(help.out.find(sub), std::string::npos) << sub;
}

TEST(Cli, ValidateBundledTaxonomy) {
  auto r = run({"validate"});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("taxonomy: depth 5, 65 leaves"), std::string::npos) << r.out;
  EXPECT_EQ(run({"validate", "--taxonomy", testing::bundled_taxonomy_path()}).out, r.out);
}

TEST(Cli, ValidateReportsUnknownGlosses) {
  testing::TempDir dir("cli-validate");
  write(dir.file("ok.igt"), "a-b c\nE1S-VT NOM\n");
  auto ok = run({"validate", "--corpus", dir.file("ok.igt")});
  EXPECT_EQ(ok.code, kExitOk) << ok.err;
  EXPECT_NE(ok.out.find("corpus: 1 sentences, 3 morphemes"), std::string::npos) << ok.out;
  EXPECT_NE(ok.out.find("unused leaves: 62"), std::string::npos) << ok.out;

  write(dir.file("bad.igt"), "a-b c\nE1S-ZZZ NOM\n");
  auto bad = run({"validate", "--corpus", dir.file("bad.igt")});
  EXPECT_EQ(bad.code, kExitValidation);
  EXPECT_NE(bad.out.find("ZZZ"), std::string::npos) << bad.out;

  write(dir.file("broken.igt"), "a-b c\nE1S NOM\n");
  auto broken = run({"validate", "--corpus", dir.file("broken.igt")});
  EXPECT_EQ(broken.code, kExitValidation);
  EXPECT_NE(broken.err.find("error:"), std::string::npos);

  write(dir.file("tax.json"), "{\"name\": ");
  EXPECT_EQ(run({"validate", "--taxonomy", dir.file("tax.json")}).code, kExitValidation);
  EXPECT_NE(run({"validate", "--taxonomy", "no-such-taxonomy"}).code, kExitOk);
}

TEST(Cli, GenerateIsDeterministic) {
  testing::TempDir dir("cli-generate");
  auto a = run({"generate", "--seed", "4", "--count", "25"});
  auto b = run({"generate", "--seed", "4", "--count", "25"});
  auto c = run({"generate", "--seed", "5", "--count", "25"});
  ASSERT_EQ(a.code, kExitOk);
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out, c.out);
  EXPECT_EQ(parse_corpus(a.out), generate_synthetic(4, 25));
  EXPECT_EQ(run({"generate", "--seed", "4", "--count", "25", "-o", dir.file("g.igt")}).code, kExitOk);
  EXPECT_EQ(read(dir.file("g.igt")), a.out);
}

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir("cli-pipeline");
    ASSERT_EQ(run({"generate", "--seed", "1", "--count", "40", "-o", file("all.igt")}).code, kExitOk);
    auto all = load_corpus(file("all.igt"));
    save_corpus(file("train.igt"), std::vector(all.begin(), all.begin() + 30));
    save_corpus(file("val.igt"), std::vector(all.begin() + 30, all.end()));
    auto r = run(concat({"pretrain", "--corpus", file("train.igt"), "-o", file("pre.ckpt"), "--epochs", "2"}, kTinyModel));
    ASSERT_EQ(r.code, kExitOk) << r.err;
  }
  static void TearDownTestSuite() { delete dir_; }
  static std::string file(const std::string& name) { return dir_->file(name); }

  static CliRun finetune(const std::string& tag, std::vector<std::string> extra = {}) {
    return run(concat({"finetune", "--checkpoint", file("pre.ckpt"), "--train", file("train.igt"), "--validation",
                       file("val.igt"), "--loss", "harmonic", "--size", "10", "--seed", "3", "--epochs", "2",
                       "--batch-size", "4", "--grad-accum", "1", "-o", file(tag + ".ckpt"), "--record",
                       file(tag + ".json")},
                      extra));
  }

  static testing::TempDir* dir_;
};
testing::TempDir* CliPipeline::dir_ = nullptr;

TEST_F(CliPipeline, PretrainReportsMaskedAccuracy) {
  auto r = run(concat({"pretrain", "--corpus", file("train.igt"), "-o", file("p2.ckpt"), "--epochs", "1"}, kTinyModel));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("majority baseline"), std::string::npos) << r.out;
  EXPECT_EQ(read(file("p2.ckpt")).rfind("TAXOGLOSS-CKPT 1\n", 0), 0u);
}

TEST_F(CliPipeline, RerunsAreByteIdentical) {
  ASSERT_EQ(finetune("a").code, kExitOk);
  ASSERT_EQ(finetune("b").code, kExitOk);
  EXPECT_EQ(read(file("a.ckpt")), read(file("b.ckpt")));
  auto ra = nlohmann::json::parse(read(file("a.json")));
  auto rb = nlohmann::json::parse(read(file("b.json")));
  ra.erase("metadata");
  rb.erase("metadata");
  EXPECT_EQ(ra, rb);
  EXPECT_EQ(ra["train_size"], 10);

  for (const char* out : {"e1.json", "e2.json"})
    ASSERT_EQ(run({"evaluate", "--checkpoint", file("a.ckpt"), "--corpus", file("val.igt"), "-o", file(out)}).code,
              kExitOk);
  EXPECT_EQ(read(file("e1.json")), read(file("e2.json")));
  auto d1 = run({"dump-topk", "--checkpoint", file("a.ckpt"), "--corpus", file("val.igt"), "--limit", "5"});
  auto d2 = run({"dump-topk", "--checkpoint", file("a.ckpt"), "--corpus", file("val.igt"), "--limit", "5"});
  ASSERT_EQ(d1.code, kExitOk) << d1.err;
  EXPECT_EQ(d1.out, d2.out);
}

TEST_F(CliPipeline, ConfigFileSitsBetweenFlagsAndDefaults) {
  // The file is given before the subcommand; each subcommand reads its own section.
  write(file("plan.toml"), "[finetune]\nepochs = 3\nloss = \"tax\"\nsize = \"8\"\n");
  auto from_file = run({"--config", file("plan.toml"), "finetune", "--checkpoint", file("pre.ckpt"), "--train",
                        file("train.igt"), "--validation", file("val.igt"), "--batch-size", "4", "-o",
                        file("cfg.ckpt"), "--record", file("cfg.json")});
  ASSERT_EQ(from_file.code, kExitOk) << from_file.err;
  auto record = nlohmann::json::parse(read(file("cfg.json")));
  EXPECT_EQ(record["epochs"], 3);
  EXPECT_EQ(record["loss_kind"], "tax");
  EXPECT_EQ(record["train_size"], 8);
  // An explicit flag beats the file; unset keys keep their defaults.
  write(file("plan2.toml"), "[finetune]\nepochs = 7\n");
  auto r = run({"--config", file("plan2.toml"), "finetune", "--checkpoint", file("pre.ckpt"), "--train",
                file("train.igt"), "--validation", file("val.igt"), "--size", "8", "--epochs", "1", "--batch-size",
                "4", "-o", file("flag.ckpt"), "--record", file("flag.json")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  record = nlohmann::json::parse(read(file("flag.json")));
  EXPECT_EQ(record["epochs"], 1);
  EXPECT_EQ(record["loss_kind"], "ce");
  EXPECT_EQ(run({"--config", file("absent.toml"), "validate"}).code, kExitUsage);
}

TEST_F(CliPipeline, ExperimentWritesTables) {
  auto r = run({"experiment", "--checkpoint", file("pre.ckpt"), "--corpus", file("train.igt"), "--validation",
                file("val.igt"), "--sizes", "5,full", "--losses", "ce,tax", "--seeds", "0,1", "--epochs", "1",
                "--batch-size", "4", "-o", dir_->file("")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  auto results = read(file("results.tsv"));
  EXPECT_EQ(std::count(results.begin(), results.end(), '\n'), 1 + 2 * 2 * 2);
  EXPECT_NE(results.find("\n30\ttax\t1\t"), std::string::npos) << results;
  EXPECT_NE(read(file("tables.md")).find("| size | ce | tax |"), std::string::npos);
  EXPECT_NE(read(file("aggregate.tsv")).find("5\tce\t2\t"), std::string::npos);
}

TEST_F(CliPipeline, SemanticErrorsExitThreeRuntimeFour) {
  // Evaluating a pretrained (unlabeled-head) checkpoint is a validation error.
  EXPECT_EQ(run({"evaluate", "--checkpoint", file("pre.ckpt"), "--corpus", file("val.igt")}).code, kExitValidation);
  EXPECT_EQ(run({"finetune", "--checkpoint", file("pre.ckpt"), "--train", file("train.igt"), "--validation",
                 file("val.igt"), "--loss", "hinge", "-o", file("x.ckpt")})
                .code,
            kExitValidation);
  EXPECT_EQ(run({"finetune", "--checkpoint", file("pre.ckpt"), "--train", file("train.igt"), "--validation",
                 file("val.igt"), "--size", "31", "-o", file("x.ckpt")})
                .code,
            kExitValidation);
  auto too_big = run({"experiment", "--checkpoint", file("pre.ckpt"), "--corpus", file("train.igt"), "--validation",
                      file("val.igt"), "--sizes", "31", "--epochs", "1", "-o", dir_->file("")});
  EXPECT_EQ(too_big.code, kExitValidation);
  write(file("junk.ckpt"), "not a checkpoint");
  EXPECT_NE(run({"evaluate", "--checkpoint", file("junk.ckpt"), "--corpus", file("val.igt")}).code, kExitOk);
  // The output path names an existing directory.
  auto unwritable = run({"generate", "--count", "2", "-o", dir_->file("")});
  EXPECT_EQ(unwritable.code, kExitRuntime) << unwritable.err;
}

}  // namespace
}  // namespace taxogloss
