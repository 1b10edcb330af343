#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include <gtest/gtest.h>
#include <json.hpp>

#include "distil/corpus.hpp"
#include "distil/error.hpp"
#include "distil/evaluation.hpp"
#include "distil/experiment.hpp"
#include "support.hpp"

namespace fs = std::filesystem;

namespace distil {
namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

// ------------------------------------------------------------------ config --

TEST(ConfigTest, ParsesKnownKeysAndResolvesPaths) {
  const ExperimentConfig c = parse_config(
      R"({"corpus":"data/c.jsonl","vocab":"/abs/v.txt","seed":7,"regimen":"stagewise_rl_first",
          "alpha":2,"beta":0,"gamma":0.5,"lstm_hidden":16,"precision":"float32","labeled_per_class":5})",
      "/base");
  EXPECT_EQ(c.corpus, fs::path("/base/data/c.jsonl"));
  EXPECT_EQ(c.vocab, fs::path("/abs/v.txt"));
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.regimen, Regimen::stagewise_rl_first);
  EXPECT_EQ(c.weights, (LossWeights{2, 0, 0.5}));
  EXPECT_EQ(c.lstm_hidden, 16u);
  EXPECT_EQ(c.embed_dim, 300u);
  EXPECT_EQ(c.precision, Precision::float32);
  EXPECT_EQ(c.labeled_per_class, 5u);
}

TEST(ConfigTest, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_config(R"({"seed":1,"learning_rate":0.1})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"seed":-1})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"seed":1,"regimen":"both"})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"seed":1,"precision":"half"})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"seed":1,"alpha":"ten"})"), ConfigError);
  EXPECT_THROW(parse_config("[1,2]"), ConfigError);
  EXPECT_THROW(parse_config("{"), ConfigError);
}

class ConfigFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    std::ofstream(dir / "c.jsonl") << "";
    std::ofstream(dir / "v.txt") << "";
    std::ofstream(dir / "t.jsonl") << "";
  }
  ExperimentConfig base() const {
    return parse_config(R"({"corpus":"c.jsonl","vocab":"v.txt","teacher":"t.jsonl","output_dir":"out","seed":3})",
                        dir.path());
  }
  testing::TempDir dir;
};

TEST_F(ConfigFiles, SeedIsMandatory) {
  ExperimentConfig c = base();
  EXPECT_NO_THROW(c.validate());
  c.seed.reset();
  try {
    c.validate();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("seed"), std::string::npos);
  }
}

TEST_F(ConfigFiles, ValidationRules) {
  ExperimentConfig c = base();
  c.hard_targets = true;
  c.regimen = Regimen::distil_then_finetune;
  EXPECT_THROW(c.validate(), ConfigError);
  c = base();
  c.teacher.clear();
  EXPECT_THROW(c.validate(), ConfigError);
  c.weights = LossWeights{10, 0, 0};
  EXPECT_TRUE(c.no_distillation());
  EXPECT_NO_THROW(c.validate());
  c = base();
  c.corpus = dir / "missing.jsonl";
  EXPECT_THROW(c.validate(), ConfigError);
  c = base();
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST_F(ConfigFiles, HashIgnoresOutputDirOnly) {
  ExperimentConfig a = base(), b = base();
  b.output_dir = dir / "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b.seed = 4;
  EXPECT_NE(config_hash(a), config_hash(b));
  b = base();
  b.weights.gamma = 0.5;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST_F(ConfigFiles, DumpParsesBackToTheSameConfig) {
  const ExperimentConfig a = base();
  const ExperimentConfig b = parse_config(dump_config(a), dir.path());
  EXPECT_EQ(dump_config(a), dump_config(b));
  EXPECT_EQ(config_hash(a), config_hash(b));
}

// ---------------------------------------------------------------- tokenize --

TEST(TokenizeCommand, WorkedExampleAndRerunIsByteIdentical) {
  testing::TempDir dir;
  Vocab({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "mobile", "##note", "to", "ms", ".", "jacobs", "##on", "and", "ferrer"})
      .save(dir / "vocab.txt");
  std::ofstream(dir / "in.jsonl") << R"({"id":"a","text":"mobilenote to ms. jacobson and ms. ferrer","label":null})"
                                  << "\n"
                                  << R"({"id":"b","text":"","label":1})" << "\n"
                                  << R"({"id":"c","text":"zzz to","label":0})" << "\n";
  const TokenizeStats s = cmd_tokenize(dir / "in.jsonl", dir / "vocab.txt", 128, dir / "out1.jsonl");
  EXPECT_EQ(s.instances, 3u);
  EXPECT_EQ(s.pieces, 13u);
  EXPECT_EQ(s.unknown, 1u);
  EXPECT_EQ(s.truncated, 0u);
  EXPECT_EQ(s.max_length, 13u);
  const auto lines = read_lines(dir / "out1.jsonl");
  ASSERT_EQ(lines.size(), 3u);
  const auto first = nlohmann::json::parse(lines[0]);
  EXPECT_EQ(first["tokens"], "[CLS] mobile ##note to ms . jacobs ##on and ms . ferrer [SEP]");
  EXPECT_EQ(first["ids"], (std::vector<std::size_t>{2, 4, 5, 6, 7, 8, 9, 10, 11, 7, 8, 12, 3}));
  const auto empty = nlohmann::json::parse(lines[1]);
  EXPECT_EQ(empty["length"], 2);
  EXPECT_EQ(empty["tokens"], "[CLS] [SEP]");

  cmd_tokenize(dir / "in.jsonl", dir / "vocab.txt", 128, dir / "out2.jsonl");
  EXPECT_EQ(read_file(dir / "out1.jsonl"), read_file(dir / "out2.jsonl"));
}

TEST(TokenizeCommand, CountsTruncation) {
  testing::TempDir dir;
  testing::micro_vocab(8).save(dir / "vocab.txt");
  std::ofstream(dir / "in.jsonl") << R"({"id":"a","text":"w0 w1 w2 w3 w0 w1","label":null})" << "\n";
  const TokenizeStats s = cmd_tokenize(dir / "in.jsonl", dir / "vocab.txt", 5, dir / "out.jsonl");
  EXPECT_EQ(s.truncated, 1u);
  EXPECT_EQ(s.max_length, 5u);
}

// -------------------------------------------------------- pipeline fixture --

// A small synthetic task taken through split and teacher-oracle once.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir();
    SyntheticTaskOptions synth;
    synth.num_classes = 2;
    synth.keywords_per_class = 8;
    synth.filler_words = 40;
    synth.seed = 5;
    cmd_synth(synth, 240, 100, dir_->path());
    SplitOptions split;
    split.pool = *dir_ / "pool.jsonl";
    split.output = *dir_ / "corpus.jsonl";
    split.num_classes = 2;
    split.labeled_per_class = 10;
    split.seed = 1;
    cmd_split(split);
    TeacherOracleOptions oracle;
    oracle.corpus = *dir_ / "corpus.jsonl";
    oracle.vocab = *dir_ / "vocab.txt";
    oracle.output = *dir_ / "teacher.jsonl";
    oracle.fit = *dir_ / "pool.jsonl";
    oracle.settings.num_classes = 0;
    oracle.settings.hidden_dim = 8;
    oracle.max_len = 24;
    cmd_teacher_oracle(oracle);
    oracle.include_labeled = true;
    oracle.output = *dir_ / "teacher_all.jsonl";
    cmd_teacher_oracle(oracle);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  static fs::path path(const std::string& name) { return *dir_ / name; }

  static ExperimentConfig config(const std::string& out, const std::string& extra = "",
                                 const std::string& teacher = "teacher.jsonl") {
    const std::string text = R"({"corpus":"corpus.jsonl","vocab":"vocab.txt","teacher":")" + teacher +
                             R"(","test":"test.jsonl","output_dir":")" +
                             out + R"(","seed":11,"embed_dim":8,"lstm_hidden":6,"max_len":24,)"
                                   R"("batch_size":16,"max_epochs":2)" +
                             extra + "}";
    return parse_config(text, dir_->path());
  }

  static testing::TempDir* dir_;
};

testing::TempDir* Pipeline::dir_ = nullptr;

TEST_F(Pipeline, SplitAndTeacherFilesAreConsistent) {
  const Corpus c = load_corpus(path("corpus.jsonl"));
  EXPECT_EQ(c.labeled.size(), 20u);
  EXPECT_EQ(c.unlabeled.size(), 220u);
  const auto records = import_records(path("teacher.jsonl"));
  ASSERT_EQ(records.size(), c.unlabeled.size());
  for (std::size_t i = 0; i < records.size(); ++i) EXPECT_EQ(records[i].id, c.unlabeled[i].id);
  EXPECT_EQ(records[0].hidden.size(), 8u);
}

TEST_F(Pipeline, OracleTemperatureExtremes) {
  TeacherOracleOptions oracle;
  oracle.corpus = path("corpus.jsonl");
  oracle.vocab = path("vocab.txt");
  oracle.fit = path("pool.jsonl");
  oracle.settings.num_classes = 0;
  oracle.settings.hidden_dim = 8;
  oracle.max_len = 24;
  oracle.settings.temperature = 0.01;
  oracle.output = path("sharp.jsonl");
  const TeacherOracleReport sharp = cmd_teacher_oracle(oracle);
  EXPECT_GE(sharp.prediction_variance, 0.98 * sharp.max_variance);
  oracle.settings.temperature = 1000.0;
  oracle.output = path("flat.jsonl");
  const TeacherOracleReport flat = cmd_teacher_oracle(oracle);
  EXPECT_LT(flat.prediction_variance, 0.01 * flat.max_variance);
  EXPECT_DOUBLE_EQ(flat.max_variance, 0.25);
  ASSERT_TRUE(flat.labeled_accuracy.has_value());
  EXPECT_GT(*flat.labeled_accuracy, 0.9);
}

TEST_F(Pipeline, OracleRejectsClassMismatch) {
  TeacherOracleOptions oracle;
  oracle.corpus = path("corpus.jsonl");
  oracle.vocab = path("vocab.txt");
  oracle.output = path("never.jsonl");
  oracle.settings.num_classes = 3;
  EXPECT_THROW(cmd_teacher_oracle(oracle), ConfigError);
}

TEST_F(Pipeline, DistilWritesArtifactsAndIsDeterministic) {
  const DistilReport a = cmd_distil(config("run_a"));
  const DistilReport b = cmd_distil(config("run_b"));
  for (const char* f : {"config.json", "metrics.jsonl", "checkpoint.bin", "summary.json"}) {
    EXPECT_TRUE(fs::exists(path("run_a") / f)) << f;
  }
  EXPECT_FALSE(fs::exists(path("run_a") / "distilled.bin"));
  EXPECT_EQ(a.summary_json, b.summary_json);
  EXPECT_EQ(read_file(path("run_a") / "checkpoint.bin"), read_file(path("run_b") / "checkpoint.bin"));
  EXPECT_EQ(read_file(path("run_a") / "summary.json"), a.summary_json);
  const auto summary = nlohmann::json::parse(a.summary_json);
  EXPECT_EQ(summary["config_hash"], a.config_hash);
  EXPECT_EQ(summary["no_distillation"], false);
  EXPECT_EQ(summary["stage_history"], (std::vector<std::string>{"joint"}));
  ASSERT_TRUE(a.test_accuracy.has_value());
  const auto metrics = read_lines(path("run_a") / "metrics.jsonl");
  EXPECT_EQ(metrics.size(), 3u);
  const auto written = nlohmann::json::parse(read_file(path("run_a") / "config.json"));
  EXPECT_EQ(written["config_hash"], a.config_hash);
}

TEST_F(Pipeline, NoDistillationFlagAndHardTargets) {
  const DistilReport base = cmd_distil(config("run_base", R"(,"beta":0,"gamma":0)"));
  EXPECT_EQ(nlohmann::json::parse(base.summary_json)["no_distillation"], true);
  const DistilReport hard = cmd_distil(config("run_hard", R"(,"hard_targets":true)"));
  const auto summary = nlohmann::json::parse(hard.summary_json);
  EXPECT_EQ(summary["no_distillation"], false);
  EXPECT_EQ(summary["hard_targets"], true);
}

TEST_F(Pipeline, StagedRegimensRecordTheirPhases) {
  const DistilReport rl = cmd_distil(config("run_rl", R"(,"regimen":"stagewise_rl_first","max_epochs":1)"));
  EXPECT_EQ(rl.stage_history, (std::vector<std::string>{"rl", "heads", "heads+bilstm", "all"}));
  const DistilReport dtf = cmd_distil(config("run_dtf", R"(,"regimen":"distil_then_finetune","max_epochs":1)"));
  EXPECT_EQ(dtf.stage_history, (std::vector<std::string>{"distil", "heads", "heads+bilstm", "all"}));
  EXPECT_TRUE(fs::exists(path("run_dtf") / "distilled.bin"));
  const StudentParams distilled = load_checkpoint(path("run_dtf") / "distilled.bin");
  EXPECT_EQ(distilled.config.lstm_hidden, 6u);
}

TEST_F(Pipeline, LowResourceOverrideResplitsTheLabeledSet) {
  // Instances moved from D_l to D_u need teacher records too.
  EXPECT_THROW(cmd_distil(config("run_k0", R"(,"labeled_per_class":3,"max_epochs":1)")), DataError);
  const DistilReport r =
      cmd_distil(config("run_k", R"(,"labeled_per_class":3,"max_epochs":1)", "teacher_all.jsonl"));
  const auto summary = nlohmann::json::parse(r.summary_json);
  EXPECT_EQ(summary["labeled"], 6);
  EXPECT_EQ(summary["unlabeled"], 234);
}

TEST_F(Pipeline, EvaluateReportsAccuracyAndTeacherAgreement) {
  cmd_distil(config("run_eval"));
  const EvaluateReport r =
      cmd_evaluate(path("run_eval") / "checkpoint.bin", path("test.jsonl"), path("vocab.txt"), path("teacher.jsonl"));
  EXPECT_EQ(r.instances, 100u);
  EXPECT_EQ(r.per_class_accuracy.size(), 2u);
  EXPECT_EQ(r.teacher_matched, 0u);
  const EvaluateReport on_corpus = cmd_evaluate(path("run_eval") / "checkpoint.bin", path("corpus.jsonl"),
                                                path("vocab.txt"), path("teacher.jsonl"));
  EXPECT_EQ(on_corpus.instances, 20u);
  EXPECT_EQ(on_corpus.teacher_matched, 220u);
  ASSERT_TRUE(on_corpus.teacher_agreement.has_value());
}

TEST(EvaluateCommand, RandomStudentIsNearChanceOnBalancedData) {
  testing::TempDir dir;
  const Vocab vocab = testing::micro_vocab(60);
  vocab.save(dir / "vocab.txt");
  StudentConfig cfg;
  cfg.vocab_size = 60;
  cfg.embed_dim = 8;
  cfg.lstm_hidden = 8;
  cfg.num_classes = 2;
  cfg.teacher_hidden = 4;
  cfg.max_len = 16;
  save_checkpoint(StudentParams::initialize(cfg, 99), dir / "model.bin");
  Rng rng(4);
  Corpus c;
  c.num_classes = 2;
  for (std::size_t i = 0; i < 1000; ++i) {
    std::string text;
    for (int w = 0; w < 6; ++w) text += "w" + std::to_string(rng() % 56) + " ";
    c.labeled.push_back({"e" + std::to_string(i), text, i % 2});
  }
  save_corpus(c, dir / "data.jsonl");
  const EvaluateReport r = cmd_evaluate(dir / "model.bin", dir / "data.jsonl", dir / "vocab.txt");
  EXPECT_EQ(r.instances, 1000u);
  EXPECT_GE(r.accuracy, 0.35);
  EXPECT_LE(r.accuracy, 0.65);
  testing::micro_vocab(30).save(dir / "small.txt");
  EXPECT_THROW(cmd_evaluate(dir / "model.bin", dir / "data.jsonl", dir / "small.txt"), ConfigError);
}

// --------------------------------------------------------------------- CLI --

#ifdef DISTIL_CLI_PATH
struct CliResult {
  int exit_code;
  std::string out, err;
};

CliResult run_cli(const std::string& args, const testing::TempDir& dir) {
  const std::string cmd = std::string("\"") + DISTIL_CLI_PATH + "\" " + args + " >\"" + (dir / "out.txt").string() +
                          "\" 2>\"" + (dir / "err.txt").string() + "\"";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(dir / "out.txt"), read_file(dir / "err.txt")};
}

TEST(Cli, MissingInputIsOneErrorLine) {
  testing::TempDir dir;
  std::ofstream(dir / "config.json") << R"({"corpus":"nope.jsonl","vocab":"v.txt","output_dir":"o","seed":1})";
  const CliResult r = run_cli("distil --config \"" + (dir / "config.json").string() + "\"", dir);
  EXPECT_NE(r.exit_code, 0);
  EXPECT_EQ(r.err.rfind("error: config: ", 0), 0u) << r.err;
  EXPECT_EQ(r.err.find("config: config:"), std::string::npos) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST(Cli, MissingSeedIsRejected) {
  testing::TempDir dir;
  std::ofstream(dir / "c.jsonl") << "";
  std::ofstream(dir / "v.txt") << "";
  std::ofstream(dir / "config.json") << R"({"corpus":"c.jsonl","vocab":"v.txt","output_dir":"o","beta":0,"gamma":0})";
  const CliResult r = run_cli("distil --config \"" + (dir / "config.json").string() + "\"", dir);
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("seed"), std::string::npos) << r.err;
}

TEST(Cli, UsageErrorsExitTwo) {
  testing::TempDir dir;
  EXPECT_EQ(run_cli("", dir).exit_code, 2);
  EXPECT_EQ(run_cli("frobnicate", dir).exit_code, 2);
  const CliResult r = run_cli("tokenize --vocab v.txt", dir);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_EQ(r.err.rfind("error: usage: ", 0), 0u) << r.err;
}

TEST(Cli, SynthSplitTokenizeRoundTrip) {
  testing::TempDir dir;
  const std::string d = "\"" + dir.path().string() + "\"";
  ASSERT_EQ(run_cli("synth --out " + d + " --classes 2 --pool-size 40 --test-size 10", dir).exit_code, 0);
  ASSERT_EQ(run_cli("split --pool " + d + "/pool.jsonl --out " + d + " --classes 2 --k 5", dir).exit_code, 0);
  const CliResult r = run_cli("tokenize --input " + d + "/corpus.jsonl --vocab " + d + "/vocab.txt --out " + d, dir);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.out.find("instances=40"), std::string::npos) << r.out;
  EXPECT_EQ(read_lines(dir / "encoded.jsonl").size(), 40u);
}
#endif

}  // namespace
}  // namespace distil
