// Command-line front end: tokenize | teacher-oracle | distil | evaluate,
// plus split and synth for building corpora. Failures print one line
// "error: <category>: <message>" on stderr and exit nonzero.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "distil/error.hpp"
#include "distil/experiment.hpp"

namespace fs = std::filesystem;
using namespace distil;

namespace {

struct DistilArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> k;
  std::string regimen;
  std::optional<double> alpha, beta, gamma;
  bool hard_targets = false;
  std::optional<std::size_t> max_epochs;
};

int run_distil(const DistilArgs& a) {
  ExperimentConfig config = load_config(a.config);
  if (a.seed) config.seed = a.seed;
  if (!a.out.empty()) config.output_dir = a.out;
  if (a.k) config.labeled_per_class = a.k;
  if (!a.regimen.empty()) config.regimen = parse_regimen(a.regimen);
  if (a.alpha) config.weights.alpha = *a.alpha;
  if (a.beta) config.weights.beta = *a.beta;
  if (a.gamma) config.weights.gamma = *a.gamma;
  if (a.hard_targets) config.hard_targets = true;
  if (a.max_epochs) config.max_epochs = *a.max_epochs;

  const DistilReport r = cmd_distil(config);
  std::string stages;
  for (const std::string& s : r.stage_history) stages += (stages.empty() ? "" : ",") + s;
  std::printf("config_hash=%s steps=%zu stages=%s labeled_accuracy=%.6f", r.config_hash.c_str(), r.total_steps,
              stages.c_str(), r.labeled_accuracy);
  if (r.test_accuracy) std::printf(" test_accuracy=%.6f", *r.test_accuracy);
  std::printf(" output=%s\n", config.output_dir.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BiLSTM student distillation from exported teacher outputs"};
  app.require_subcommand(1);

  // tokenize
  std::string tok_input, tok_vocab, tok_out;
  std::size_t tok_max_len = kDefaultMaxLen;
  auto* tokenize = app.add_subcommand("tokenize", "Encode a corpus or instance file into wordpiece ids");
  tokenize->add_option("--input", tok_input, "Corpus or instance file")->required()->check(CLI::ExistingFile);
  tokenize->add_option("--vocab", tok_vocab, "Vocabulary file")->required();
  tokenize->add_option("--out", tok_out, "Output directory (writes encoded.jsonl)")->required();
  tokenize->add_option("--max-len", tok_max_len, "Maximum sequence length")->capture_default_str();

  // teacher-oracle
  TeacherOracleOptions oracle;
  oracle.settings.num_classes = 0;
  std::string oracle_out;
  auto* teacher = app.add_subcommand("teacher-oracle", "Emit synthetic teacher records for a corpus's D_u");
  teacher->add_option("--corpus", oracle.corpus, "Corpus file")->required()->check(CLI::ExistingFile);
  teacher->add_option("--vocab", oracle.vocab, "Vocabulary file")->required();
  teacher->add_option("--out", oracle_out, "Output directory (writes teacher.jsonl)")->required();
  teacher->add_option("--fit", oracle.fit, "Labeled instances to fit on (default: the corpus's D_l)");
  teacher->add_option("--tau", oracle.settings.temperature, "Softmax temperature")->capture_default_str();
  teacher->add_option("--seed", oracle.settings.seed, "Oracle seed")->capture_default_str();
  teacher->add_option("--hidden", oracle.settings.hidden_dim, "Hidden size H_t")->capture_default_str();
  teacher->add_option("--hash-dim", oracle.settings.hash_dim, "Hashed feature dimension")->capture_default_str();
  teacher->add_option("--classes", oracle.settings.num_classes, "Expected class count (0: from corpus)");
  teacher->add_option("--fit-epochs", oracle.fit_options.epochs, "Fitting epochs")->capture_default_str();
  teacher->add_option("--max-len", oracle.max_len, "Maximum sequence length")->capture_default_str();
  teacher->add_flag("--include-labeled", oracle.include_labeled, "Also emit records for D_l");

  // distil
  DistilArgs dargs;
  auto* distil_cmd = app.add_subcommand("distil", "Train a student with one of the three regimens");
  distil_cmd->add_option("--config", dargs.config, "Experiment config (flat JSON)")->required()->check(
      CLI::ExistingFile);
  distil_cmd->add_option("--seed", dargs.seed, "Override the config seed");
  distil_cmd->add_option("--out", dargs.out, "Override the output directory");
  distil_cmd->add_option("--k", dargs.k, "Labeled instances per class (re-splits D_l)");
  distil_cmd->add_option("--regimen", dargs.regimen, "joint | stagewise_rl_first | distil_then_finetune");
  distil_cmd->add_option("--alpha", dargs.alpha, "Cross-entropy weight");
  distil_cmd->add_option("--beta", dargs.beta, "Representation-loss weight");
  distil_cmd->add_option("--gamma", dargs.gamma, "Logit-loss weight");
  distil_cmd->add_flag("--hard-targets", dargs.hard_targets, "Train on teacher hard labels over D_u");
  distil_cmd->add_option("--max-epochs", dargs.max_epochs, "Override max epochs per phase");

  // evaluate
  std::string ev_checkpoint, ev_data, ev_vocab, ev_teacher;
  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on labeled instances");
  evaluate->add_option("--checkpoint", ev_checkpoint, "Student checkpoint")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--data", ev_data, "Corpus or instance file")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--vocab", ev_vocab, "Vocabulary file")->required();
  evaluate->add_option("--teacher", ev_teacher, "Teacher records for an agreement rate");

  // split
  SplitOptions split;
  std::string split_out;
  auto* split_cmd = app.add_subcommand("split", "Build D_l / D_u from a labeled pool");
  split_cmd->add_option("--pool", split.pool, "Labeled instance file")->required()->check(CLI::ExistingFile);
  split_cmd->add_option("--out", split_out, "Output directory (writes corpus.jsonl)")->required();
  split_cmd->add_option("--classes", split.num_classes, "Class count")->required();
  auto* test_size = split_cmd->add_option("--test-size", split.test_size, "Derive k = test size / C");
  auto* split_k = split_cmd->add_option("--k", split.labeled_per_class, "Labeled instances per class");
  test_size->excludes(split_k);
  split_cmd->add_option("--seed", split.seed, "Sampling seed")->capture_default_str();

  // synth
  SyntheticTaskOptions synth;
  std::size_t synth_pool = 2080, synth_test = 800;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic token-pattern task");
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cmd->add_option("--seed", synth.seed, "Task seed")->capture_default_str();
  synth_cmd->add_option("--classes", synth.num_classes, "Class count")->capture_default_str();
  synth_cmd->add_option("--keywords", synth.keywords_per_class, "Keywords per class")->capture_default_str();
  synth_cmd->add_option("--pool-size", synth_pool, "Labeled pool size")->capture_default_str();
  synth_cmd->add_option("--test-size", synth_test, "Test set size")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    return 2;
  }

  try {
    if (*tokenize) {
      fs::create_directories(tok_out);
      const fs::path output = fs::path(tok_out) / "encoded.jsonl";
      const TokenizeStats s = cmd_tokenize(tok_input, tok_vocab, tok_max_len, output);
      std::printf("instances=%zu pieces=%zu unknown=%zu truncated=%zu max_length=%zu output=%s\n", s.instances,
                  s.pieces, s.unknown, s.truncated, s.max_length, output.string().c_str());
    } else if (*teacher) {
      fs::create_directories(oracle_out);
      oracle.output = fs::path(oracle_out) / "teacher.jsonl";
      const TeacherOracleReport r = cmd_teacher_oracle(oracle);
      std::printf("records=%zu classes=%zu prediction_variance=%.6f max_variance=%.6f", r.records, r.num_classes,
                  r.prediction_variance, r.max_variance);
      if (r.labeled_accuracy) std::printf(" labeled_accuracy=%.6f", *r.labeled_accuracy);
      std::printf(" output=%s\n", oracle.output.string().c_str());
    } else if (*distil_cmd) {
      return run_distil(dargs);
    } else if (*evaluate) {
      const EvaluateReport r = cmd_evaluate(ev_checkpoint, ev_data, ev_vocab, ev_teacher);
      std::printf("instances=%zu accuracy=%.6f\n", r.instances, r.accuracy);
      for (std::size_t c = 0; c < r.per_class_accuracy.size(); ++c) {
        std::printf("class=%zu accuracy=%.6f\n", c, r.per_class_accuracy[c]);
      }
      if (r.teacher_agreement) {
        std::printf("teacher_matched=%zu teacher_agreement=%.6f\n", r.teacher_matched, *r.teacher_agreement);
      }
    } else if (*split_cmd) {
      fs::create_directories(split_out);
      split.output = fs::path(split_out) / "corpus.jsonl";
      const Corpus c = cmd_split(split);
      std::printf("labeled=%zu unlabeled=%zu output=%s\n", c.labeled.size(), c.unlabeled.size(),
                  split.output.string().c_str());
    } else if (*synth_cmd) {
      const SyntheticTask t = cmd_synth(synth, synth_pool, synth_test, synth_out);
      std::printf("vocab=%zu pool=%zu test=%zu output=%s\n", t.vocab_tokens.size(), t.pool.size(), t.test.size(),
                  synth_out.c_str());
    }
  } catch (const Error& e) {
    // Most messages already begin with "<area>: "; skip the category when
    // it would only repeat that prefix.
    const std::string prefix = e.category() + ": ";
    const std::string message = e.what();
    std::fprintf(stderr, "error: %s%s\n", message.starts_with(prefix) ? "" : prefix.c_str(), message.c_str());
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: io: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 0;
}
