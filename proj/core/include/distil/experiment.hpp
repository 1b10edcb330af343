#pragma once

// Pipeline commands behind the command-line tool: represent (tokenize),
// teach (teacher-oracle), distil and measure (evaluate), plus helpers to
// build corpora. Every command is deterministic given its inputs and seed
// and writes only to the paths it is given.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "distil/losses.hpp"
#include "distil/student.hpp"
#include "distil/synthetic.hpp"
#include "distil/teacher.hpp"
#include "distil/training.hpp"

namespace distil {

struct ExperimentConfig {
  std::filesystem::path corpus;
  std::filesystem::path vocab;
  std::filesystem::path teacher;     // optional: records for D_u
  std::filesystem::path test;        // optional: labeled instances scored at the end
  std::filesystem::path embeddings;  // optional: GloVe-style text file
  std::filesystem::path output_dir;

  std::optional<std::uint64_t> seed;  // mandatory once loaded
  Regimen regimen = Regimen::joint;
  bool hard_targets = false;
  std::optional<std::size_t> labeled_per_class;

  LossWeights weights;

  std::size_t embed_dim = 300;
  std::size_t lstm_hidden = 600;
  std::size_t teacher_hidden = 768;  // used only without teacher records
  std::size_t max_len = kDefaultMaxLen;
  double dropout = 0.4;
  double recurrent_dropout = 0.2;

  std::size_t batch_size = 64;
  std::size_t max_epochs = 30;
  std::size_t patience = 3;
  double rho = 0.95;
  double eps = 1e-6;
  Precision precision = Precision::float64;
  double validation_fraction = 0.1;

  // No distillation signal at all: joint, beta = gamma = 0, no hard targets.
  bool no_distillation() const noexcept;

  // Range checks, mandatory seed, and existence of every referenced input.
  void validate() const;
};

// Flat JSON object; keys not listed here are rejected. Relative paths are
// resolved against `base_dir`.
ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

// Every field with its effective value, one key per line.
std::string dump_config(const ExperimentConfig& config);

// FNV-1a over the dump with output_dir removed, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

// --- tokenize ----------------------------------------------------------------

struct TokenizeStats {
  std::size_t instances = 0;
  std::size_t pieces = 0;     // real wordpieces before truncation
  std::size_t unknown = 0;    // [UNK] pieces
  std::size_t truncated = 0;  // instances cut at max_len
  std::size_t max_length = 0;
};

// Writes one {"id","ids","length"} line per input instance.
TokenizeStats cmd_tokenize(const std::filesystem::path& input, const std::filesystem::path& vocab,
                           std::size_t max_len, const std::filesystem::path& output);

// --- teacher-oracle ----------------------------------------------------------

struct TeacherOracleOptions {
  std::filesystem::path corpus;
  std::filesystem::path vocab;
  std::filesystem::path output;
  std::filesystem::path fit;  // optional labeled instances; defaults to the corpus's D_l
  OracleSettings settings;    // num_classes 0 takes the corpus's count; otherwise it must match
  OracleFitOptions fit_options;
  std::size_t max_len = kDefaultMaxLen;
  bool include_labeled = false;  // also emit records for D_l
};

struct TeacherOracleReport {
  std::size_t records = 0;
  std::size_t num_classes = 0;
  double prediction_variance = 0.0;
  double max_variance = 0.0;
  std::optional<double> labeled_accuracy;  // oracle accuracy on D_l
};

TeacherOracleReport cmd_teacher_oracle(const TeacherOracleOptions& options);

// --- distil ------------------------------------------------------------------

struct DistilReport {
  std::string summary_json;  // exact contents of summary.json
  std::string config_hash;
  std::optional<double> test_accuracy;
  double labeled_accuracy = 0.0;
  std::size_t total_steps = 0;
  std::vector<std::string> stage_history;
};

// Writes under output_dir: config.json, metrics.jsonl, checkpoint.bin,
// summary.json, and distilled.bin for distil_then_finetune.
DistilReport cmd_distil(const ExperimentConfig& config);

// --- evaluate ----------------------------------------------------------------

struct EvaluateReport {
  std::size_t instances = 0;
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::optional<double> teacher_agreement;  // vs teacher hard labels
  std::size_t teacher_matched = 0;
};

// Scores the labeled instances of a corpus or instance file. With a teacher
// file, also reports the agreement of the student's predictions with the
// teacher's hard labels over every instance that has a record.
EvaluateReport cmd_evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                            const std::filesystem::path& vocab, const std::filesystem::path& teacher = {});

// --- corpus helpers ----------------------------------------------------------

struct SplitOptions {
  std::filesystem::path pool;  // labeled instances
  std::filesystem::path output;
  std::size_t num_classes = 0;
  std::optional<std::size_t> test_size;          // derive_split
  std::optional<std::size_t> labeled_per_class;  // low_resource_split
  std::uint64_t seed = 0;
};

Corpus cmd_split(const SplitOptions& options);

// Writes vocab.txt, pool.jsonl and test.jsonl for a synthetic task.
SyntheticTask cmd_synth(const SyntheticTaskOptions& options, std::size_t pool_size, std::size_t test_size,
                        const std::filesystem::path& output_dir);

}  // namespace distil
