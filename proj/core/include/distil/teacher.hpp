#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "distil/tokenizer.hpp"

namespace distil {

// One transfer-set instance as seen by the teacher.
struct TeacherRecord {
  std::string id;
  std::string text;
  std::vector<double> probs;   // class probabilities
  std::vector<double> logits;  // elementwise log-odds of probs (clamped)
  std::vector<double> hidden;  // teacher last-layer representation
  std::size_t hard_label = 0;  // argmax of probs, lowest index on ties

  bool operator==(const TeacherRecord&) const = default;
};

inline constexpr double kDefaultLogitClamp = 1e-7;

// log(p' / (1 - p')) per class, with p' = clamp(p, eps, 1 - eps).
std::vector<double> logit_transform(std::span<const double> probs, double eps = kDefaultLogitClamp);

std::size_t hard_label(std::span<const double> probs);

// Fills logits and hard_label from probs.
TeacherRecord make_record(std::string id, std::string text, std::vector<double> probs, std::vector<double> hidden,
                          double eps = kDefaultLogitClamp);

// Throws DataError describing the first violated invariant.
void validate_record(const TeacherRecord& record, double eps = kDefaultLogitClamp);

struct OracleSettings {
  std::size_t hash_dim = 4096;
  std::size_t num_classes = 2;
  std::size_t hidden_dim = 768;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

struct OracleFitOptions {
  std::size_t epochs = 30;
  double learning_rate = 0.5;
  double l2 = 1e-4;
};

// Synthetic stand-in for a fine-tuned teacher: a linear softmax model over
// an L2-normalized hashed bag of wordpieces, plus a tanh random projection
// of the same features as its "hidden state". Small temperatures push the
// probabilities towards one-hot.
class OracleTeacher {
 public:
  explicit OracleTeacher(const OracleSettings& settings);

  const OracleSettings& settings() const noexcept { return settings_; }
  void set_temperature(double temperature);

  // Softmax regression on the hashed features (temperature 1) by
  // per-instance gradient steps in a seeded order, from the current weights.
  void fit(std::span<const Encoded> inputs, std::span<const std::size_t> labels,
           const OracleFitOptions& options = {});

  // Normalized hashed bag of the real wordpieces between [CLS] and [SEP].
  std::vector<double> features(const Encoded& encoded) const;
  std::vector<double> probabilities(const Encoded& encoded) const;
  TeacherRecord predict(const Encoded& encoded, std::string id = {}, std::string text = {}) const;

 private:
  struct SparseFeatures {
    std::vector<std::size_t> index;
    std::vector<double> value;
  };
  SparseFeatures sparse_features(const Encoded& encoded) const;
  std::vector<double> scores(const SparseFeatures& f) const;

  OracleSettings settings_;
  std::vector<double> weights_;    // [F x C]
  std::vector<double> projector_;  // [F x H]
};

// One record per line as a flat JSON object with fields id, text, probs,
// logits, hidden, hard_label. Numbers carry 17 significant digits.
std::string format_record(const TeacherRecord& record);
TeacherRecord parse_record(std::string_view line);

void export_records(std::span<const TeacherRecord> records, const std::filesystem::path& path);
// Validates every record and that all share the first record's class count
// and hidden size. Errors carry the 1-based line number.
std::vector<TeacherRecord> import_records(const std::filesystem::path& path);

}  // namespace distil
