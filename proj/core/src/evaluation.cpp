#include "distil/evaluation.hpp"

#include <algorithm>
#include <random>
#include <string>

#include "distil/error.hpp"

namespace distil {

Corpus low_resource_split(std::span<const Instance> pool, std::size_t per_class, std::size_t num_classes,
                          std::uint64_t seed) {
  if (num_classes < 2) throw ContractError("split: need at least 2 classes");
  if (per_class == 0) throw ConfigError("split: at least one labeled instance per class is required");
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& label = pool[i].label;
    if (!label) throw DataError("split: pool instance '" + pool[i].id + "' has no label");
    if (*label >= num_classes) throw DataError("split: pool instance '" + pool[i].id + "' has label out of range");
    by_class[*label].push_back(i);
  }

  std::mt19937_64 rng(seed);
  std::vector<std::uint8_t> chosen(pool.size(), 0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& members = by_class[c];
    if (members.size() < per_class) {
      throw DataError("split: class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                      " instances, " + std::to_string(per_class) + " requested");
    }
    // Partial Fisher-Yates: the first per_class slots become a uniform sample.
    for (std::size_t k = 0; k < per_class; ++k) {
      std::uniform_int_distribution<std::size_t> pickd(k, members.size() - 1);
      std::swap(members[k], members[pickd(rng)]);
      chosen[members[k]] = 1;
    }
  }

  Corpus corpus;
  corpus.num_classes = num_classes;
  corpus.labeled.reserve(per_class * num_classes);
  corpus.unlabeled.reserve(pool.size() - per_class * num_classes);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (chosen[i]) {
      corpus.labeled.push_back(pool[i]);
    } else {
      corpus.unlabeled.push_back(Instance{pool[i].id, pool[i].text, std::nullopt});
    }
  }
  corpus.provenance.seed = seed;
  corpus.provenance.labeled_per_class.assign(num_classes, per_class);
  corpus.provenance.labeled = corpus.labeled.size();
  corpus.provenance.unlabeled = corpus.unlabeled.size();
  return corpus;
}

Corpus derive_split(std::span<const Instance> pool, std::size_t test_size, std::size_t num_classes,
                    std::uint64_t seed) {
  if (num_classes < 2) throw ContractError("split: need at least 2 classes");
  return low_resource_split(pool, test_size / num_classes, num_classes, seed);
}

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> gold) {
  if (predictions.size() != gold.size()) {
    throw DimensionError("accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(gold.size()) + " labels");
  }
  if (gold.empty()) throw ContractError("accuracy: no instances");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) correct += predictions[i] == gold[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(gold.size());
}

std::vector<double> per_class_accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> gold,
                                       std::size_t num_classes) {
  if (predictions.size() != gold.size()) throw DimensionError("per_class_accuracy: length mismatch");
  std::vector<std::size_t> correct(num_classes, 0), total(num_classes, 0);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] >= num_classes) throw ContractError("per_class_accuracy: label out of range");
    ++total[gold[i]];
    correct[gold[i]] += predictions[i] == gold[i] ? 1 : 0;
  }
  std::vector<double> out(num_classes, 0.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (total[c]) out[c] = static_cast<double>(correct[c]) / static_cast<double>(total[c]);
  }
  return out;
}

double prediction_variance(std::span<const std::vector<double>> rows) {
  if (rows.empty()) throw ContractError("prediction_variance: no records");
  const std::size_t C = rows.front().size();
  if (C < 2) throw ContractError("prediction_variance: need at least 2 classes");
  double total = 0.0;
  for (const auto& p : rows) {
    if (p.size() != C) throw DimensionError("prediction_variance: records disagree on class count");
    double m = 0.0;
    for (double v : p) m += v;
    m /= static_cast<double>(C);
    double var = 0.0;
    for (double v : p) var += (v - m) * (v - m);
    total += var / static_cast<double>(C);
  }
  return total / static_cast<double>(rows.size());
}

double prediction_variance(std::span<const TeacherRecord> records) {
  std::vector<std::vector<double>> rows;
  rows.reserve(records.size());
  for (const TeacherRecord& r : records) rows.push_back(r.probs);
  return prediction_variance(rows);
}

double max_variance(std::size_t num_classes) {
  if (num_classes < 2) throw ContractError("max_variance: need at least 2 classes");
  const double c = static_cast<double>(num_classes);
  return (c - 1.0) / (c * c);
}

}  // namespace distil
