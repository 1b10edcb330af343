#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "distil/corpus.hpp"
#include "distil/teacher.hpp"

namespace distil {

// Samples test_size / C instances per class (uniformly, without
// replacement) into D_l and strips the labels of everything else into D_u.
// Both sets keep pool order.
Corpus derive_split(std::span<const Instance> pool, std::size_t test_size, std::size_t num_classes,
                    std::uint64_t seed);

// Same rule with an explicit per-class labeled count.
Corpus low_resource_split(std::span<const Instance> pool, std::size_t per_class, std::size_t num_classes,
                          std::uint64_t seed);

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> gold);

// Accuracy restricted to each gold class; classes without instances get 0.
std::vector<double> per_class_accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> gold,
                                       std::size_t num_classes);

// Mean over instances of the population variance of each probability row.
double prediction_variance(std::span<const TeacherRecord> records);
double prediction_variance(std::span<const std::vector<double>> probability_rows);

// (C - 1) / C^2, the variance of a one-hot probability vector.
double max_variance(std::size_t num_classes);

}  // namespace distil
