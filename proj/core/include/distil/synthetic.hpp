#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "distil/corpus.hpp"
#include "distil/tokenizer.hpp"

namespace distil {

// A seeded text-classification task built from token patterns. Every class
// owns a set of keywords; an instance mixes a few keywords of its class with
// neutral filler words and, sometimes, one keyword of another class. Part of
// every keyword set is stored only as two wordpieces, so the tokenizer has
// real segmentation work to do.
struct SyntheticTaskOptions {
  std::size_t num_classes = 4;
  std::size_t keywords_per_class = 40;
  std::size_t filler_words = 200;
  std::size_t min_fillers = 4;
  std::size_t max_fillers = 10;
  std::size_t keywords_per_instance = 2;
  double distractor_rate = 0.3;
  std::uint64_t seed = 0;
};

struct SyntheticTask {
  std::vector<std::string> vocab_tokens;  // specials first, then pieces
  std::vector<std::vector<std::string>> keywords;  // per class
  std::vector<Instance> pool;  // labeled, class-balanced, shuffled
  std::vector<Instance> test;  // labeled, class-balanced, shuffled

  Vocab vocab() const { return Vocab(vocab_tokens); }
};

SyntheticTask make_synthetic_task(const SyntheticTaskOptions& options, std::size_t pool_size,
                                  std::size_t test_size);

}  // namespace distil
