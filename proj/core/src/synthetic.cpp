#include "distil/synthetic.hpp"

#include <algorithm>
#include <array>
#include <random>
#include <set>
#include <string_view>

#include "distil/error.hpp"

namespace distil {

namespace {

constexpr std::array<std::string_view, 16> kOnsets{"b", "d", "f", "g", "k", "l", "m", "n",
                                                   "p", "r", "s", "t", "v", "z", "sh", "tr"};
constexpr std::array<std::string_view, 6> kVowels{"a", "e", "i", "o", "u", "ai"};

std::string syllable(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> onset(0, kOnsets.size() - 1), vowel(0, kVowels.size() - 1);
  return std::string(kOnsets[onset(rng)]) + std::string(kVowels[vowel(rng)]);
}

// Distinct pronounceable words of 2 to 3 syllables.
std::vector<std::string> make_words(std::size_t count, std::set<std::string>& taken, std::mt19937_64& rng) {
  std::vector<std::string> out;
  std::uniform_int_distribution<int> syllables(2, 3);
  while (out.size() < count) {
    std::string w;
    for (int s = syllables(rng); s > 0; --s) w += syllable(rng);
    if (taken.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

}  // namespace

SyntheticTask make_synthetic_task(const SyntheticTaskOptions& o, std::size_t pool_size, std::size_t test_size) {
  if (o.num_classes < 2) throw ConfigError("synthetic task: need at least 2 classes");
  if (o.keywords_per_class == 0 || o.filler_words == 0 || o.keywords_per_instance == 0) {
    throw ConfigError("synthetic task: keyword and filler counts must be positive");
  }
  if (o.min_fillers > o.max_fillers) throw ConfigError("synthetic task: min_fillers exceeds max_fillers");
  if (!(o.distractor_rate >= 0.0 && o.distractor_rate <= 1.0)) {
    throw ConfigError("synthetic task: distractor_rate must lie in [0, 1]");
  }

  std::mt19937_64 rng(o.seed);
  SyntheticTask task;
  std::set<std::string> taken;
  const std::vector<std::string> fillers = make_words(o.filler_words, taken, rng);
  for (std::size_t c = 0; c < o.num_classes; ++c) task.keywords.push_back(make_words(o.keywords_per_class, taken, rng));

  task.vocab_tokens = {std::string(kPadToken), std::string(kUnkToken), std::string(kClsToken),
                       std::string(kSepToken)};
  std::set<std::string> in_vocab(task.vocab_tokens.begin(), task.vocab_tokens.end());
  auto add = [&](const std::string& token) {
    if (in_vocab.insert(token).second) task.vocab_tokens.push_back(token);
  };
  for (const std::string& w : fillers) add(w);
  for (const auto& words : task.keywords) {
    for (std::size_t i = 0; i < words.size(); ++i) {
      const std::string& w = words[i];
      if (i % 4 == 3) {
        // Stored as head + "##" tail only; the whole word is never a token.
        const std::size_t cut = w.size() / 2;
        add(w.substr(0, cut));
        add(std::string(kContinuationPrefix) + w.substr(cut));
      } else {
        add(w);
      }
    }
  }

  auto make_instance = [&](std::size_t label) {
    std::vector<std::string> words;
    std::uniform_int_distribution<std::size_t> filler_count(o.min_fillers, o.max_fillers);
    std::uniform_int_distribution<std::size_t> filler(0, fillers.size() - 1);
    std::uniform_int_distribution<std::size_t> keyword(0, o.keywords_per_class - 1);
    for (std::size_t n = filler_count(rng); n > 0; --n) words.push_back(fillers[filler(rng)]);
    for (std::size_t n = 0; n < o.keywords_per_instance; ++n) words.push_back(task.keywords[label][keyword(rng)]);
    if (std::bernoulli_distribution(o.distractor_rate)(rng)) {
      std::uniform_int_distribution<std::size_t> other(1, o.num_classes - 1);
      const std::size_t cls = (label + other(rng)) % o.num_classes;
      words.push_back(task.keywords[cls][keyword(rng)]);
    }
    std::shuffle(words.begin(), words.end(), rng);
    std::string text;
    for (const std::string& w : words) text += (text.empty() ? "" : " ") + w;
    return text;
  };

  auto make_set = [&](std::size_t size, std::string_view prefix) {
    std::vector<std::size_t> labels(size);
    for (std::size_t i = 0; i < size; ++i) labels[i] = i % o.num_classes;
    std::shuffle(labels.begin(), labels.end(), rng);
    std::vector<Instance> out;
    out.reserve(size);
    for (std::size_t i = 0; i < size; ++i) {
      out.push_back(Instance{std::string(prefix) + std::to_string(i), make_instance(labels[i]), labels[i]});
    }
    return out;
  };
  task.pool = make_set(pool_size, "pool-");
  task.test = make_set(test_size, "test-");
  return task;
}

}  // namespace distil
