#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace distil {

struct Instance {
  std::string id;
  std::string text;
  std::optional<std::size_t> label;

  bool operator==(const Instance&) const = default;
};

struct SplitProvenance {
  std::uint64_t seed = 0;
  std::vector<std::size_t> labeled_per_class;
  std::size_t labeled = 0;
  std::size_t unlabeled = 0;

  bool operator==(const SplitProvenance&) const = default;
};

// Labeled set D_l and unlabeled transfer set D_u.
struct Corpus {
  std::vector<Instance> labeled;
  std::vector<Instance> unlabeled;
  std::size_t num_classes = 0;
  SplitProvenance provenance;

  // Labels present exactly on D_l and in range, ids unique.
  void validate() const;
  bool operator==(const Corpus&) const = default;
};

// Line-delimited JSON: a header record
//   {"type":"header","num_classes":C,"seed":S,"labeled_per_class":[...],"labeled":n,"unlabeled":N}
// followed by one {"id","text","label"} record per instance (label null on D_u).
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

// Instance records of any corpus-format file; a header line is skipped.
std::vector<Instance> load_instances(const std::filesystem::path& path);

}  // namespace distil
