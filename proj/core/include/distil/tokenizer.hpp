#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace distil {

using TokenId = std::size_t;

inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kContinuationPrefix = "##";

// Wordpiece vocabulary. Ids are dense line indices of the vocab file.
class Vocab {
 public:
  // Throws FormatError on duplicates, missing specials, bare "##" pieces or
  // empty tokens.
  explicit Vocab(std::vector<std::string> tokens);

  // One token per line, id = 0-based line index. A single trailing newline
  // is allowed; blank lines are not.
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const noexcept { return tokens_.size(); }
  bool contains(std::string_view token) const;
  // Id of a token; throws ContractError when absent.
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  TokenId cls() const noexcept { return cls_; }
  TokenId sep() const noexcept { return sep_; }
  TokenId unk() const noexcept { return unk_; }
  TokenId pad() const noexcept { return pad_; }

 private:
  const TokenId* find(std::string_view token) const;

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId cls_ = 0, sep_ = 0, unk_ = 0, pad_ = 0;
};

struct Encoded {
  std::vector<TokenId> ids;  // always max_len entries
  std::size_t length = 0;    // real tokens including [CLS] and [SEP]
  std::size_t max_len = 0;
};

inline constexpr std::size_t kDefaultMaxLen = 128;

// Lowercases, splits on whitespace and emits every other non-alphanumeric
// ASCII character as its own token. Bytes >= 0x80 count as word characters.
std::vector<std::string> basic_split(std::string_view text);

// Greedy longest-match-first segmentation of one lowercased word.
std::vector<std::string> wordpiece(std::string_view word, const Vocab& vocab);

// All pieces of a text, before framing and truncation.
std::vector<std::string> tokenize(std::string_view text, const Vocab& vocab);

// [CLS] + pieces (truncated to max_len - 2) + [SEP], padded to max_len.
Encoded encode(std::string_view text, const Vocab& vocab, std::size_t max_len = kDefaultMaxLen);

// Space-joined tokens of the real (non-pad) positions.
std::string render(const Encoded& encoded, const Vocab& vocab);

}  // namespace distil
