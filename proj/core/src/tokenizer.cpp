#include "distil/tokenizer.hpp"

#include <fstream>

#include "distil/error.hpp"

namespace distil {

namespace {

bool is_word_byte(unsigned char c) { return c >= 0x80 || (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
bool is_space_byte(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

char lower(unsigned char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c); }

}  // namespace

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  index_.reserve(tokens_.size());
  for (TokenId id = 0; id < tokens_.size(); ++id) {
    const std::string& t = tokens_[id];
    if (t.empty()) throw FormatError("vocab: empty token at line " + std::to_string(id + 1));
    if (t.starts_with(kContinuationPrefix) && t.size() <= kContinuationPrefix.size()) {
      throw FormatError("vocab: continuation piece without body at line " + std::to_string(id + 1));
    }
    if (!index_.emplace(t, id).second) {
      throw FormatError("vocab: duplicate token '" + t + "' at line " + std::to_string(id + 1));
    }
  }
  auto special = [&](std::string_view name) {
    const TokenId* found = find(name);
    if (!found) throw FormatError("vocab: missing special token " + std::string(name));
    return *found;
  };
  cls_ = special(kClsToken);
  sep_ = special(kSepToken);
  unk_ = special(kUnkToken);
  pad_ = special(kPadToken);
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vocab file " + path.string());
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (!content.empty() && content.back() == '\n') content.pop_back();
  std::vector<std::string> tokens;
  if (!content.empty()) {
    std::size_t start = 0;
    while (true) {
      const std::size_t end = content.find('\n', start);
      std::string line = content.substr(start, end == std::string::npos ? std::string::npos : end - start);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      tokens.push_back(std::move(line));
      if (end == std::string::npos) break;
      start = end + 1;
    }
  }
  return Vocab(std::move(tokens));
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocab file " + path.string());
  for (const std::string& t : tokens_) out << t << '\n';
}

const TokenId* Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? nullptr : &it->second;
}

bool Vocab::contains(std::string_view token) const { return find(token) != nullptr; }

TokenId Vocab::id(std::string_view token) const {
  const TokenId* found = find(token);
  if (!found) throw ContractError("token '" + std::string(token) + "' is not in the vocabulary");
  return *found;
}

const std::string& Vocab::token(TokenId id) const {
  if (id >= tokens_.size()) throw ContractError("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::vector<std::string> basic_split(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_space_byte(c)) {
      flush();
    } else if (is_word_byte(c)) {
      current.push_back(lower(c));
    } else {
      flush();
      words.emplace_back(1, static_cast<char>(c));
    }
  }
  flush();
  return words;
}

std::vector<std::string> wordpiece(std::string_view word, const Vocab& vocab) {
  std::vector<std::string> pieces;
  std::size_t start = 0;
  while (start < word.size()) {
    std::size_t end = word.size();
    std::string match;
    while (end > start) {
      std::string candidate(word.substr(start, end - start));
      if (start > 0) candidate.insert(0, kContinuationPrefix);
      if (vocab.contains(candidate)) {
        match = std::move(candidate);
        break;
      }
      --end;
    }
    if (match.empty()) return {std::string(kUnkToken)};
    pieces.push_back(std::move(match));
    start = end;
  }
  return pieces;
}

std::vector<std::string> tokenize(std::string_view text, const Vocab& vocab) {
  std::vector<std::string> pieces;
  for (const std::string& word : basic_split(text)) {
    for (std::string& piece : wordpiece(word, vocab)) pieces.push_back(std::move(piece));
  }
  return pieces;
}

Encoded encode(std::string_view text, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 2) throw ContractError("encode: max_len must be at least 2, got " + std::to_string(max_len));
  const std::vector<std::string> pieces = tokenize(text, vocab);
  const std::size_t kept = std::min(pieces.size(), max_len - 2);

  Encoded out;
  out.max_len = max_len;
  out.ids.reserve(max_len);
  out.ids.push_back(vocab.cls());
  for (std::size_t i = 0; i < kept; ++i) out.ids.push_back(vocab.id(pieces[i]));
  out.ids.push_back(vocab.sep());
  out.length = out.ids.size();
  out.ids.resize(max_len, vocab.pad());
  return out;
}

std::string render(const Encoded& encoded, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < encoded.length; ++i) {
    if (i) out.push_back(' ');
    out += vocab.token(encoded.ids[i]);
  }
  return out;
}

}  // namespace distil
