#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cmow {

using TokenId = std::int32_t;

struct SpecialTokens {
  TokenId pad = -1;
  TokenId unk = -1;
  TokenId cls = -1;
  TokenId sep = -1;
  TokenId mask = -1;
};

// BERT vocab.txt: one token per line, id = 0-based line number.
class Vocabulary {
 public:
  Vocabulary() = default;
  // Throws ConfigError on a duplicate token or a missing special token.
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;
  const SpecialTokens& specials() const { return specials_; }
  bool is_special(TokenId id) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  SpecialTokens specials_;
};

Vocabulary load_vocab(const std::filesystem::path& path);

struct TokenizedSequence {
  std::vector<TokenId> ids;
  // Index of the first token of the second segment in a joint encoding.
  std::optional<std::size_t> segment_boundary;
};

// Uncased BERT pipeline: clean, lowercase, strip accents, split on whitespace
// and punctuation (CJK ideographs become single-character words), then greedy
// longest-match-first WordPiece with "##" continuation pieces.
class WordPieceTokenizer {
 public:
  static constexpr std::size_t kMaxCharsPerWord = 100;

  explicit WordPieceTokenizer(const Vocabulary& vocab) : vocab_(&vocab) {}

  TokenizedSequence tokenize(std::string_view text) const;

  // Normalized words before WordPiece, UTF-8 encoded.
  std::vector<std::string> basic_tokenize(std::string_view text) const;
  std::vector<TokenId> wordpiece(const std::string& word) const;

 private:
  const Vocabulary* vocab_;
};

TokenizedSequence tokenize(std::string_view text, const Vocabulary& vocab);

enum class PairScheme { joint, separate };

struct ModelInput {
  // One sequence for joint encoding or single-sentence input, two for separate.
  std::vector<TokenizedSequence> sequences;
};

inline constexpr std::size_t kDefaultMaxSequenceLength = 128;

// joint:    [CLS] a [SEP] b [SEP]
// separate: [CLS] a [SEP], [CLS] b [SEP]
// Without b both schemes yield [CLS] a [SEP]. Content is truncated so every
// emitted sequence has at most max_len ids, trimming the longer of a/b first.
ModelInput build_model_input(const TokenizedSequence& a, const TokenizedSequence* b,
                             PairScheme scheme, const Vocabulary& vocab,
                             std::size_t max_len = kDefaultMaxSequenceLength);

}  // namespace cmow
