#include "cmow/tokenizer.hpp"

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <fstream>

#include "cmow/errors.hpp"

namespace cmow {

namespace {

using CodePoints = std::u32string;

bool is_whitespace(char32_t c) {
  if (c == U' ' || c == U'\t' || c == U'\n' || c == U'\r') return true;
  return (U_GET_GC_MASK(c) & U_GC_ZS_MASK) != 0;
}

bool is_control(char32_t c) {
  if (c == U'\t' || c == U'\n' || c == U'\r') return false;
  return (U_GET_GC_MASK(c) & U_GC_C_MASK) != 0;
}

bool is_punctuation(char32_t c) {
  if ((c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) ||
      (c >= 123 && c <= 126)) {
    return true;
  }
  return (U_GET_GC_MASK(c) & U_GC_P_MASK) != 0;
}

// CJK Unified Ideographs blocks, as treated by the BERT basic tokenizer.
bool is_cjk(char32_t c) {
  return (c >= 0x4E00 && c <= 0x9FFF) || (c >= 0x3400 && c <= 0x4DBF) ||
         (c >= 0x20000 && c <= 0x2A6DF) || (c >= 0x2A700 && c <= 0x2B73F) ||
         (c >= 0x2B740 && c <= 0x2B81F) || (c >= 0x2B820 && c <= 0x2CEAF) ||
         (c >= 0xF900 && c <= 0xFAFF) || (c >= 0x2F800 && c <= 0x2FA1F);
}

CodePoints to_code_points(const icu::UnicodeString& s) {
  CodePoints out;
  out.reserve(static_cast<std::size_t>(s.length()));
  for (int32_t i = 0; i < s.length();) {
    const UChar32 c = s.char32At(i);
    out.push_back(static_cast<char32_t>(c));
    i += U16_LENGTH(c);
  }
  return out;
}

icu::UnicodeString from_code_points(const CodePoints& cps) {
  icu::UnicodeString s;
  for (char32_t c : cps) s.append(static_cast<UChar32>(c));
  return s;
}

std::string to_utf8(const CodePoints& cps) {
  std::string out;
  from_code_points(cps).toUTF8String(out);
  return out;
}

const icu::Normalizer2& normalizer(bool decompose) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* n =
      decompose ? icu::Normalizer2::getNFDInstance(status) : icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status) || n == nullptr) throw ConfigError("ICU normalizer unavailable");
  return *n;
}

icu::UnicodeString normalize(const icu::UnicodeString& s, bool decompose) {
  UErrorCode status = U_ZERO_ERROR;
  icu::UnicodeString out = normalizer(decompose).normalize(s, status);
  if (U_FAILURE(status)) throw DataError("unicode normalization failed");
  return out;
}

std::vector<CodePoints> split_whitespace(const CodePoints& text) {
  std::vector<CodePoints> words;
  CodePoints current;
  for (char32_t c : text) {
    if (c == U' ') {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
    if (!inserted) {
      throw ConfigError("duplicate vocabulary token '" + tokens_[i] + "' at ids " +
                        std::to_string(it->second) + " and " + std::to_string(i));
    }
  }
  auto require = [this](const char* name) {
    auto id = find(name);
    if (!id) throw ConfigError(std::string("vocabulary is missing special token ") + name);
    return *id;
  };
  specials_.pad = require("[PAD]");
  specials_.unk = require("[UNK]");
  specials_.cls = require("[CLS]");
  specials_.sep = require("[SEP]");
  specials_.mask = require("[MASK]");
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw StructuralError("token id " + std::to_string(id) + " outside vocabulary of size " +
                          std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool Vocabulary::is_special(TokenId id) const {
  return id == specials_.pad || id == specials_.unk || id == specials_.cls ||
         id == specials_.sep || id == specials_.mask;
}

Vocabulary load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

std::vector<std::string> WordPieceTokenizer::basic_tokenize(std::string_view text) const {
  const auto raw = to_code_points(
      icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size()))));

  CodePoints cleaned;
  cleaned.reserve(raw.size());
  for (char32_t c : raw) {
    if (c == 0 || c == 0xFFFD || is_control(c)) continue;
    if (is_whitespace(c)) {
      cleaned.push_back(U' ');
    } else if (is_cjk(c)) {
      cleaned.push_back(U' ');
      cleaned.push_back(c);
      cleaned.push_back(U' ');
    } else {
      cleaned.push_back(c);
    }
  }
  const auto composed = to_code_points(normalize(from_code_points(cleaned), false));

  std::vector<std::string> out;
  for (const auto& word : split_whitespace(composed)) {
    icu::UnicodeString lowered = from_code_points(word);
    lowered.toLower(icu::Locale::getRoot());
    CodePoints stripped;
    for (char32_t c : to_code_points(normalize(lowered, true))) {
      if ((U_GET_GC_MASK(c) & U_GC_MN_MASK) == 0) stripped.push_back(c);
    }
    CodePoints piece;
    for (char32_t c : stripped) {
      if (is_punctuation(c)) {
        if (!piece.empty()) out.push_back(to_utf8(piece));
        piece.clear();
        out.push_back(to_utf8(CodePoints(1, c)));
      } else if (is_whitespace(c)) {
        if (!piece.empty()) out.push_back(to_utf8(piece));
        piece.clear();
      } else {
        piece.push_back(c);
      }
    }
    if (!piece.empty()) out.push_back(to_utf8(piece));
  }
  return out;
}

std::vector<TokenId> WordPieceTokenizer::wordpiece(const std::string& word) const {
  const auto chars = to_code_points(icu::UnicodeString::fromUTF8(word));
  const TokenId unk = vocab_->specials().unk;
  if (chars.size() > kMaxCharsPerWord) return {unk};

  std::vector<TokenId> pieces;
  std::size_t start = 0;
  while (start < chars.size()) {
    std::size_t end = chars.size();
    std::optional<TokenId> match;
    while (start < end) {
      std::string candidate = to_utf8(chars.substr(start, end - start));
      if (start > 0) candidate = "##" + candidate;
      match = vocab_->find(candidate);
      if (match) break;
      --end;
    }
    if (!match) return {unk};
    pieces.push_back(*match);
    start = end;
  }
  return pieces;
}

TokenizedSequence WordPieceTokenizer::tokenize(std::string_view text) const {
  TokenizedSequence seq;
  auto emit = [&](std::string_view segment) {
    for (const auto& word : basic_tokenize(segment)) {
      const auto pieces = wordpiece(word);
      seq.ids.insert(seq.ids.end(), pieces.begin(), pieces.end());
    }
  };
  // Literal special tokens in the raw text stay whole, as in the reference
  // tokenizer; the text between them is tokenized normally.
  const auto& sp = vocab_->specials();
  const TokenId specials[] = {sp.pad, sp.unk, sp.cls, sp.sep, sp.mask};
  std::size_t start = 0;
  std::size_t pos = 0;
  while ((pos = text.find('[', pos)) != std::string_view::npos) {
    TokenId hit = -1;
    std::size_t len = 0;
    for (TokenId id : specials) {
      const std::string& tok = vocab_->token(id);
      if (text.compare(pos, tok.size(), tok) == 0) {
        hit = id;
        len = tok.size();
        break;
      }
    }
    if (hit < 0) {
      ++pos;
      continue;
    }
    emit(text.substr(start, pos - start));
    seq.ids.push_back(hit);
    pos += len;
    start = pos;
  }
  emit(text.substr(start));
  return seq;
}

TokenizedSequence tokenize(std::string_view text, const Vocabulary& vocab) {
  return WordPieceTokenizer(vocab).tokenize(text);
}

ModelInput build_model_input(const TokenizedSequence& a, const TokenizedSequence* b,
                             PairScheme scheme, const Vocabulary& vocab, std::size_t max_len) {
  if (a.ids.empty()) throw StructuralError("build_model_input: first sequence is empty");
  if (max_len < 5) throw ConfigError("max sequence length must be at least 5");
  const auto& sp = vocab.specials();

  auto wrap = [&](std::vector<TokenId> content) {
    TokenizedSequence out;
    out.ids.reserve(content.size() + 2);
    out.ids.push_back(sp.cls);
    out.ids.insert(out.ids.end(), content.begin(), content.end());
    out.ids.push_back(sp.sep);
    return out;
  };
  auto truncated = [](const std::vector<TokenId>& ids, std::size_t limit) {
    return std::vector<TokenId>(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(limit, ids.size())));
  };

  ModelInput input;
  if (b == nullptr) {
    input.sequences.push_back(wrap(truncated(a.ids, max_len - 2)));
    return input;
  }
  if (scheme == PairScheme::separate) {
    input.sequences.push_back(wrap(truncated(a.ids, max_len - 2)));
    input.sequences.push_back(wrap(truncated(b->ids, max_len - 2)));
    return input;
  }

  std::size_t len_a = a.ids.size();
  std::size_t len_b = b->ids.size();
  while (len_a + len_b > max_len - 3) {
    if (len_a > len_b) {
      --len_a;
    } else {
      --len_b;
    }
  }
  TokenizedSequence joint;
  joint.ids.reserve(len_a + len_b + 3);
  joint.ids.push_back(sp.cls);
  joint.ids.insert(joint.ids.end(), a.ids.begin(), a.ids.begin() + static_cast<std::ptrdiff_t>(len_a));
  joint.ids.push_back(sp.sep);
  joint.segment_boundary = joint.ids.size();
  joint.ids.insert(joint.ids.end(), b->ids.begin(), b->ids.begin() + static_cast<std::ptrdiff_t>(len_b));
  joint.ids.push_back(sp.sep);
  input.sequences.push_back(std::move(joint));
  return input;
}

}  // namespace cmow
