#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "dynattn/errors.hpp"

namespace dynattn {

using TokenId = std::int32_t;

// Token inventory. The six structural markers own ids 0..5 in every
// vocabulary; corpus words start at id 6.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kSep = 3;
  static constexpr TokenId kBos = 4;
  static constexpr TokenId kEos = 5;
  static constexpr std::size_t kNumSpecials = 6;

  static const std::array<std::string, kNumSpecials>& special_strings() {
    static const std::array<std::string, kNumSpecials> s = {"[PAD]", "[UNK]", "[CLS]",
                                                            "[SEP]", "[BOS]", "[EOS]"};
    return s;
  }

  static bool is_special_string(const std::string& w) {
    const auto& s = special_strings();
    return std::find(s.begin(), s.end(), w) != s.end();
  }

  Vocabulary() {
    for (const auto& s : special_strings()) push(s);
  }

  // words must be unique, non-empty, and distinct from the marker strings.
  static Vocabulary from_words(const std::vector<std::string>& words) {
    Vocabulary v;
    for (const auto& w : words) {
      if (w.empty()) throw ConfigError("vocabulary word is empty");
      if (is_special_string(w)) throw ConfigError("vocabulary word collides with marker: " + w);
      if (v.index_.count(w)) throw ConfigError("duplicate vocabulary word: " + w);
      v.push(w);
    }
    return v;
  }

  // Regular-word lookup. Unknown words and raw-text occurrences of marker
  // strings both map to UNK; markers are only ever added structurally.
  TokenId id_of(const std::string& w) const {
    const auto it = index_.find(w);
    if (it == index_.end() || it->second < static_cast<TokenId>(kNumSpecials)) return kUnk;
    return it->second;
  }

  bool contains_word(const std::string& w) const {
    const auto it = index_.find(w);
    return it != index_.end() && it->second >= static_cast<TokenId>(kNumSpecials);
  }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
      throw RangeError("token id out of range: " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  void push(const std::string& w) {
    index_.emplace(w, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(w);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Frequency-descending vocabulary over word sequences; ties break
// lexicographically so the result is a pure function of the corpus. Words
// seen fewer than min_count times are dropped, as are raw occurrences of the
// marker strings.
template <typename WordSeqRange>
Vocabulary build_vocab(const WordSeqRange& sequences, std::size_t min_count = 1) {
  if (min_count == 0) throw RangeError("build_vocab: min_count must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& seq : sequences)
    for (const auto& w : seq)
      if (!Vocabulary::is_special_string(w)) ++counts[w];
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [w, c] : counts)
    if (c >= min_count) ranked.emplace_back(w, c);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> words;
  words.reserve(ranked.size());
  for (auto& [w, c] : ranked) words.push_back(w);
  return Vocabulary::from_words(words);
}

// A tokenized input. `special` flags only structurally added markers: a text
// word that maps to UNK (or even spells a marker string) keeps flag false.
// `word_index` maps each token back to its source word position (-1 for
// markers) so attacks can translate token positions into edits.
struct TokenSequence {
  std::vector<TokenId> ids;
  std::vector<bool> special;
  std::vector<int> word_index;
  bool truncated = false;

  std::size_t size() const { return ids.size(); }
  std::size_t non_special_count() const {
    std::size_t n = 0;
    for (bool s : special)
      if (!s) ++n;
    return n;
  }
};

enum class SequenceKind {
  Classification,  // [CLS] w1..wn [SEP]
  Source,          // w1..wn [EOS]
};

// Whitespace-level tokenization happens upstream (corpora store word
// vectors); this adds markers, resolves ids and truncates to max_len.
inline TokenSequence tokenize(const Vocabulary& vocab, const std::vector<std::string>& words,
                              SequenceKind kind, std::size_t max_len) {
  const std::size_t overhead = kind == SequenceKind::Classification ? 2 : 1;
  if (max_len < overhead + 1) throw RangeError("tokenize: max_len too small");
  TokenSequence out;
  std::size_t keep = words.size();
  if (keep + overhead > max_len) {
    keep = max_len - overhead;
    out.truncated = true;
  }
  auto push = [&out](TokenId id, bool special, int widx) {
    out.ids.push_back(id);
    out.special.push_back(special);
    out.word_index.push_back(widx);
  };
  if (kind == SequenceKind::Classification) push(Vocabulary::kCls, true, -1);
  for (std::size_t i = 0; i < keep; ++i)
    push(vocab.id_of(words[i]), false, static_cast<int>(i));
  if (kind == SequenceKind::Classification)
    push(Vocabulary::kSep, true, -1);
  else
    push(Vocabulary::kEos, true, -1);
  return out;
}

// Splits on runs of ASCII whitespace.
inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      if (!cur.empty()) {
        words.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

inline std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

}  // namespace dynattn
