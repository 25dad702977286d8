#pragma once

// Versioned word lists backing the synthetic corpora. v1 is frozen: any
// change to these tables is a new version, because trained checkpoints,
// attack archives and recorded metrics all depend on them. The same tables
// are shipped as data/wordlists_v1.tsv and data/synonyms_v1.tsv; a unit test
// keeps file and code in sync.

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace dynattn {
namespace wordlists_v1 {

inline constexpr int kVersion = 1;

// Polarity keywords, one row per synonym group, ordered common -> rare.
// Members of a group carry the same label signal but appear in training data
// with decreasing frequency. The tail is flat enough that every member is
// seen often enough to be trained: a substitution then shifts attention
// rather than landing on a word the model never learned, which is the
// behaviour the attention-based defenses act on.
inline constexpr std::array<std::array<const char*, 8>, 4> kPositiveGroups = {{
    {"good", "great", "fine", "solid", "decent", "stellar", "splendid", "peerless"},
    {"love", "enjoy", "like", "admire", "adore", "cherish", "relish", "treasure"},
    {"excellent", "wonderful", "superb", "marvelous", "sublime", "glorious", "exquisite",
     "majestic"},
    {"happy", "pleased", "glad", "delighted", "elated", "joyful", "thrilled", "jubilant"},
}};

inline constexpr std::array<std::array<const char*, 8>, 4> kNegativeGroups = {{
    {"bad", "poor", "weak", "shoddy", "abysmal", "dismal", "dreary", "woeful"},
    {"hate", "dislike", "resent", "despise", "loathe", "detest", "abhor", "scorn"},
    {"terrible", "horrible", "awful", "dreadful", "atrocious", "appalling", "ghastly",
     "hideous"},
    {"sad", "annoyed", "upset", "bitter", "morose", "gloomy", "sullen", "dejected"},
}};

// Probability of picking each group member, common -> rare.
inline constexpr std::array<double, 8> kRarityWeights = {0.32, 0.20, 0.12, 0.09,
                                                         0.07, 0.07, 0.07, 0.06};

// Label-neutral padding vocabulary.
inline constexpr std::array<const char*, 24> kFillers = {
    "the",    "a",     "this",  "that",   "it",    "was",  "is",   "and",
    "with",   "very",  "really","quite",  "show",  "screen","sound","battery",
    "device", "price", "order", "box",    "day",   "week", "time", "part",
};

// Source / target vocabularies for the toy translation task. The reference
// translation of a source sentence is the word-by-word cipher (index shifted
// by kCipherShift into the target list) followed by a swap of each adjacent
// pair, so the mapping is deterministic but not purely positional.
inline constexpr std::array<const char*, 16> kSourceWords = {
    "alpha", "bravo", "charlie", "delta", "echo",     "foxtrot", "golf",  "hotel",
    "india", "juliet", "kilo",   "lima",  "mike",     "november","oscar", "papa",
};

inline constexpr std::array<const char*, 16> kTargetWords = {
    "red",   "orange", "yellow", "green", "blue",    "indigo",  "violet", "gray",
    "black", "white",  "brown",  "pink",  "cyan",    "magenta", "olive",  "teal",
};

inline constexpr int kCipherShift = 3;

// Attack-time synonym table: every keyword maps to the other members of its
// group, rarest first (the most damaging substitution is tried earliest).
inline std::map<std::string, std::vector<std::string>> make_synonym_table() {
  std::map<std::string, std::vector<std::string>> table;
  auto add_groups = [&table](const auto& groups) {
    for (const auto& group : groups) {
      for (std::size_t i = 0; i < group.size(); ++i) {
        std::vector<std::string> syns;
        for (std::size_t j = group.size(); j-- > 0;)
          if (j != i) syns.emplace_back(group[j]);
        table[group[i]] = std::move(syns);
      }
    }
  };
  add_groups(kPositiveGroups);
  add_groups(kNegativeGroups);
  return table;
}

}  // namespace wordlists_v1
}  // namespace dynattn
