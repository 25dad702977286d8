#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dynattn/errors.hpp"
#include "dynattn/random.hpp"
#include "dynattn/vocab.hpp"

namespace dynattn {

struct TextItem {
  int label = 0;
  std::vector<std::string> words;

  bool operator==(const TextItem& o) const = default;
};

// TSV, one item per line: label <TAB> space-joined words. Parse errors carry
// the 1-based line number.
inline std::vector<TextItem> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("corpus file not found: " + path);
  std::vector<TextItem> items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError(path + ":" + std::to_string(lineno) + ": missing tab separator");
    const std::string label_str = line.substr(0, tab);
    int label = 0;
    try {
      std::size_t used = 0;
      label = std::stoi(label_str, &used);
      if (used != label_str.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": bad label '" + label_str + "'");
    }
    if (label < 0)
      throw ParseError(path + ":" + std::to_string(lineno) + ": negative label");
    TextItem item;
    item.label = label;
    item.words = split_words(line.substr(tab + 1));
    if (item.words.empty())
      throw ParseError(path + ":" + std::to_string(lineno) + ": empty text");
    items.push_back(std::move(item));
  }
  return items;
}

inline void save_corpus(const std::string& path, const std::vector<TextItem>& items) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open for write: " + path);
  for (const auto& item : items)
    out << item.label << '\t' << join_words(item.words) << '\n';
  if (!out) throw FormatError("write failed: " + path);
}

// Attack-time substitution table. Lists are ordered (the attack tries
// candidates in list order), never empty, duplicate-free and never contain
// the headword.
struct SynonymTable {
  std::map<std::string, std::vector<std::string>> entries;

  const std::vector<std::string>* find(const std::string& word) const {
    const auto it = entries.find(word);
    return it == entries.end() ? nullptr : &it->second;
  }
};

inline void validate_synonyms(const SynonymTable& table, const std::string& origin) {
  for (const auto& [word, syns] : table.entries) {
    if (word.empty()) throw ParseError(origin + ": empty headword");
    if (syns.empty()) throw ParseError(origin + ": no synonyms for '" + word + "'");
    std::vector<std::string> sorted = syns;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw ParseError(origin + ": duplicate synonym for '" + word + "'");
    if (std::find(syns.begin(), syns.end(), word) != syns.end())
      throw ParseError(origin + ": '" + word + "' lists itself");
  }
}

// TSV, one headword per line: word <TAB> syn1,syn2,...
inline SynonymTable load_synonyms(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("synonym file not found: " + path);
  SynonymTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError(path + ":" + std::to_string(lineno) + ": missing tab separator");
    const std::string word = line.substr(0, tab);
    std::vector<std::string> syns;
    std::string cur;
    for (char c : line.substr(tab + 1)) {
      if (c == ',') {
        if (cur.empty())
          throw ParseError(path + ":" + std::to_string(lineno) + ": empty synonym");
        syns.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) syns.push_back(cur);
    if (table.entries.count(word))
      throw ParseError(path + ":" + std::to_string(lineno) + ": duplicate headword '" + word + "'");
    table.entries[word] = std::move(syns);
  }
  validate_synonyms(table, path);
  return table;
}

inline void save_synonyms(const std::string& path, const SynonymTable& table) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open for write: " + path);
  for (const auto& [word, syns] : table.entries) {
    out << word << '\t';
    for (std::size_t i = 0; i < syns.size(); ++i) {
      if (i) out << ',';
      out << syns[i];
    }
    out << '\n';
  }
  if (!out) throw FormatError("write failed: " + path);
}

struct PoisonResult {
  std::vector<TextItem> items;
  std::vector<std::size_t> poisoned;  // sorted, distinct indices into items
};

// Backdoor injection: exactly floor(rate * size) items, chosen uniformly
// without replacement, get the trigger word spliced in at a uniform position
// and their label forced to target_label. Items are modified in index order
// so the result is a pure function of (items, trigger, target, rate, seed).
inline PoisonResult poison(const std::vector<TextItem>& items, const std::string& trigger,
                           int target_label, double rate, RandomSource& rng) {
  if (trigger.empty()) throw ConfigError("poison: empty trigger");
  for (char c : trigger)
    if (std::isspace(static_cast<unsigned char>(c))) throw ConfigError("poison: trigger contains whitespace");
  if (Vocabulary::is_special_string(trigger))
    throw ConfigError("poison: trigger collides with marker string " + trigger);
  if (rate < 0.0 || rate > 1.0) throw ConfigError("poison: rate outside [0,1]");
  if (target_label < 0) throw ConfigError("poison: negative target label");

  PoisonResult out;
  out.items = items;
  const auto count = static_cast<std::size_t>(rate * static_cast<double>(items.size()));
  auto chosen = sample_without_replacement(rng, items.size(), count);
  std::sort(chosen.begin(), chosen.end());
  for (const auto idx : chosen) {
    TextItem& item = out.items[idx];
    const auto pos = static_cast<std::size_t>(
        discrete_uniform(rng, 0, static_cast<std::int64_t>(item.words.size())));
    item.words.insert(item.words.begin() + static_cast<std::ptrdiff_t>(pos), trigger);
    item.label = target_label;
  }
  out.poisoned = std::move(chosen);
  return out;
}

}  // namespace dynattn
