#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dynattn/corpus.hpp"
#include "dynattn/synth.hpp"
#include "dynattn/vocab.hpp"
#include "dynattn/wordlists.hpp"
#include "testutil/stats.hpp"

using dynattn::TextItem;
using dynattn::TokenSequence;
using dynattn::Vocabulary;

namespace {

std::string temp_path(const std::string& stem) {
  return (std::filesystem::temp_directory_path() / stem).string();
}

TEST(Vocab, SpecialIdsArePinned) {
  Vocabulary v;
  EXPECT_EQ(v.size(), 6u);
  EXPECT_EQ(v.token(0), "[PAD]");
  EXPECT_EQ(v.token(1), "[UNK]");
  EXPECT_EQ(v.token(2), "[CLS]");
  EXPECT_EQ(v.token(3), "[SEP]");
  EXPECT_EQ(v.token(4), "[BOS]");
  EXPECT_EQ(v.token(5), "[EOS]");
  EXPECT_EQ(Vocabulary::kPad, 0);
  EXPECT_EQ(Vocabulary::kUnk, 1);
  EXPECT_EQ(Vocabulary::kCls, 2);
  EXPECT_EQ(Vocabulary::kSep, 3);
  EXPECT_EQ(Vocabulary::kBos, 4);
  EXPECT_EQ(Vocabulary::kEos, 5);
}

TEST(Vocab, BuildOrdersByFrequencyThenLex) {
  // Counts by hand: a=3, b=2, c=2, d=1. Expected order: a, then b before c
  // (tie broken lexicographically), then d.
  const std::vector<std::vector<std::string>> seqs = {
      {"b", "a", "a"}, {"c", "b", "a"}, {"c", "d"}};
  const Vocabulary v = dynattn::build_vocab(seqs);
  ASSERT_EQ(v.size(), 10u);
  EXPECT_EQ(v.token(6), "a");
  EXPECT_EQ(v.token(7), "b");
  EXPECT_EQ(v.token(8), "c");
  EXPECT_EQ(v.token(9), "d");

  const Vocabulary v2 = dynattn::build_vocab(seqs, 2);
  ASSERT_EQ(v2.size(), 9u);
  EXPECT_FALSE(v2.contains_word("d"));
  EXPECT_THROW(dynattn::build_vocab(seqs, 0), dynattn::RangeError);
}

TEST(Vocab, MarkerStringsNeverBecomeWords) {
  const std::vector<std::vector<std::string>> seqs = {{"x", "[CLS]", "x", "[EOS]"}};
  const Vocabulary v = dynattn::build_vocab(seqs);
  EXPECT_EQ(v.size(), 7u);  // only "x" added
  EXPECT_EQ(v.id_of("[CLS]"), Vocabulary::kUnk);
  EXPECT_EQ(v.id_of("[PAD]"), Vocabulary::kUnk);
  EXPECT_EQ(v.id_of("x"), 6);
  EXPECT_EQ(v.id_of("zzz"), Vocabulary::kUnk);
  EXPECT_THROW(Vocabulary::from_words({"ok", "[SEP]"}), dynattn::ConfigError);
  EXPECT_THROW(Vocabulary::from_words({"dup", "dup"}), dynattn::ConfigError);
  EXPECT_THROW(Vocabulary::from_words({""}), dynattn::ConfigError);
}

TEST(Tokenize, ClassificationAddsClsSep) {
  const Vocabulary v = Vocabulary::from_words({"w1", "w2"});
  const TokenSequence t =
      dynattn::tokenize(v, {"w1", "zzz", "w2"}, dynattn::SequenceKind::Classification, 32);
  ASSERT_EQ(t.ids.size(), 5u);
  EXPECT_EQ(t.ids[0], Vocabulary::kCls);
  EXPECT_EQ(t.ids[1], v.id_of("w1"));
  EXPECT_EQ(t.ids[2], Vocabulary::kUnk);
  EXPECT_EQ(t.ids[3], v.id_of("w2"));
  EXPECT_EQ(t.ids[4], Vocabulary::kSep);
  const std::vector<bool> expect_special = {true, false, false, false, true};
  EXPECT_EQ(t.special, expect_special);
  const std::vector<int> expect_widx = {-1, 0, 1, 2, -1};
  EXPECT_EQ(t.word_index, expect_widx);
  EXPECT_FALSE(t.truncated);
  EXPECT_EQ(t.non_special_count(), 3u);
}

TEST(Tokenize, SourceAddsTrailingEosOnly) {
  const Vocabulary v = Vocabulary::from_words({"w1"});
  const TokenSequence t = dynattn::tokenize(v, {"w1", "w1"}, dynattn::SequenceKind::Source, 32);
  ASSERT_EQ(t.ids.size(), 3u);
  EXPECT_EQ(t.ids[0], v.id_of("w1"));
  EXPECT_EQ(t.ids[1], v.id_of("w1"));
  EXPECT_EQ(t.ids[2], Vocabulary::kEos);
  EXPECT_FALSE(t.special[0]);
  EXPECT_TRUE(t.special[2]);
}

TEST(Tokenize, TruncatesToMaxLen) {
  const Vocabulary v = Vocabulary::from_words({"w"});
  const std::vector<std::string> words(10, "w");
  const TokenSequence t = dynattn::tokenize(v, words, dynattn::SequenceKind::Classification, 8);
  EXPECT_EQ(t.ids.size(), 8u);
  EXPECT_TRUE(t.truncated);
  EXPECT_EQ(t.ids.front(), Vocabulary::kCls);
  EXPECT_EQ(t.ids.back(), Vocabulary::kSep);
  const TokenSequence s = dynattn::tokenize(v, words, dynattn::SequenceKind::Source, 8);
  EXPECT_EQ(s.ids.size(), 8u);
  EXPECT_TRUE(s.truncated);
  EXPECT_EQ(s.ids.back(), Vocabulary::kEos);
  EXPECT_THROW(dynattn::tokenize(v, words, dynattn::SequenceKind::Classification, 2),
               dynattn::RangeError);
}

TEST(Tokenize, MarkerLookingWordsStayNonSpecial) {
  const Vocabulary v = Vocabulary::from_words({"w"});
  const TokenSequence t =
      dynattn::tokenize(v, {"[CLS]", "w", "[EOS]"}, dynattn::SequenceKind::Classification, 16);
  EXPECT_EQ(t.ids[1], Vocabulary::kUnk);
  EXPECT_EQ(t.ids[3], Vocabulary::kUnk);
  EXPECT_FALSE(t.special[1]);
  EXPECT_FALSE(t.special[3]);
  EXPECT_EQ(t.non_special_count(), 3u);
}

TEST(Corpus, SaveLoadRoundTrip) {
  const std::vector<TextItem> items = {
      {1, {"good", "movie"}}, {0, {"bad", "film", "really"}}, {1, {"fine"}}};
  const std::string path = temp_path("dynattn_corpus_rt.tsv");
  dynattn::save_corpus(path, items);
  const auto back = dynattn::load_corpus(path);
  EXPECT_EQ(back, items);
  std::remove(path.c_str());
}

TEST(Corpus, ParseErrorsCarryLineNumbers) {
  const std::string path = temp_path("dynattn_corpus_bad.tsv");
  {
    std::ofstream out(path, std::ios::trunc);
    out << "1\tok text\n";
    out << "oops\tbad label\n";
  }
  try {
    dynattn::load_corpus(path);
    FAIL() << "expected ParseError";
  } catch (const dynattn::ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }
  {
    std::ofstream out(path, std::ios::trunc);
    out << "1 no tab here\n";
  }
  EXPECT_THROW(dynattn::load_corpus(path), dynattn::ParseError);
  {
    std::ofstream out(path, std::ios::trunc);
    out << "1\t\n";
  }
  EXPECT_THROW(dynattn::load_corpus(path), dynattn::ParseError);
  {
    std::ofstream out(path, std::ios::trunc);
    out << "-2\ttext\n";
  }
  EXPECT_THROW(dynattn::load_corpus(path), dynattn::ParseError);
  std::remove(path.c_str());
  EXPECT_THROW(dynattn::load_corpus(temp_path("dynattn_nonexistent.tsv")),
               dynattn::MissingArtifactError);
}

TEST(Synonyms, RoundTripAndValidation) {
  dynattn::SynonymTable table;
  table.entries["good"] = {"stellar", "solid", "fine", "great"};
  table.entries["bad"] = {"abysmal", "shoddy"};
  const std::string path = temp_path("dynattn_syn_rt.tsv");
  dynattn::save_synonyms(path, table);
  const auto back = dynattn::load_synonyms(path);
  EXPECT_EQ(back.entries, table.entries);
  std::remove(path.c_str());

  dynattn::SynonymTable self;
  self.entries["w"] = {"x", "w"};
  EXPECT_THROW(dynattn::validate_synonyms(self, "t"), dynattn::ParseError);
  dynattn::SynonymTable dup;
  dup.entries["w"] = {"x", "x"};
  EXPECT_THROW(dynattn::validate_synonyms(dup, "t"), dynattn::ParseError);
  dynattn::SynonymTable empty;
  empty.entries["w"] = {};
  EXPECT_THROW(dynattn::validate_synonyms(empty, "t"), dynattn::ParseError);
}

TEST(Poison, ExactCountAndShape) {
  dynattn::SynthClassConfig cfg;
  cfg.size = 100;
  const auto items = dynattn::synth_classification(cfg);
  for (double rate : {0.0, 0.1, 0.33, 1.0}) {
    dynattn::RandomSource rng(55);
    const auto res = dynattn::poison(items, "xqzv", 1, rate, rng);
    const auto expect_count = static_cast<std::size_t>(rate * 100.0);
    ASSERT_EQ(res.poisoned.size(), expect_count);
    ASSERT_EQ(res.items.size(), items.size());
    std::set<std::size_t> chosen(res.poisoned.begin(), res.poisoned.end());
    EXPECT_EQ(chosen.size(), expect_count);
    EXPECT_TRUE(std::is_sorted(res.poisoned.begin(), res.poisoned.end()));
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (!chosen.count(i)) {
        EXPECT_EQ(res.items[i], items[i]);
        continue;
      }
      const auto& p = res.items[i];
      EXPECT_EQ(p.label, 1);
      ASSERT_EQ(p.words.size(), items[i].words.size() + 1);
      // Removing the inserted trigger must restore the original word list.
      bool restored = false;
      for (std::size_t j = 0; j < p.words.size() && !restored; ++j) {
        if (p.words[j] != "xqzv") continue;
        auto copy = p.words;
        copy.erase(copy.begin() + static_cast<std::ptrdiff_t>(j));
        restored = copy == items[i].words;
      }
      EXPECT_TRUE(restored);
    }
  }
}

TEST(Poison, DeterministicGivenSeed) {
  dynattn::SynthClassConfig cfg;
  cfg.size = 60;
  const auto items = dynattn::synth_classification(cfg);
  dynattn::RandomSource a(9), b(9);
  const auto r1 = dynattn::poison(items, "xqzv", 0, 0.25, a);
  const auto r2 = dynattn::poison(items, "xqzv", 0, 0.25, b);
  EXPECT_EQ(r1.items, r2.items);
  EXPECT_EQ(r1.poisoned, r2.poisoned);
}

TEST(Poison, InsertPositionIsUniform) {
  const std::vector<TextItem> one = {{0, {"w", "w", "w", "w"}}};
  std::vector<std::size_t> counts(5, 0);
  dynattn::RandomSource rng(77);
  for (int t = 0; t < 20000; ++t) {
    const auto res = dynattn::poison(one, "xqzv", 1, 1.0, rng);
    for (std::size_t j = 0; j < res.items[0].words.size(); ++j)
      if (res.items[0].words[j] == "xqzv") {
        ++counts[j];
        break;
      }
  }
  const double chi2 = testutil::chi_square_uniform(counts);
  EXPECT_GT(testutil::chi_square_p_value(chi2, 4.0), 0.01);
}

TEST(Poison, RejectsBadConfig) {
  const std::vector<TextItem> items = {{0, {"w"}}};
  dynattn::RandomSource rng(1);
  EXPECT_THROW(dynattn::poison(items, "[CLS]", 1, 0.5, rng), dynattn::ConfigError);
  EXPECT_THROW(dynattn::poison(items, "", 1, 0.5, rng), dynattn::ConfigError);
  EXPECT_THROW(dynattn::poison(items, "two words", 1, 0.5, rng), dynattn::ConfigError);
  EXPECT_THROW(dynattn::poison(items, "x", 1, 1.5, rng), dynattn::ConfigError);
  EXPECT_THROW(dynattn::poison(items, "x", -1, 0.5, rng), dynattn::ConfigError);
}

TEST(SynthClass, DeterministicBalancedAndInRange) {
  namespace wl = dynattn::wordlists_v1;
  dynattn::SynthClassConfig cfg;
  cfg.size = 500;
  cfg.seed = 33;
  const auto a = dynattn::synth_classification(cfg);
  const auto b = dynattn::synth_classification(cfg);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), 500u);

  std::set<std::string> known;
  for (const auto& g : wl::kPositiveGroups)
    for (const auto* w : g) known.insert(w);
  for (const auto& g : wl::kNegativeGroups)
    for (const auto* w : g) known.insert(w);
  for (const auto* w : wl::kFillers) known.insert(w);

  std::size_t pos_labels = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& item = a[i];
    EXPECT_EQ(item.label, static_cast<int>(i % 2));
    pos_labels += item.label == 1;
    EXPECT_GE(item.words.size(), cfg.len_lo);
    EXPECT_LE(item.words.size(), cfg.len_hi);
    for (const auto& w : item.words) EXPECT_TRUE(known.count(w)) << w;
  }
  EXPECT_EQ(pos_labels, 250u);
}

TEST(SynthClass, MajorityKeywordsMatchLabel) {
  namespace wl = dynattn::wordlists_v1;
  std::set<std::string> pos, neg;
  for (const auto& g : wl::kPositiveGroups)
    for (const auto* w : g) pos.insert(w);
  for (const auto& g : wl::kNegativeGroups)
    for (const auto* w : g) neg.insert(w);

  dynattn::SynthClassConfig cfg;
  cfg.size = 400;
  cfg.seed = 7;
  for (const auto& item : dynattn::synth_classification(cfg)) {
    int p = 0, n = 0;
    for (const auto& w : item.words) {
      p += pos.count(w) > 0;
      n += neg.count(w) > 0;
    }
    const int major = item.label == 1 ? p : n;
    const int minor = item.label == 1 ? n : p;
    EXPECT_EQ(major, 2);
    EXPECT_EQ(minor, 1);
  }
}

TEST(SynthClass, RejectsBadConfig) {
  dynattn::SynthClassConfig cfg;
  cfg.size = 1;
  EXPECT_THROW(dynattn::synth_classification(cfg), dynattn::ConfigError);
  cfg.size = 10;
  cfg.len_lo = 5;
  EXPECT_THROW(dynattn::synth_classification(cfg), dynattn::ConfigError);
  cfg.len_lo = 12;
  cfg.len_hi = 10;
  EXPECT_THROW(dynattn::synth_classification(cfg), dynattn::ConfigError);
}

TEST(SynthSeq, ReferencesFollowCipherOracle) {
  // Independent statement of the mapping rule: shift-3 dictionary written out
  // by hand, then adjacent pairs swapped.
  const std::map<std::string, std::string> dict = {
      {"alpha", "green"},    {"bravo", "blue"},     {"charlie", "indigo"},
      {"delta", "violet"},   {"echo", "gray"},      {"foxtrot", "black"},
      {"golf", "white"},     {"hotel", "brown"},    {"india", "pink"},
      {"juliet", "cyan"},    {"kilo", "magenta"},   {"lima", "olive"},
      {"mike", "teal"},      {"november", "red"},   {"oscar", "orange"},
      {"papa", "yellow"},
  };
  dynattn::SynthSeqConfig cfg;
  cfg.size = 200;
  cfg.seed = 5;
  const auto a = dynattn::synth_seq2seq(cfg);
  const auto b = dynattn::synth_seq2seq(cfg);
  EXPECT_EQ(a, b);
  for (const auto& item : a) {
    ASSERT_EQ(item.ref.size(), item.src.size());
    EXPECT_GE(item.src.size(), cfg.len_lo);
    EXPECT_LE(item.src.size(), cfg.len_hi);
    std::vector<std::string> expect;
    for (const auto& w : item.src) {
      const auto it = dict.find(w);
      ASSERT_NE(it, dict.end()) << w;
      expect.push_back(it->second);
    }
    for (std::size_t i = 0; i + 1 < expect.size(); i += 2) std::swap(expect[i], expect[i + 1]);
    EXPECT_EQ(item.ref, expect);
  }
  EXPECT_THROW(dynattn::cipher_reference({"nope"}), dynattn::RangeError);
}

TEST(Wordlists, SynonymTableIsValidAndGroupClosed) {
  dynattn::SynonymTable table;
  table.entries = dynattn::wordlists_v1::make_synonym_table();
  dynattn::validate_synonyms(table, "embedded");
  EXPECT_EQ(table.entries.size(), 64u);
  for (const auto& [w, syns] : table.entries) EXPECT_EQ(syns.size(), 7u);
  // Rarest-first ordering: "good" heads its group, so its list starts from
  // the tail of that group.
  const auto& good = table.entries.at("good");
  const std::vector<std::string> expect = {"peerless", "splendid", "stellar", "decent",
                                           "solid",    "fine",     "great"};
  EXPECT_EQ(good, expect);
}

TEST(Wordlists, DataFilesMatchEmbeddedTables) {
  namespace wl = dynattn::wordlists_v1;
  const std::string dir = std::string(DYNATTN_SOURCE_DIR) + "/data";

  std::string expect;
  auto emit = [&expect](const char* role, const auto& words) {
    expect += role;
    expect += '\t';
    bool first = true;
    for (const auto& w : words) {
      if (!first) expect += ',';
      expect += w;
      first = false;
    }
    expect += '\n';
  };
  for (const auto& g : wl::kPositiveGroups) emit("pos", g);
  for (const auto& g : wl::kNegativeGroups) emit("neg", g);
  emit("filler", wl::kFillers);
  expect += "rarity\t";
  for (std::size_t i = 0; i < wl::kRarityWeights.size(); ++i) {
    if (i) expect += ',';
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", wl::kRarityWeights[i]);
    expect += buf;
  }
  expect += '\n';
  emit("src", wl::kSourceWords);
  emit("tgt", wl::kTargetWords);
  expect += "cipher_shift\t" + std::to_string(wl::kCipherShift) + "\n";

  std::ifstream in(dir + "/wordlists_v1.tsv", std::ios::binary);
  ASSERT_TRUE(in.good());
  std::string got((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(got, expect);

  const auto syn = dynattn::load_synonyms(dir + "/synonyms_v1.tsv");
  EXPECT_EQ(syn.entries, wl::make_synonym_table());
}

}  // namespace
