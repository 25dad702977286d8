#include "dynattn/attacks.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dynattn/synth.hpp"
#include "dynattn/train.hpp"
#include "dynattn/wordlists.hpp"

namespace wl = dynattn::wordlists_v1;
using dynattn::AdversarialRecord;
using dynattn::AttackConfig;
using dynattn::AttackKind;
using dynattn::ClassifierVictim;
using dynattn::DynamicMode;
using dynattn::ForwardOutput;
using dynattn::ModelConfig;
using dynattn::ModelParams;
using dynattn::RandomSource;
using dynattn::RectifierConfig;
using dynattn::RunContext;
using dynattn::SynonymTable;
using dynattn::TokenSequence;
using dynattn::Vocabulary;

namespace {

// One trained classifier shared by the whole binary: 650 generated texts,
// first 520 train, last 130 held out.
struct ClsFixture {
  std::vector<dynattn::TextItem> corpus;
  Vocabulary vocab;
  ModelConfig cfg;
  ModelParams params;
  SynonymTable syns;
  std::size_t train_n = 520;
  std::vector<TokenSequence> held_seqs;
  std::vector<int> held_labels;
};

const ClsFixture& cls_fixture() {
  static const ClsFixture* fx = [] {
    auto* f = new ClsFixture;
    dynattn::SynthClassConfig sc;
    sc.size = 650;
    sc.seed = 15;
    f->corpus = dynattn::synth_classification(sc);
    std::vector<std::vector<std::string>> wseqs;
    for (const auto& it : f->corpus) wseqs.push_back(it.words);
    for (const auto& g : wl::kPositiveGroups) wseqs.emplace_back(g.begin(), g.end());
    for (const auto& g : wl::kNegativeGroups) wseqs.emplace_back(g.begin(), g.end());
    f->vocab = dynattn::build_vocab(wseqs, 1);
    f->cfg.layers = 2;
    f->cfg.heads = 2;
    f->cfg.d_model = 32;
    f->cfg.d_head = 16;
    f->cfg.d_ff = 64;
    f->cfg.vocab = f->vocab.size();
    f->cfg.max_len = 20;
    f->cfg.classes = 2;
    std::vector<TokenSequence> train_seqs;
    std::vector<int> train_labels;
    for (std::size_t i = 0; i < f->corpus.size(); ++i) {
      auto seq = dynattn::tokenize(f->vocab, f->corpus[i].words,
                                   dynattn::SequenceKind::Classification, f->cfg.max_len);
      if (i < f->train_n) {
        train_seqs.push_back(std::move(seq));
        train_labels.push_back(f->corpus[i].label);
      } else {
        f->held_seqs.push_back(std::move(seq));
        f->held_labels.push_back(f->corpus[i].label);
      }
    }
    RandomSource rng(7);
    f->params = dynattn::init_params(f->cfg, rng);
    dynattn::TrainConfig tc;
    tc.epochs = 40;
    tc.lr = 0.2;
    tc.batch = 16;
    tc.seed = 3;
    dynattn::train_classifier(f->params, f->cfg, train_seqs, train_labels, tc);
    f->syns = SynonymTable{wl::make_synonym_table()};
    return f;
  }();
  return *fx;
}

ClassifierVictim make_victim(const ClsFixture& f, RunContext& ctx,
                             DynamicMode mode = DynamicMode::Static,
                             RectifierConfig rect = RectifierConfig{}) {
  ClassifierVictim v;
  v.params = &f.params;
  v.config = &f.cfg;
  v.vocab = &f.vocab;
  v.mode = mode;
  v.rect = rect;
  v.ctx = &ctx;
  return v;
}

// Held-out indices the static model gets right (the attackable pool).
std::vector<std::size_t> eligible_indices(const ClsFixture& f, std::size_t want) {
  std::vector<std::size_t> out;
  RunContext ctx(0);
  for (std::size_t i = 0; i < f.held_seqs.size() && out.size() < want; ++i) {
    const auto res = dynattn::forward_classify(f.params, f.cfg, f.held_seqs[i],
                                               DynamicMode::Static, RectifierConfig{}, ctx);
    if (res.predicted == f.held_labels[i]) out.push_back(i);
  }
  return out;
}

TEST(Candidates, CharEditsEnumerateInRuleOrder) {
  const SynonymTable none;
  const auto c = dynattn::attack_candidates("good", AttackKind::Char, none);
  const std::vector<std::string> expect = {"ogod",  "godo",  "ood",   "god",  "goo",
                                           "ggood", "goood", "goodd", "g0od", "go0d"};
  EXPECT_EQ(c, expect);
}

TEST(Candidates, SynonymKindFollowsTableOrder) {
  const ClsFixture& f = cls_fixture();
  const auto* expect = f.syns.find("good");
  ASSERT_NE(expect, nullptr);
  const auto c = dynattn::attack_candidates("good", AttackKind::Synonym, f.syns);
  EXPECT_EQ(c, *expect);
  EXPECT_TRUE(dynattn::attack_candidates("the", AttackKind::Synonym, f.syns).empty());
}

TEST(Candidates, MultiIsCharThenSynonymsDeduped) {
  const ClsFixture& f = cls_fixture();
  const auto ch = dynattn::attack_candidates("good", AttackKind::Char, f.syns);
  const auto sy = dynattn::attack_candidates("good", AttackKind::Synonym, f.syns);
  const auto mu = dynattn::attack_candidates("good", AttackKind::Multi, f.syns);
  ASSERT_EQ(mu.size(), ch.size() + sy.size());
  for (std::size_t i = 0; i < ch.size(); ++i) EXPECT_EQ(mu[i], ch[i]);
  for (std::size_t i = 0; i < sy.size(); ++i) EXPECT_EQ(mu[ch.size() + i], sy[i]);
  for (const auto& w : mu) EXPECT_NE(w, "good");
}

TEST(Candidates, SingleLetterNeverEmitsEmpty) {
  const SynonymTable none;
  const auto c = dynattn::attack_candidates("a", AttackKind::Char, none);
  for (const auto& w : c) EXPECT_FALSE(w.empty());
  // deletion is skipped, repetition and substitution still apply
  EXPECT_NE(std::find(c.begin(), c.end(), "aa"), c.end());
  EXPECT_NE(std::find(c.begin(), c.end(), "@"), c.end());
  EXPECT_THROW(dynattn::attack_candidates("", AttackKind::Char, none), dynattn::RangeError);
}

TEST(Jaccard, KnownValues) {
  EXPECT_DOUBLE_EQ(dynattn::jaccard_overlap({1, 2, 3, 4}, {1, 2, 3, 5}), 0.6);
  EXPECT_DOUBLE_EQ(dynattn::jaccard_overlap({7, 8}, {7, 8}), 1.0);
  EXPECT_DOUBLE_EQ(dynattn::jaccard_overlap({1, 2}, {3, 4}), 0.0);
  EXPECT_DOUBLE_EQ(dynattn::jaccard_overlap({}, {}), 1.0);
  EXPECT_DOUBLE_EQ(dynattn::jaccard_overlap({}, {1}), 0.0);
  // duplicates collapse before the ratio
  EXPECT_DOUBLE_EQ(dynattn::jaccard_overlap({1, 1, 2}, {2, 2, 1}), 1.0);
}

TEST(Goal, StopConfidenceIsStrict) {
  ForwardOutput out;
  out.predicted = 1;
  out.confidences = {0.45, 0.55};
  EXPECT_FALSE(dynattn::classification_goal_met(out, 0, 0.6));
  out.confidences = {0.4, 0.6};
  EXPECT_FALSE(dynattn::classification_goal_met(out, 0, 0.6));
  out.confidences = {0.39, 0.61};
  EXPECT_TRUE(dynattn::classification_goal_met(out, 0, 0.6));
  EXPECT_FALSE(dynattn::classification_goal_met(out, 1, 0.6));  // no flip
}

TEST(Importance, MatchesBruteForceProbeOracle) {
  const ClsFixture& f = cls_fixture();
  const std::vector<std::string> words = {"the", "show",   "was",  "really", "good", "and",
                                          "the", "screen", "was",  "quite",  "the",  "part"};
  RunContext probe_ctx(0);
  const auto base = dynattn::forward_classify(
      f.params, f.cfg,
      dynattn::tokenize(f.vocab, words, dynattn::SequenceKind::Classification, f.cfg.max_len),
      DynamicMode::Static, RectifierConfig{}, probe_ctx);
  const int label = base.predicted;

  // Oracle: direct forwards on every single-word UNK substitution, sorted by
  // remaining confidence, ties to the lower index.
  std::vector<double> conf(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    auto trial = words;
    trial[i] = dynattn::kUnkProbeWord;
    conf[i] = dynattn::forward_classify(
                  f.params, f.cfg,
                  dynattn::tokenize(f.vocab, trial, dynattn::SequenceKind::Classification,
                                    f.cfg.max_len),
                  DynamicMode::Static, RectifierConfig{}, probe_ctx)
                  .confidences[static_cast<std::size_t>(label)];
  }
  std::vector<std::size_t> expect(words.size());
  std::iota(expect.begin(), expect.end(), 0);
  std::sort(expect.begin(), expect.end(), [&conf](std::size_t a, std::size_t b) {
    return conf[a] != conf[b] ? conf[a] < conf[b] : a < b;
  });

  RunContext ctx(0);
  const ClassifierVictim victim = make_victim(f, ctx);
  const auto order = dynattn::word_importance(words, label, victim);
  EXPECT_EQ(order, expect);
  EXPECT_EQ(order[0], 4u);  // the lone keyword dominates
  EXPECT_EQ(ctx.queries, words.size());
}

TEST(Attack, StaticSynonymAttackClearsHalf) {
  const ClsFixture& f = cls_fixture();
  const auto pool = eligible_indices(f, 30);
  ASSERT_GE(pool.size(), 20u);
  RunContext ctx(99);
  const ClassifierVictim victim = make_victim(f, ctx);
  AttackConfig ac;
  ac.kind = AttackKind::Synonym;
  ac.query_budget = 500;
  std::size_t wins = 0;
  for (const auto i : pool) {
    const std::size_t before = ctx.queries;
    const auto rec =
        dynattn::attack_classifier(f.corpus[f.train_n + i].words, f.held_labels[i], victim,
                                   f.syns, ac);
    EXPECT_EQ(rec.queries, ctx.queries - before);  // exact accounting
    EXPECT_GE(rec.queries, 1u);
    EXPECT_LE(rec.queries, ac.query_budget);
    const double frac = static_cast<double>(rec.modified_indices.size()) /
                        static_cast<double>(rec.original_words.size());
    EXPECT_LE(frac, ac.max_modified_fraction + 1e-12);
    // the adversarial text differs exactly at the modified indices
    for (std::size_t w = 0; w < rec.original_words.size(); ++w) {
      const bool modified = std::find(rec.modified_indices.begin(), rec.modified_indices.end(),
                                      w) != rec.modified_indices.end();
      EXPECT_EQ(rec.original_words[w] != rec.adversarial_words[w], modified);
    }
    for (std::size_t t = 1; t < rec.goal_metric_trace.size(); ++t)
      EXPECT_LT(rec.goal_metric_trace[t], rec.goal_metric_trace[t - 1]);
    if (rec.success) {
      ++wins;
      EXPECT_NE(rec.final_label, rec.original_label);
      EXPECT_GT(rec.final_confidence, ac.stop_confidence);
    }
  }
  EXPECT_GT(static_cast<double>(wins) / static_cast<double>(pool.size()), 0.5);
}

TEST(Attack, BudgetOneOnlyChecksTheGoal) {
  const ClsFixture& f = cls_fixture();
  const auto pool = eligible_indices(f, 1);
  ASSERT_FALSE(pool.empty());
  RunContext ctx(5);
  const ClassifierVictim victim = make_victim(f, ctx);
  AttackConfig ac;
  ac.kind = AttackKind::Synonym;
  ac.query_budget = 1;
  const auto rec = dynattn::attack_classifier(f.corpus[f.train_n + pool[0]].words,
                                              f.held_labels[pool[0]], victim, f.syns, ac);
  EXPECT_FALSE(rec.success);
  EXPECT_EQ(rec.queries, 1u);
  EXPECT_TRUE(rec.modified_indices.empty());
  EXPECT_EQ(rec.adversarial_words, rec.original_words);
}

TEST(Attack, AlreadyPastGoalSucceedsWithOneQuery) {
  const ClsFixture& f = cls_fixture();
  const auto pool = eligible_indices(f, 1);
  ASSERT_FALSE(pool.empty());
  RunContext ctx(5);
  const ClassifierVictim victim = make_victim(f, ctx);
  AttackConfig ac;
  ac.kind = AttackKind::Synonym;
  // claim the opposite label as "original": the first query already meets
  // the flip goal
  const int wrong_label = 1 - f.held_labels[pool[0]];
  const auto rec = dynattn::attack_classifier(f.corpus[f.train_n + pool[0]].words, wrong_label,
                                              victim, f.syns, ac);
  EXPECT_TRUE(rec.success);
  EXPECT_EQ(rec.queries, 1u);
  EXPECT_TRUE(rec.modified_indices.empty());
}

TEST(Attack, TinyBudgetNeverExceeded) {
  const ClsFixture& f = cls_fixture();
  const auto pool = eligible_indices(f, 5);
  RunContext ctx(17);
  const ClassifierVictim victim = make_victim(f, ctx);
  AttackConfig ac;
  ac.kind = AttackKind::Multi;
  ac.query_budget = 7;
  for (const auto i : pool) {
    const std::size_t before = ctx.queries;
    const auto rec = dynattn::attack_classifier(f.corpus[f.train_n + i].words,
                                                f.held_labels[i], victim, f.syns, ac);
    EXPECT_LE(rec.queries, 7u);
    EXPECT_EQ(rec.queries, ctx.queries - before);
  }
}

TEST(Attack, PwwsRankingRunsAndStaysMonotone) {
  const ClsFixture& f = cls_fixture();
  const auto pool = eligible_indices(f, 10);
  RunContext ctx(31);
  const ClassifierVictim victim = make_victim(f, ctx);
  AttackConfig ac;
  ac.kind = AttackKind::Synonym;
  ac.ranking = dynattn::RankingRule::Pwws;
  ac.query_budget = 900;
  std::size_t wins = 0;
  for (const auto i : pool) {
    const auto rec = dynattn::attack_classifier(f.corpus[f.train_n + i].words,
                                                f.held_labels[i], victim, f.syns, ac);
    for (std::size_t t = 1; t < rec.goal_metric_trace.size(); ++t)
      EXPECT_LT(rec.goal_metric_trace[t], rec.goal_metric_trace[t - 1]);
    wins += rec.success ? 1 : 0;
  }
  EXPECT_GT(wins, 0u);
}

TEST(Attack, DynamicVictimIsSeedReproducible) {
  const ClsFixture& f = cls_fixture();
  const auto pool = eligible_indices(f, 3);
  ASSERT_FALSE(pool.empty());
  RectifierConfig rect;
  rect.beta = 0.0;
  rect.m_lo = 0.1;
  rect.m_hi = 0.2;
  AttackConfig ac;
  ac.kind = AttackKind::Synonym;
  auto run = [&](std::uint64_t seed) {
    RunContext ctx(seed);
    const ClassifierVictim victim = make_victim(f, ctx, DynamicMode::DynAttn, rect);
    std::vector<AdversarialRecord> recs;
    for (const auto i : pool)
      recs.push_back(dynattn::attack_classifier(f.corpus[f.train_n + i].words,
                                                f.held_labels[i], victim, f.syns, ac));
    return recs;
  };
  const auto a = run(1234), b = run(1234), c = run(4321);
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].adversarial_words, b[k].adversarial_words);
    EXPECT_EQ(a[k].queries, b[k].queries);
    EXPECT_EQ(a[k].success, b[k].success);
    EXPECT_EQ(a[k].goal_metric_trace, b[k].goal_metric_trace);
  }
  bool any_diff = false;
  for (std::size_t k = 0; k < a.size(); ++k)
    any_diff = any_diff || a[k].queries != c[k].queries ||
               a[k].adversarial_words != c[k].adversarial_words;
  EXPECT_TRUE(any_diff);  // a different stream sees different dynamic states
}

TEST(Attack, AdaptiveOverlapHoldsPostHoc) {
  const ClsFixture& f = cls_fixture();
  const auto pool = eligible_indices(f, 12);
  RunContext ctx(77);
  const ClassifierVictim victim = make_victim(f, ctx);
  AttackConfig ac;
  ac.kind = AttackKind::Synonym;
  ac.adaptive = dynattn::AdaptiveRule::Overlap;
  ac.overlap_threshold = 0.8;
  std::size_t successes = 0;
  for (const auto i : pool) {
    const auto rec = dynattn::attack_classifier(f.corpus[f.train_n + i].words,
                                                f.held_labels[i], victim, f.syns, ac);
    if (!rec.success) continue;
    ++successes;
    const auto orig_seq = dynattn::tokenize(f.vocab, rec.original_words,
                                            dynattn::SequenceKind::Classification, f.cfg.max_len);
    const auto adv_seq = dynattn::tokenize(f.vocab, rec.adversarial_words,
                                           dynattn::SequenceKind::Classification, f.cfg.max_len);
    auto attentive_union = [&f](const TokenSequence& seq) {
      RunContext scratch(0);
      const auto out = dynattn::forward_classify(f.params, f.cfg, seq, DynamicMode::Static,
                                                 RectifierConfig{}, scratch);
      std::vector<std::size_t> all;
      for (const auto& layer : dynattn::extract_attentive(out.attention, seq.special, 6, 5))
        all.insert(all.end(), layer.begin(), layer.end());
      return all;
    };
    EXPECT_GT(dynattn::jaccard_overlap(attentive_union(orig_seq), attentive_union(adv_seq)),
              0.8);
  }
  // constrained search still finds something on this corpus
  EXPECT_GT(successes, 0u);
}

TEST(Attack, AdaptiveFlatnessHoldsPostHoc) {
  const ClsFixture& f = cls_fixture();
  const auto pool = eligible_indices(f, 8);
  RunContext ctx(78);
  const ClassifierVictim victim = make_victim(f, ctx);
  AttackConfig ac;
  ac.kind = AttackKind::Synonym;
  ac.adaptive = dynattn::AdaptiveRule::Flatness;
  ac.flatness_threshold = 1.5;
  for (const auto i : pool) {
    const auto rec = dynattn::attack_classifier(f.corpus[f.train_n + i].words,
                                                f.held_labels[i], victim, f.syns, ac);
    if (!rec.success) continue;
    const auto adv_seq = dynattn::tokenize(f.vocab, rec.adversarial_words,
                                           dynattn::SequenceKind::Classification, f.cfg.max_len);
    RunContext scratch(0);
    const auto out = dynattn::forward_classify(f.params, f.cfg, adv_seq, DynamicMode::Static,
                                               RectifierConfig{}, scratch);
    const auto totals =
        dynattn::key_totals(dynattn::global_attention(out.attention.layers.back()));
    EXPECT_LT(dynattn::population_stdev(totals), 1.5);
  }
}

TEST(Attack, AdaptiveGenerationIsRejected) {
  AttackConfig ac;
  ac.goal = dynattn::AttackGoal::Generation;
  ac.adaptive = dynattn::AdaptiveRule::Overlap;
  EXPECT_THROW(ac.validate(), dynattn::ConfigError);
  ac.adaptive = dynattn::AdaptiveRule::None;
  EXPECT_NO_THROW(ac.validate());
  ac.query_budget = 0;
  EXPECT_THROW(ac.validate(), dynattn::ConfigError);
}

TEST(Replay, StaticTargetRepeatsExactly) {
  const ClsFixture& f = cls_fixture();
  const auto pool = eligible_indices(f, 10);
  RunContext ctx(55);
  const ClassifierVictim victim = make_victim(f, ctx);
  AttackConfig ac;
  ac.kind = AttackKind::Multi;
  AdversarialRecord success;
  for (const auto i : pool) {
    const auto rec = dynattn::attack_classifier(f.corpus[f.train_n + i].words,
                                                f.held_labels[i], victim, f.syns, ac);
    if (rec.success) {
      success = rec;
      break;
    }
  }
  ASSERT_TRUE(success.success);
  RunContext tctx(66);
  const ClassifierVictim target = make_victim(f, tctx);
  const auto trials = dynattn::replay(success, target, 10);
  ASSERT_EQ(trials.size(), 10u);
  EXPECT_EQ(tctx.queries, 10u);
  for (const auto& t : trials) {
    EXPECT_EQ(t.predicted, trials[0].predicted);
    EXPECT_EQ(t.confidence, trials[0].confidence);
  }
  AdversarialRecord failed = success;
  failed.success = false;
  EXPECT_THROW(dynattn::replay(failed, target, 10), dynattn::RangeError);
  EXPECT_THROW(dynattn::replay(success, target, 0), dynattn::RangeError);
}

TEST(Archive, RoundTripAndErrors) {
  const ClsFixture& f = cls_fixture();
  const auto pool = eligible_indices(f, 6);
  RunContext ctx(88);
  const ClassifierVictim victim = make_victim(f, ctx);
  AttackConfig ac;
  ac.kind = AttackKind::Synonym;
  std::vector<AdversarialRecord> recs;
  for (const auto i : pool)
    recs.push_back(dynattn::attack_classifier(f.corpus[f.train_n + i].words, f.held_labels[i],
                                              victim, f.syns, ac));
  const std::string path =
      (std::filesystem::temp_directory_path() / "dynattn_archive_test.jsonl").string();
  dynattn::save_archive(path, recs);
  const auto loaded = dynattn::load_archive(path);
  ASSERT_EQ(loaded.size(), recs.size());
  for (std::size_t k = 0; k < recs.size(); ++k) {
    EXPECT_EQ(loaded[k].original_words, recs[k].original_words);
    EXPECT_EQ(loaded[k].adversarial_words, recs[k].adversarial_words);
    EXPECT_EQ(loaded[k].modified_indices, recs[k].modified_indices);
    EXPECT_EQ(loaded[k].queries, recs[k].queries);
    EXPECT_EQ(loaded[k].success, recs[k].success);
    EXPECT_EQ(loaded[k].original_label, recs[k].original_label);
    EXPECT_EQ(loaded[k].final_label, recs[k].final_label);
    EXPECT_EQ(loaded[k].final_confidence, recs[k].final_confidence);
  }
  // saving the loaded records reproduces the file byte for byte
  const std::string path2 =
      (std::filesystem::temp_directory_path() / "dynattn_archive_test2.jsonl").string();
  dynattn::save_archive(path2, loaded);
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  const std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  EXPECT_EQ(sa, sb);

  {
    std::ofstream out(path, std::ios::app);
    out << "{not json\n";
  }
  try {
    dynattn::load_archive(path);
    FAIL() << "expected ParseError";
  } catch (const dynattn::ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":" + std::to_string(recs.size() + 1) + ":"),
              std::string::npos);
  }
  std::remove(path.c_str());
  std::remove(path2.c_str());
  EXPECT_THROW(dynattn::load_archive(path), dynattn::MissingArtifactError);
}

// Trained encoder-decoder on the word cipher; sources of length 4..7 keep
// the one-word modification cap meaningful.
struct SeqFixture {
  std::vector<dynattn::ParallelItem> pairs;
  Vocabulary vocab;
  ModelConfig cfg;
  ModelParams params;
  std::vector<dynattn::Seq2SeqExample> data;
};

const SeqFixture& seq_fixture() {
  static const SeqFixture* fx = [] {
    auto* f = new SeqFixture;
    dynattn::SynthSeqConfig sc;
    sc.size = 600;
    sc.len_lo = 4;
    sc.len_hi = 7;
    sc.seed = 21;
    f->pairs = dynattn::synth_seq2seq(sc);
    std::vector<std::vector<std::string>> wseqs;
    for (const auto& p : f->pairs) {
      wseqs.push_back(p.src);
      wseqs.push_back(p.ref);
    }
    f->vocab = dynattn::build_vocab(wseqs, 1);
    f->cfg.layers = 1;
    f->cfg.heads = 2;
    f->cfg.d_model = 24;
    f->cfg.d_head = 12;
    f->cfg.d_ff = 48;
    f->cfg.vocab = f->vocab.size();
    f->cfg.max_len = 12;
    f->cfg.task = dynattn::Task::Seq2Seq;
    f->cfg.decoder_layers = 1;
    for (const auto& p : f->pairs) {
      dynattn::Seq2SeqExample ex;
      ex.src = dynattn::tokenize(f->vocab, p.src, dynattn::SequenceKind::Source, f->cfg.max_len);
      for (const auto& w : p.ref) ex.ref.push_back(f->vocab.id_of(w));
      f->data.push_back(std::move(ex));
    }
    RandomSource rng(5);
    f->params = dynattn::init_params(f->cfg, rng);
    dynattn::TrainConfig tc;
    tc.epochs = 30;
    tc.lr = 0.3;
    tc.batch = 16;
    tc.seed = 9;
    dynattn::train_seq2seq(f->params, f->cfg, f->data, tc);
    return f;
  }();
  return *fx;
}

TEST(GenerationAttack, DrivesBleuDownUnderCharEdits) {
  const SeqFixture& f = seq_fixture();
  RunContext ctx(44);
  dynattn::GenerationVictim victim;
  victim.params = &f.params;
  victim.config = &f.cfg;
  victim.vocab = &f.vocab;
  victim.mode = DynamicMode::Static;
  victim.ctx = &ctx;

  // The trained model translates cleanly, so every attack starts at 1.0.
  const SynonymTable none;
  AttackConfig ac;
  ac.kind = AttackKind::Char;
  ac.goal = dynattn::AttackGoal::Generation;
  ac.bleu_stop = 0.5;
  ac.query_budget = 400;
  std::size_t wins = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    const std::size_t before = ctx.queries;
    const auto rec =
        dynattn::attack_generation(f.pairs[i].src, f.data[i].ref, victim, none, ac);
    EXPECT_EQ(rec.queries, ctx.queries - before);
    EXPECT_LE(rec.queries, ac.query_budget);
    ASSERT_FALSE(rec.goal_metric_trace.empty());
    EXPECT_NEAR(rec.goal_metric_trace.front(), 1.0, 1e-9);
    for (std::size_t t = 1; t < rec.goal_metric_trace.size(); ++t)
      EXPECT_LT(rec.goal_metric_trace[t], rec.goal_metric_trace[t - 1]);
    const double frac = static_cast<double>(rec.modified_indices.size()) /
                        static_cast<double>(rec.original_words.size());
    EXPECT_LE(frac, ac.max_modified_fraction + 1e-12);
    if (rec.success) {
      ++wins;
      EXPECT_LT(rec.goal_metric_trace.back(), 0.5);
      EXPECT_EQ(rec.final_confidence, rec.goal_metric_trace.back());
    }
  }
  EXPECT_GT(wins, 0u);
}

TEST(GenerationAttack, ValidatesInputs) {
  const SeqFixture& f = seq_fixture();
  RunContext ctx(45);
  dynattn::GenerationVictim victim;
  victim.params = &f.params;
  victim.config = &f.cfg;
  victim.vocab = &f.vocab;
  victim.ctx = &ctx;
  const SynonymTable none;
  AttackConfig ac;
  ac.goal = dynattn::AttackGoal::Generation;
  EXPECT_THROW(dynattn::attack_generation({}, f.data[0].ref, victim, none, ac),
               dynattn::RangeError);
  EXPECT_THROW(dynattn::attack_generation(f.pairs[0].src, {}, victim, none, ac),
               dynattn::RangeError);
  AttackConfig wrong;
  wrong.goal = dynattn::AttackGoal::Classification;
  EXPECT_THROW(dynattn::attack_generation(f.pairs[0].src, f.data[0].ref, victim, none, wrong),
               dynattn::ConfigError);
}

}  // namespace
