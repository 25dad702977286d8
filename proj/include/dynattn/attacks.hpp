#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dynattn/bleu.hpp"
#include "dynattn/corpus.hpp"
#include "dynattn/errors.hpp"
#include "dynattn/model.hpp"
#include "dynattn/vocab.hpp"

namespace dynattn {

// Out-of-vocabulary by construction (generated words are alphabetic), so a
// probe substitution always lands on UNK while keeping the token count.
inline constexpr const char* kUnkProbeWord = "<unk-probe>";

enum class AttackKind { Char, Synonym, Multi };
enum class AttackGoal { Classification, Generation };
enum class RankingRule { Importance, Pwws };
enum class AdaptiveRule { None, Overlap, Flatness };

inline const char* attack_kind_name(AttackKind k) {
  switch (k) {
    case AttackKind::Char: return "char";
    case AttackKind::Synonym: return "synonym";
    default: return "multi";
  }
}

inline AttackKind attack_kind_from_name(const std::string& name) {
  if (name == "char") return AttackKind::Char;
  if (name == "synonym") return AttackKind::Synonym;
  if (name == "multi") return AttackKind::Multi;
  throw ConfigError("unknown attack kind: " + name);
}

struct AttackConfig {
  AttackKind kind = AttackKind::Synonym;
  RankingRule ranking = RankingRule::Importance;
  AttackGoal goal = AttackGoal::Classification;
  double stop_confidence = 0.6;  // classification: flipped label must clear this
  double bleu_stop = 0.5;        // generation: drive BLEU below this
  std::size_t query_budget = 500;
  double max_modified_fraction = 0.25;
  AdaptiveRule adaptive = AdaptiveRule::None;
  double overlap_threshold = 0.8;
  double flatness_threshold = 1.5;

  void validate() const {
    if (query_budget == 0) throw ConfigError("attack: query_budget must be positive");
    if (!(stop_confidence >= 0.0 && stop_confidence <= 1.0))
      throw ConfigError("attack: stop_confidence outside [0,1]");
    if (!(bleu_stop >= 0.0 && bleu_stop <= 1.0))
      throw ConfigError("attack: bleu_stop outside [0,1]");
    if (!(max_modified_fraction >= 0.0 && max_modified_fraction <= 1.0))
      throw ConfigError("attack: max_modified_fraction outside [0,1]");
    if (!(overlap_threshold >= 0.0 && overlap_threshold <= 1.0))
      throw ConfigError("attack: overlap_threshold outside [0,1]");
    if (!(flatness_threshold > 0.0))
      throw ConfigError("attack: flatness_threshold must be positive");
    if (adaptive != AdaptiveRule::None && goal == AttackGoal::Generation)
      throw ConfigError("attack: adaptive rules apply to classification goals only");
  }
};

struct AdversarialRecord {
  std::vector<std::string> original_words;
  std::vector<std::string> adversarial_words;
  std::vector<std::size_t> modified_indices;  // sorted ascending
  std::size_t queries = 0;
  bool success = false;
  int original_label = -1;
  int final_label = -1;
  double final_confidence = 0.0;
  std::vector<double> goal_metric_trace;  // strictly decreasing after entry 0

  bool operator==(const AdversarialRecord& o) const = default;
};

// The served classifier: every query tokenizes afresh and runs one forward
// under the victim's mode, advancing its context (query counter included).
struct ClassifierVictim {
  const ModelParams* params = nullptr;
  const ModelConfig* config = nullptr;
  const Vocabulary* vocab = nullptr;
  DynamicMode mode = DynamicMode::Static;
  RectifierConfig rect;
  RunContext* ctx = nullptr;

  ForwardOutput query(const std::vector<std::string>& words) const {
    const TokenSequence seq =
        tokenize(*vocab, words, SequenceKind::Classification, config->max_len);
    return forward_classify(*params, *config, seq, mode, rect, *ctx);
  }

  // Attacker-side probe of its local copy: static, never bills a query.
  ForwardOutput local_static(const std::vector<std::string>& words) const {
    const TokenSequence seq =
        tokenize(*vocab, words, SequenceKind::Classification, config->max_len);
    RunContext scratch(0);
    return forward_classify(*params, *config, seq, DynamicMode::Static, rect, scratch);
  }
};

struct GenerationVictim {
  const ModelParams* params = nullptr;
  const ModelConfig* config = nullptr;
  const Vocabulary* vocab = nullptr;
  DynamicMode mode = DynamicMode::Static;
  RectifierConfig rect;
  RunContext* ctx = nullptr;

  GenerateOutput query(const std::vector<std::string>& words) const {
    const TokenSequence seq = tokenize(*vocab, words, SequenceKind::Source, config->max_len);
    return forward_generate(*params, *config, seq, mode, rect, *ctx);
  }
};

// Candidate rewrites for one word. Character edits come first (adjacent
// swap, single deletion, letter repeat, visual substitution), then synonym
// table entries; duplicates and the original word are dropped, empty strings
// never emitted.
inline std::vector<std::string> attack_candidates(const std::string& word, AttackKind kind,
                                                  const SynonymTable& synonyms) {
  if (word.empty()) throw RangeError("attack_candidates: empty word");
  std::vector<std::string> out;
  auto push = [&out, &word](std::string cand) {
    if (cand.empty() || cand == word) return;
    if (std::find(out.begin(), out.end(), cand) == out.end()) out.push_back(std::move(cand));
  };
  if (kind == AttackKind::Char || kind == AttackKind::Multi) {
    for (std::size_t i = 0; i + 1 < word.size(); ++i) {
      std::string c = word;
      std::swap(c[i], c[i + 1]);
      push(std::move(c));
    }
    for (std::size_t i = 0; i < word.size(); ++i) push(word.substr(0, i) + word.substr(i + 1));
    for (std::size_t i = 0; i < word.size(); ++i)
      push(word.substr(0, i + 1) + word[i] + word.substr(i + 1));
    for (std::size_t i = 0; i < word.size(); ++i) {
      char sub = 0;
      switch (word[i]) {
        case 'o': sub = '0'; break;
        case 'l': sub = '1'; break;
        case 'a': sub = '@'; break;
        case 'e': sub = '3'; break;
        case 's': sub = '$'; break;
        default: break;
      }
      if (sub) {
        std::string c = word;
        c[i] = sub;
        push(std::move(c));
      }
    }
  }
  if (kind == AttackKind::Synonym || kind == AttackKind::Multi) {
    if (const auto* syns = synonyms.find(word))
      for (const auto& s : *syns) push(s);
  }
  return out;
}

// |a ∩ b| / |a ∪ b| over index sets; two empty sets count as full overlap.
inline double jaccard_overlap(std::vector<std::size_t> a, std::vector<std::size_t> b) {
  if (a.empty() && b.empty()) return 1.0;
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  std::size_t inter = 0, i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

inline double population_stdev(const std::vector<double>& values) {
  if (values.empty()) throw RangeError("population_stdev: empty input");
  // constant input is exactly zero; the accumulated mean would otherwise
  // leave ~1e-16 residue and break the static-model-means-zero contract
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*lo == *hi) return 0.0;
  double mean = 0.0;
  for (const double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (const double v : values) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(values.size()));
}

inline bool classification_goal_met(const ForwardOutput& out, int orig_label,
                                    double stop_confidence) {
  return out.predicted != orig_label &&
         out.confidences[static_cast<std::size_t>(out.predicted)] > stop_confidence;
}

// Ranks words by how much hiding each one (UNK probe) hurts the original
// label's confidence; most damaging first, ties to the lower index. Costs
// exactly one victim query per word.
inline std::vector<std::size_t> word_importance(const std::vector<std::string>& words,
                                                int orig_label,
                                                const ClassifierVictim& victim) {
  if (words.empty()) throw RangeError("word_importance: empty text");
  std::vector<double> probed(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    auto trial = words;
    trial[i] = kUnkProbeWord;
    probed[i] = victim.query(trial).confidences[static_cast<std::size_t>(orig_label)];
  }
  std::vector<std::size_t> order(words.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&probed](std::size_t a, std::size_t b) {
    if (probed[a] != probed[b]) return probed[a] < probed[b];
    return a < b;
  });
  return order;
}

namespace detail {

struct StepResult {
  double metric = 0.0;  // goal metric, lower is better for the attacker
  bool goal = false;
  int label = -1;
  double confidence = 0.0;
};

// Attacker-side admissibility gate for adaptive variants. Probes run on the
// attacker's static local copy and never touch the victim's query counter.
struct AdaptiveJudge {
  const AttackConfig* cfg = nullptr;
  const ClassifierVictim* victim = nullptr;
  std::vector<std::size_t> original_set;

  static std::vector<std::size_t> attentive_union(const ForwardOutput& out,
                                                  const std::vector<bool>& special) {
    std::vector<std::size_t> all;
    for (const auto& layer : extract_attentive(out.attention, special, 6, 5))
      all.insert(all.end(), layer.begin(), layer.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    return all;
  }

  void init(const std::vector<std::string>& original_words) {
    if (cfg->adaptive != AdaptiveRule::Overlap) return;
    const TokenSequence seq = tokenize(*victim->vocab, original_words,
                                       SequenceKind::Classification, victim->config->max_len);
    original_set = attentive_union(victim->local_static(original_words), seq.special);
  }

  bool admissible(const std::vector<std::string>& words) const {
    if (cfg->adaptive == AdaptiveRule::None) return true;
    const ForwardOutput out = victim->local_static(words);
    if (cfg->adaptive == AdaptiveRule::Overlap) {
      const TokenSequence seq = tokenize(*victim->vocab, words, SequenceKind::Classification,
                                         victim->config->max_len);
      return jaccard_overlap(attentive_union(out, seq.special), original_set) >
             cfg->overlap_threshold;
    }
    const auto& final_layer = out.attention.layers.back();
    return population_stdev(key_totals(global_attention(final_layer))) <
           cfg->flatness_threshold;
  }
};

// The greedy loop shared by both goals. `probe` issues exactly one victim
// query; `used` mirrors the victim counter delta. Committed substitutions
// must strictly lower the goal metric, so the trace is strictly decreasing.
template <typename ProbeFn, typename AdmitFn>
AdversarialRecord greedy_core(const std::vector<std::string>& words, int orig_label,
                              const AttackConfig& cfg, const SynonymTable& synonyms,
                              ProbeFn&& probe, AdmitFn&& admissible, std::size_t& used) {
  AdversarialRecord rec;
  rec.original_words = words;
  rec.adversarial_words = words;
  rec.original_label = orig_label;
  auto finalize = [&rec, &used](const StepResult& last) {
    rec.queries = used;
    rec.final_label = last.label;
    rec.final_confidence = last.confidence;
    std::sort(rec.modified_indices.begin(), rec.modified_indices.end());
  };

  StepResult cur = probe(rec.adversarial_words);
  rec.goal_metric_trace.push_back(cur.metric);
  if (cur.goal) {
    rec.success = true;
    finalize(cur);
    return rec;
  }
  const std::size_t n = words.size();
  const auto mod_limit =
      static_cast<std::size_t>(cfg.max_modified_fraction * static_cast<double>(n));
  if (mod_limit == 0) {
    finalize(cur);
    return rec;
  }

  std::vector<double> priority(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (used >= cfg.query_budget) {
      finalize(cur);
      return rec;
    }
    auto trial = rec.adversarial_words;
    trial[i] = kUnkProbeWord;
    priority[i] = cur.metric - probe(trial).metric;
  }
  if (cfg.ranking == RankingRule::Pwws) {
    // Saliency times the best single-substitution gain on the unmodified
    // text decides the visit order.
    for (std::size_t i = 0; i < n; ++i) {
      const auto cands = attack_candidates(words[i], cfg.kind, synonyms);
      double best_gain = 0.0;
      bool any = false;
      for (const auto& cand : cands) {
        if (used >= cfg.query_budget) {
          finalize(cur);
          return rec;
        }
        auto trial = rec.adversarial_words;
        trial[i] = cand;
        const double gain = cur.metric - probe(trial).metric;
        if (!any || gain > best_gain) {
          best_gain = gain;
          any = true;
        }
      }
      priority[i] *= any ? best_gain : 0.0;
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&priority](std::size_t a, std::size_t b) {
    if (priority[a] != priority[b]) return priority[a] > priority[b];
    return a < b;
  });

  for (const auto idx : order) {
    if (rec.modified_indices.size() >= mod_limit) break;
    bool have_best = false;
    StepResult best;
    std::string best_word;
    for (const auto& cand : attack_candidates(rec.adversarial_words[idx], cfg.kind, synonyms)) {
      auto trial = rec.adversarial_words;
      trial[idx] = cand;
      if (!admissible(trial)) continue;
      if (used >= cfg.query_budget) {
        finalize(cur);
        return rec;
      }
      const StepResult r = probe(trial);
      if (r.metric < cur.metric && (!have_best || r.metric < best.metric)) {
        have_best = true;
        best = r;
        best_word = cand;
      }
    }
    if (!have_best) continue;
    rec.adversarial_words[idx] = best_word;
    rec.modified_indices.push_back(idx);
    rec.goal_metric_trace.push_back(best.metric);
    cur = best;
    if (cur.goal) {
      rec.success = true;
      break;
    }
  }
  finalize(cur);
  return rec;
}

}  // namespace detail

// Greedy flip of a classifier's decision away from orig_label. The caller
// vouches that orig_label is the model's clean prediction; a first query
// checks whether the goal is somehow already met.
inline AdversarialRecord attack_classifier(const std::vector<std::string>& words,
                                           int orig_label, const ClassifierVictim& victim,
                                           const SynonymTable& synonyms,
                                           const AttackConfig& cfg) {
  cfg.validate();
  if (words.empty()) throw RangeError("attack_classifier: empty text");
  if (orig_label < 0 || static_cast<std::size_t>(orig_label) >= victim.config->classes)
    throw RangeError("attack_classifier: label out of range");
  detail::AdaptiveJudge judge;
  judge.cfg = &cfg;
  judge.victim = &victim;
  judge.init(words);
  std::size_t used = 0;
  auto probe = [&victim, &used, orig_label, &cfg](const std::vector<std::string>& w) {
    const ForwardOutput out = victim.query(w);
    ++used;
    detail::StepResult r;
    r.metric = out.confidences[static_cast<std::size_t>(orig_label)];
    r.goal = classification_goal_met(out, orig_label, cfg.stop_confidence);
    r.label = out.predicted;
    r.confidence = out.confidences[static_cast<std::size_t>(out.predicted)];
    return r;
  };
  auto admit = [&judge](const std::vector<std::string>& w) { return judge.admissible(w); };
  return detail::greedy_core(words, orig_label, cfg, synonyms, probe, admit, used);
}

// Greedy BLEU minimization against the clean reference translation.
inline AdversarialRecord attack_generation(const std::vector<std::string>& words,
                                           const std::vector<TokenId>& reference,
                                           const GenerationVictim& victim,
                                           const SynonymTable& synonyms,
                                           const AttackConfig& cfg) {
  cfg.validate();
  if (cfg.goal != AttackGoal::Generation)
    throw ConfigError("attack_generation: config goal is not generation");
  if (words.empty()) throw RangeError("attack_generation: empty text");
  if (reference.empty()) throw RangeError("attack_generation: empty reference");
  std::size_t used = 0;
  auto probe = [&victim, &used, &reference, &cfg](const std::vector<std::string>& w) {
    const GenerateOutput out = victim.query(w);
    ++used;
    detail::StepResult r;
    r.metric = sentence_bleu(out.tokens, reference);
    r.goal = r.metric < cfg.bleu_stop;
    r.label = -1;
    r.confidence = r.metric;
    return r;
  };
  auto admit = [](const std::vector<std::string>&) { return true; };
  return detail::greedy_core(words, -1, cfg, synonyms, probe, admit, used);
}

struct ReplayTrial {
  int predicted = -1;
  double confidence = 0.0;

  bool operator==(const ReplayTrial& o) const = default;
};

// Feeds a finished adversarial text to a (possibly different) victim once
// per trial, each trial on a fresh dynamic state.
inline std::vector<ReplayTrial> replay(const AdversarialRecord& rec,
                                       const ClassifierVictim& target, std::size_t trials) {
  if (!rec.success) throw RangeError("replay: record is not a success");
  if (trials == 0) throw RangeError("replay: zero trials");
  std::vector<ReplayTrial> out;
  out.reserve(trials);
  for (std::size_t t = 0; t < trials; ++t) {
    const ForwardOutput res = target.query(rec.adversarial_words);
    ReplayTrial trial;
    trial.predicted = res.predicted;
    trial.confidence = res.confidences[static_cast<std::size_t>(res.predicted)];
    out.push_back(trial);
  }
  return out;
}

// One record per line; key order fixed so replays of the same run are
// byte-identical.
inline void save_archive(const std::string& path,
                         const std::vector<AdversarialRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw MissingArtifactError("cannot write archive: " + path);
  for (const auto& rec : records) {
    nlohmann::ordered_json line;
    line["original_text"] = join_words(rec.original_words);
    line["adversarial_text"] = join_words(rec.adversarial_words);
    line["modified_indices"] = rec.modified_indices;
    line["queries"] = rec.queries;
    line["success"] = rec.success;
    line["orig_label"] = rec.original_label;
    line["final_label"] = rec.final_label;
    line["final_confidence"] = rec.final_confidence;
    out << line.dump() << '\n';
  }
  if (!out) throw MissingArtifactError("short write on archive: " + path);
}

inline std::vector<AdversarialRecord> load_archive(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("missing archive: " + path);
  std::vector<AdversarialRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    try {
      AdversarialRecord rec;
      rec.original_words = split_words(row.at("original_text").get<std::string>());
      rec.adversarial_words = split_words(row.at("adversarial_text").get<std::string>());
      rec.modified_indices = row.at("modified_indices").get<std::vector<std::size_t>>();
      rec.queries = row.at("queries").get<std::size_t>();
      rec.success = row.at("success").get<bool>();
      rec.original_label = row.at("orig_label").get<int>();
      rec.final_label = row.at("final_label").get<int>();
      rec.final_confidence = row.at("final_confidence").get<double>();
      out.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace dynattn
