#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dynattn/corpus.hpp"
#include "dynattn/errors.hpp"
#include "dynattn/random.hpp"
#include "dynattn/wordlists.hpp"

namespace dynattn {

// Label 1 = positive, 0 = negative. Every text carries exactly two keywords
// of the label polarity and one of the opposite polarity, padded with
// fillers. The two majority keywords decide the label; the single minority
// keyword is the foothold a substitution attack flips the decision onto once
// the majority evidence has been weakened. Keyword group members are drawn
// with the rarity weights, so substitutions move along a frequency gradient
// instead of leaving the training distribution.
struct SynthClassConfig {
  std::size_t size = 2000;
  std::size_t len_lo = 9;
  std::size_t len_hi = 14;
  std::uint64_t seed = 1;
};

namespace detail {

inline std::size_t pick_weighted(RandomSource& rng, const double* weights, std::size_t n) {
  const double u = rng.uniform01();
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  return n - 1;
}

inline std::string pick_keyword(RandomSource& rng, bool positive) {
  namespace wl = wordlists_v1;
  const auto group = static_cast<std::size_t>(discrete_uniform(rng, 0, 3));
  const auto member = pick_weighted(rng, wl::kRarityWeights.data(), wl::kRarityWeights.size());
  return positive ? wl::kPositiveGroups[group][member] : wl::kNegativeGroups[group][member];
}

}  // namespace detail

inline std::vector<TextItem> synth_classification(const SynthClassConfig& cfg) {
  namespace wl = wordlists_v1;
  if (cfg.size < 2) throw ConfigError("synth_classification: size must be >= 2");
  if (cfg.len_lo < 7 || cfg.len_lo > cfg.len_hi)
    throw ConfigError("synth_classification: need 7 <= len_lo <= len_hi");
  RandomSource rng(child_seed(cfg.seed, "synth-cls"));
  std::vector<TextItem> items;
  items.reserve(cfg.size);
  for (std::size_t i = 0; i < cfg.size; ++i) {
    TextItem item;
    item.label = static_cast<int>(i % 2);  // exact class balance
    const auto len = static_cast<std::size_t>(
        discrete_uniform(rng, static_cast<std::int64_t>(cfg.len_lo),
                         static_cast<std::int64_t>(cfg.len_hi)));
    const bool positive = item.label == 1;
    for (std::size_t k = 0; k < 2; ++k)
      item.words.push_back(detail::pick_keyword(rng, positive));
    item.words.push_back(detail::pick_keyword(rng, !positive));
    while (item.words.size() < len) {
      const auto f = static_cast<std::size_t>(
          discrete_uniform(rng, 0, static_cast<std::int64_t>(wl::kFillers.size()) - 1));
      item.words.emplace_back(wl::kFillers[f]);
    }
    shuffle(rng, item.words);
    items.push_back(std::move(item));
  }
  return items;
}

struct ParallelItem {
  std::vector<std::string> src;
  std::vector<std::string> ref;

  bool operator==(const ParallelItem& o) const = default;
};

// Toy translation task: uniform random source sentences over a 16-word
// vocabulary; the reference is the per-word cipher into the target
// vocabulary followed by swapping each adjacent pair. Deterministic given
// the config, learnable by a small encoder-decoder, and sensitive enough to
// source edits that BLEU-based attacks have a gradient to follow.
struct SynthSeqConfig {
  std::size_t size = 1200;
  std::size_t len_lo = 4;
  std::size_t len_hi = 10;
  std::uint64_t seed = 1;
};

inline std::vector<std::string> cipher_reference(const std::vector<std::string>& src) {
  namespace wl = wordlists_v1;
  std::vector<std::string> ref;
  ref.reserve(src.size());
  for (const auto& w : src) {
    std::size_t idx = wl::kSourceWords.size();
    for (std::size_t i = 0; i < wl::kSourceWords.size(); ++i)
      if (w == wl::kSourceWords[i]) {
        idx = i;
        break;
      }
    if (idx == wl::kSourceWords.size()) throw RangeError("cipher_reference: unknown source word " + w);
    ref.emplace_back(wl::kTargetWords[(idx + wl::kCipherShift) % wl::kTargetWords.size()]);
  }
  for (std::size_t i = 0; i + 1 < ref.size(); i += 2) std::swap(ref[i], ref[i + 1]);
  return ref;
}

inline std::vector<ParallelItem> synth_seq2seq(const SynthSeqConfig& cfg) {
  namespace wl = wordlists_v1;
  if (cfg.size < 1) throw ConfigError("synth_seq2seq: size must be >= 1");
  if (cfg.len_lo < 2 || cfg.len_lo > cfg.len_hi)
    throw ConfigError("synth_seq2seq: need 2 <= len_lo <= len_hi");
  RandomSource rng(child_seed(cfg.seed, "synth-seq"));
  std::vector<ParallelItem> items;
  items.reserve(cfg.size);
  for (std::size_t i = 0; i < cfg.size; ++i) {
    ParallelItem item;
    const auto len = static_cast<std::size_t>(
        discrete_uniform(rng, static_cast<std::int64_t>(cfg.len_lo),
                         static_cast<std::int64_t>(cfg.len_hi)));
    for (std::size_t j = 0; j < len; ++j) {
      const auto w = static_cast<std::size_t>(
          discrete_uniform(rng, 0, static_cast<std::int64_t>(wl::kSourceWords.size()) - 1));
      item.src.emplace_back(wl::kSourceWords[w]);
    }
    item.ref = cipher_reference(item.src);
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace dynattn
