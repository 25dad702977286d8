#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <vector>

#include "dynattn/errors.hpp"

namespace dynattn {

inline constexpr double kBleuEpsilon = 1e-9;
inline constexpr std::size_t kBleuMaxOrder = 4;

// Sentence BLEU-4 with uniform weights and a brevity penalty. Every
// precision gets the same additive epsilon, so an exact candidate scores
// exactly 1.0 and a zero match count stays finite.
template <typename T>
double sentence_bleu(const std::vector<T>& candidate, const std::vector<T>& reference) {
  if (reference.empty()) throw RangeError("sentence_bleu: empty reference");
  if (candidate.empty()) return 0.0;
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  double log_sum = 0.0;
  for (std::size_t order = 1; order <= kBleuMaxOrder; ++order) {
    std::map<std::vector<T>, std::size_t> ref_counts;
    if (reference.size() >= order)
      for (std::size_t i = 0; i + order <= reference.size(); ++i)
        ++ref_counts[std::vector<T>(reference.begin() + i, reference.begin() + i + order)];
    std::size_t total = 0, matched = 0;
    if (candidate.size() >= order) {
      std::map<std::vector<T>, std::size_t> cand_counts;
      for (std::size_t i = 0; i + order <= candidate.size(); ++i)
        ++cand_counts[std::vector<T>(candidate.begin() + i, candidate.begin() + i + order)];
      for (const auto& [gram, count] : cand_counts) {
        total += count;
        const auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matched += std::min(count, it->second);
      }
    }
    const double p = (static_cast<double>(matched) + kBleuEpsilon) /
                     (static_cast<double>(total) + kBleuEpsilon);
    log_sum += std::log(p);
  }
  const double brevity = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return brevity * std::exp(log_sum / static_cast<double>(kBleuMaxOrder));
}

// Mean sentence score over aligned candidate/reference lists.
template <typename T>
double corpus_bleu(const std::vector<std::vector<T>>& candidates,
                   const std::vector<std::vector<T>>& references) {
  if (candidates.size() != references.size())
    throw ShapeError("corpus_bleu: candidate/reference count mismatch");
  if (candidates.empty()) throw RangeError("corpus_bleu: empty corpus");
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    sum += sentence_bleu(candidates[i], references[i]);
  return sum / static_cast<double>(candidates.size());
}

}  // namespace dynattn
