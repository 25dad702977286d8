#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "dynattn/errors.hpp"
#include "dynattn/matrix.hpp"
#include "dynattn/random.hpp"

namespace dynattn {

enum class DynamicMode { Static, DynAttn, Dropout, Fusion };

inline const char* mode_name(DynamicMode m) {
  switch (m) {
    case DynamicMode::Static: return "static";
    case DynamicMode::DynAttn: return "dynattn";
    case DynamicMode::Dropout: return "dropout";
    case DynamicMode::Fusion: return "fusion";
  }
  return "?";
}

inline DynamicMode mode_from_name(const std::string& s) {
  if (s == "static") return DynamicMode::Static;
  if (s == "dynattn") return DynamicMode::DynAttn;
  if (s == "dropout") return DynamicMode::Dropout;
  if (s == "fusion") return DynamicMode::Fusion;
  throw ConfigError("unknown mode: " + s);
}

// Knobs of the dynamic defense. Classification masks the m top-attended
// tokens with m resampled per layer from [floor(m_lo*n), floor(m_hi*n)];
// generation instead masks the rank window (floor(m_a*n), m_b] with m_b
// resampled from [floor(m_b_lo*n), floor(m_b_hi*n)], keeping the very top
// ranks intact. beta is the attention scale applied to masked columns.
struct RectifierConfig {
  double beta = 0.0;
  double m_lo = 0.1;
  double m_hi = 0.2;
  double m_a = 0.1;
  double m_b_lo = 0.3;
  double m_b_hi = 0.5;
  double dropout_rate = 0.1;
  bool rectify_decoder = false;

  void validate() const {
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta outside [0,1]");
    if (!(m_lo >= 0.0 && m_lo <= m_hi && m_hi <= 1.0))
      throw ConfigError("need 0 <= m_lo <= m_hi <= 1");
    if (!(m_a >= 0.0 && m_a <= m_b_lo && m_b_lo <= m_b_hi && m_b_hi <= 1.0))
      throw ConfigError("need 0 <= m_a <= m_b_lo <= m_b_hi <= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw ConfigError("dropout_rate outside [0,1)");
  }
};

// Element-wise sum of the per-head maps: the layer's global attention.
inline Matrix global_attention(const std::vector<Matrix>& heads) {
  if (heads.empty()) throw RangeError("global_attention: empty head stack");
  Matrix out = heads[0];
  for (std::size_t t = 1; t < heads.size(); ++t) {
    if (!heads[t].same_shape(out)) throw ShapeError("global_attention: ragged head stack");
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += heads[t].data[i];
  }
  return out;
}

// Per-key attention mass: column sums of a (global) attention map. Sums, not
// averages, so magnitudes grow with rows and heads.
inline std::vector<double> key_totals(const Matrix& attention) {
  std::vector<double> totals(attention.cols, 0.0);
  for (std::size_t i = 0; i < attention.rows; ++i)
    for (std::size_t j = 0; j < attention.cols; ++j) totals[j] += attention(i, j);
  return totals;
}

// Masked-token count for a sequence with n maskable tokens: uniform on
// [floor(frac_lo*n), floor(frac_hi*n)]. A degenerate range consumes no
// randomness, which keeps neutral configurations stream-aligned with the
// undefended path.
inline std::size_t sample_m(RandomSource& rng, std::size_t n, double frac_lo, double frac_hi) {
  if (!(frac_lo >= 0.0 && frac_lo <= frac_hi && frac_hi <= 1.0))
    throw RangeError("sample_m: bad fraction range");
  const auto lo = static_cast<std::int64_t>(std::floor(frac_lo * static_cast<double>(n)));
  const auto hi = static_cast<std::int64_t>(std::floor(frac_hi * static_cast<double>(n)));
  return static_cast<std::size_t>(discrete_uniform(rng, lo, hi));
}

// Tokens chosen for rectification in one layer, in rank order (most attended
// first). m_requested is the pre-cap draw; indices may be shorter when few
// maskable tokens exist.
struct TokenSelection {
  std::vector<std::size_t> indices;
  std::size_t m_requested = 0;
};

// Rank maskable (non-special) positions by key total, descending, ties to the
// lower index; skip the top `skip` ranks and select the next `m`.
// Deterministic: draws nothing.
inline TokenSelection select_tokens(const std::vector<double>& totals,
                                    const std::vector<bool>& special, std::size_t m,
                                    std::size_t skip = 0) {
  if (totals.size() != special.size()) throw ShapeError("select_tokens: mask size mismatch");
  std::vector<std::size_t> ranked;
  for (std::size_t j = 0; j < totals.size(); ++j)
    if (!special[j]) ranked.push_back(j);
  std::sort(ranked.begin(), ranked.end(), [&totals](std::size_t a, std::size_t b) {
    if (totals[a] != totals[b]) return totals[a] > totals[b];
    return a < b;
  });
  TokenSelection sel;
  sel.m_requested = m;
  for (std::size_t r = skip; r < ranked.size() && sel.indices.size() < m; ++r)
    sel.indices.push_back(ranked[r]);
  return sel;
}

// Scale the selected key columns of every head by beta. No renormalization:
// rectified rows intentionally sum to less than one, which is what starves
// the masked keys of influence. Unselected entries are not recomputed, so
// they stay bit-identical.
inline void rectify(std::vector<Matrix>& heads, const std::vector<std::size_t>& columns,
                    double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw RangeError("rectify: beta outside [0,1]");
  for (auto& head : heads)
    for (const auto j : columns) {
      if (j >= head.cols) throw RangeError("rectify: column out of range");
      for (std::size_t i = 0; i < head.rows; ++i) head(i, j) *= beta;
    }
}

// Inverted dropout mask: entries are 0 with probability rate, else
// 1/(1-rate), drawn in row-major order. Rate 0 short-circuits to an
// all-ones mask without touching the stream.
inline Matrix dropout_mask(RandomSource& rng, std::size_t rows, std::size_t cols, double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw RangeError("dropout_mask: rate outside [0,1)");
  Matrix mask(rows, cols);
  if (rate == 0.0) {
    for (double& v : mask.data) v = 1.0;
    return mask;
  }
  const double keep = 1.0 / (1.0 - rate);
  for (double& v : mask.data) v = rng.uniform01() < rate ? 0.0 : keep;
  return mask;
}

// Per-layer dynamic state. The draw order within a layer is pinned:
// [m or m_b draw] then [attention-sublayer mask] then [FFN-sublayer mask].
// The identity degenerations (beta=1, zero-width m range, rate 0) rely on
// degenerate draws consuming nothing.
struct LayerDynamics {
  TokenSelection selection;     // empty for static/dropout
  std::vector<double> totals;   // key totals the selection was ranked by
  bool rectified = false;
};

inline bool mode_rectifies(DynamicMode m) {
  return m == DynamicMode::DynAttn || m == DynamicMode::Fusion;
}

inline bool mode_drops(DynamicMode m) {
  return m == DynamicMode::Dropout || m == DynamicMode::Fusion;
}

// Applies the mode's attention-side behavior to one layer's head stack.
// task_generation picks the selection rule. Returns what happened for the
// trace. Fusion order is rectify-then-dropout; the dropout half lives at the
// sublayer outputs and is handled by the caller with dropout_mask.
inline LayerDynamics apply_dynamic_attention(std::vector<Matrix>& heads,
                                             const std::vector<bool>& special,
                                             const RectifierConfig& cfg, DynamicMode mode,
                                             bool task_generation, RandomSource& rng) {
  LayerDynamics dyn;
  if (!mode_rectifies(mode)) return dyn;
  std::size_t n = 0;
  for (bool s : special)
    if (!s) ++n;
  const Matrix global = global_attention(heads);
  dyn.totals = key_totals(global);
  if (task_generation) {
    const auto skip = static_cast<std::size_t>(std::floor(cfg.m_a * static_cast<double>(n)));
    const std::size_t m_b = sample_m(rng, n, cfg.m_b_lo, cfg.m_b_hi);
    const std::size_t width = m_b > skip ? m_b - skip : 0;
    dyn.selection = select_tokens(dyn.totals, special, width, skip);
  } else {
    const std::size_t m = sample_m(rng, n, cfg.m_lo, cfg.m_hi);
    dyn.selection = select_tokens(dyn.totals, special, m, 0);
  }
  rectify(heads, dyn.selection.indices, cfg.beta);
  dyn.rectified = true;
  return dyn;
}

}  // namespace dynattn
