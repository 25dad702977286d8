#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "dynattn/errors.hpp"
#include "dynattn/matrix.hpp"
#include "dynattn/random.hpp"
#include "dynattn/rectifier.hpp"
#include "dynattn/vocab.hpp"

namespace dynattn {

inline constexpr double kLnEps = 1e-5;

enum class Task { Classifier, Seq2Seq };

inline const char* task_name(Task t) { return t == Task::Classifier ? "classifier" : "seq2seq"; }

inline Task task_from_name(const std::string& s) {
  if (s == "classifier") return Task::Classifier;
  if (s == "seq2seq") return Task::Seq2Seq;
  throw ConfigError("unknown task: " + s);
}

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t d_model = 32;
  std::size_t d_head = 16;
  std::size_t d_ff = 64;
  std::size_t vocab = 0;
  std::size_t max_len = 32;
  Task task = Task::Classifier;
  std::size_t classes = 2;
  std::size_t decoder_layers = 2;

  void validate() const {
    if (layers == 0 || heads == 0 || d_model == 0 || d_head == 0 || d_ff == 0)
      throw ConfigError("model dims must be positive");
    if (d_head * heads != d_model) throw ConfigError("d_head * heads must equal d_model");
    if (vocab < Vocabulary::kNumSpecials + 1) throw ConfigError("vocab too small");
    if (max_len < 4) throw ConfigError("max_len must be >= 4");
    if (task == Task::Classifier && classes < 2) throw ConfigError("classes must be >= 2");
    if (task == Task::Seq2Seq && decoder_layers == 0)
      throw ConfigError("decoder_layers must be >= 1 for seq2seq");
  }

  std::size_t head_width() const { return task == Task::Classifier ? classes : vocab; }
};

struct LnParams {
  std::vector<double> gain;
  std::vector<double> bias;
};

struct AttnParams {
  Matrix wq, wk, wv, wo;  // each d_model x d_model
};

struct EncoderLayerParams {
  AttnParams attn;
  Matrix w1;  // d_model x d_ff
  Matrix w2;  // d_ff x d_model
  LnParams ln1, ln2;
};

struct DecoderLayerParams {
  AttnParams self_attn;
  AttnParams cross_attn;
  Matrix w1;
  Matrix w2;
  LnParams ln1, ln2, ln3;
};

struct ModelParams {
  Matrix tok_emb;  // vocab x d_model
  Matrix pos_emb;  // max_len x d_model
  std::vector<EncoderLayerParams> encoder;
  std::vector<DecoderLayerParams> decoder;
  Matrix head;  // d_model x classes (classifier) or d_model x vocab (seq2seq)
};

namespace detail {

inline Matrix init_matrix(RandomSource& rng, std::size_t rows, std::size_t cols) {
  // Scaled uniform: bound 1/sqrt(fan_in) where fan_in is the input width of
  // x * W, i.e. the row count.
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  Matrix m(rows, cols);
  for (double& v : m.data) v = bound * (2.0 * rng.uniform01() - 1.0);
  return m;
}

inline LnParams init_ln(std::size_t d) {
  LnParams p;
  p.gain.assign(d, 1.0);
  p.bias.assign(d, 0.0);
  return p;
}

inline AttnParams init_attn(RandomSource& rng, std::size_t d) {
  AttnParams p;
  p.wq = init_matrix(rng, d, d);
  p.wk = init_matrix(rng, d, d);
  p.wv = init_matrix(rng, d, d);
  p.wo = init_matrix(rng, d, d);
  return p;
}

}  // namespace detail

// Draw order is fixed (embeddings, then encoder layers in order, then
// decoder layers, then the head) so initialization is a pure function of
// (config, seed).
inline ModelParams init_params(const ModelConfig& cfg, RandomSource& rng) {
  cfg.validate();
  ModelParams p;
  // Embedding rows act as summands, not matmul inputs; their fan-in is the
  // model width.
  {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    p.tok_emb = Matrix(cfg.vocab, cfg.d_model);
    for (double& v : p.tok_emb.data) v = bound * (2.0 * rng.uniform01() - 1.0);
    p.pos_emb = Matrix(cfg.max_len, cfg.d_model);
    for (double& v : p.pos_emb.data) v = bound * (2.0 * rng.uniform01() - 1.0);
  }
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    EncoderLayerParams lp;
    lp.attn = detail::init_attn(rng, cfg.d_model);
    lp.w1 = detail::init_matrix(rng, cfg.d_model, cfg.d_ff);
    lp.w2 = detail::init_matrix(rng, cfg.d_ff, cfg.d_model);
    lp.ln1 = detail::init_ln(cfg.d_model);
    lp.ln2 = detail::init_ln(cfg.d_model);
    p.encoder.push_back(std::move(lp));
  }
  if (cfg.task == Task::Seq2Seq) {
    for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
      DecoderLayerParams lp;
      lp.self_attn = detail::init_attn(rng, cfg.d_model);
      lp.cross_attn = detail::init_attn(rng, cfg.d_model);
      lp.w1 = detail::init_matrix(rng, cfg.d_model, cfg.d_ff);
      lp.w2 = detail::init_matrix(rng, cfg.d_ff, cfg.d_model);
      lp.ln1 = detail::init_ln(cfg.d_model);
      lp.ln2 = detail::init_ln(cfg.d_model);
      lp.ln3 = detail::init_ln(cfg.d_model);
      p.decoder.push_back(std::move(lp));
    }
  }
  p.head = detail::init_matrix(rng, cfg.d_model, cfg.head_width());
  return p;
}

// Recorded attention maps: layers[l][h] is the n x n map head h of layer l
// actually used (post-dynamics when a dynamic mode ran).
struct AttentionStack {
  std::vector<std::vector<Matrix>> layers;
};

struct SelectionRecord {
  std::size_t layer = 0;
  std::size_t m_requested = 0;
  std::vector<std::size_t> indices;
  std::vector<double> key_totals;
};

struct ForwardOutput {
  std::vector<double> logits;
  std::vector<double> confidences;
  int predicted = -1;
  AttentionStack attention;
  std::vector<SelectionRecord> selections;
};

struct GenerateOutput {
  std::vector<TokenId> tokens;  // generated ids, BOS/EOS excluded
  AttentionStack encoder_attention;
  std::vector<SelectionRecord> selections;
  bool reached_max = false;
};

// Seed + query meter for one evaluation context. Every black-box probe of a
// model (classification forward or full generation) costs one query.
struct RunContext {
  RandomSource rng;
  std::uint64_t queries = 0;

  explicit RunContext(std::uint64_t seed) : rng(seed) {}
};

using AttentionHook = std::function<void(std::vector<Matrix>&, const std::vector<bool>&)>;

// Caches hold every intermediate needed for manual backprop.
struct EncoderLayerCache {
  Matrix x_in;
  Matrix q, k, v;
  std::vector<Matrix> attn;
  Matrix context;
  Matrix attn_out;
  Matrix attn_mask;
  Matrix res1, ln1_xhat, ln1_out;
  std::vector<double> ln1_inv;
  Matrix ffn_pre, ffn_act, ffn_out, ffn_mask;
  Matrix res2, ln2_xhat, ln2_out;
  std::vector<double> ln2_inv;
};

struct DecoderLayerCache {
  Matrix x_in;
  Matrix q_s, k_s, v_s;
  std::vector<Matrix> attn_s;
  Matrix context_s, out_s, mask_s;
  Matrix res1, ln1_xhat, ln1_out;
  std::vector<double> ln1_inv;
  Matrix q_c, k_c, v_c;
  std::vector<Matrix> attn_c;
  Matrix context_c, out_c, mask_c;
  Matrix res2, ln2_xhat, ln2_out;
  std::vector<double> ln2_inv;
  Matrix ffn_pre, ffn_act, ffn_out, mask_f;
  Matrix res3, ln3_xhat, ln3_out;
  std::vector<double> ln3_inv;
};

struct LayerOptions {
  DynamicMode mode = DynamicMode::Static;
  const RectifierConfig* rect = nullptr;
  bool generation_rule = false;
  double dropout = 0.0;  // training dropout or the defensive kind
  RandomSource* rng = nullptr;
  const std::vector<Matrix>* inject = nullptr;  // replaces the head maps
  const AttentionHook* hook = nullptr;          // runs where dynamics would
};

namespace detail {

inline Matrix ln_rows(const Matrix& x, const LnParams& p, Matrix* xhat_out,
                      std::vector<double>* inv_out) {
  Matrix out(x.rows, x.cols);
  if (xhat_out) *xhat_out = Matrix(x.rows, x.cols);
  if (inv_out) inv_out->assign(x.rows, 0.0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) mean += x(i, j);
    mean /= static_cast<double>(x.cols);
    double var = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= static_cast<double>(x.cols);
    const double inv = 1.0 / std::sqrt(var + kLnEps);
    if (inv_out) (*inv_out)[i] = inv;
    for (std::size_t j = 0; j < x.cols; ++j) {
      const double xh = (x(i, j) - mean) * inv;
      if (xhat_out) (*xhat_out)(i, j) = xh;
      out(i, j) = xh * p.gain[j] + p.bias[j];
    }
  }
  return out;
}

// Multi-head attention block. Scores use 1/sqrt(d_head); causal=true masks
// j > i before the softmax. When opt.inject is set the computed maps are
// bypassed entirely.
inline Matrix attention_block(const AttnParams& ap, const ModelConfig& cfg, const Matrix& x,
                              const Matrix& kv_source, bool causal,
                              const std::vector<bool>& key_special, const LayerOptions& opt,
                              bool allow_dynamics, std::vector<Matrix>* attn_used,
                              LayerDynamics* dyn_out, Matrix* q_cache, Matrix* k_cache,
                              Matrix* v_cache, Matrix* context_cache) {
  const std::size_t dh = cfg.d_head;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Matrix> heads(cfg.heads);
  Matrix q, k, v;
  if (opt.inject) {
    if (opt.inject->size() != cfg.heads)
      throw AlignmentError("injected stack has wrong head count");
    v = matmul(kv_source, ap.wv);
    for (std::size_t t = 0; t < cfg.heads; ++t) {
      const Matrix& m = (*opt.inject)[t];
      if (m.rows != x.rows || m.cols != kv_source.rows)
        throw AlignmentError("injected map shape mismatch");
      heads[t] = m;
    }
  } else {
    q = matmul(x, ap.wq);
    k = matmul(kv_source, ap.wk);
    v = matmul(kv_source, ap.wv);
    for (std::size_t t = 0; t < cfg.heads; ++t) {
      const Matrix qt = col_slice(q, t * dh, (t + 1) * dh);
      const Matrix kt = col_slice(k, t * dh, (t + 1) * dh);
      Matrix scores = matmul(qt, transpose(kt));
      if (causal) {
        const double ninf = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < scores.rows; ++i)
          for (std::size_t j = i + 1; j < scores.cols; ++j) scores(i, j) = ninf;
      }
      heads[t] = softmax_rows(scores, scale);
    }
    if (opt.hook) {
      (*opt.hook)(heads, key_special);
    } else if (allow_dynamics && opt.mode != DynamicMode::Static) {
      if (!opt.rect || !opt.rng) throw ConfigError("dynamic mode requires config and rng");
      LayerDynamics dyn = apply_dynamic_attention(heads, key_special, *opt.rect, opt.mode,
                                                  opt.generation_rule, *opt.rng);
      if (dyn_out) *dyn_out = std::move(dyn);
    }
  }
  Matrix context(x.rows, cfg.d_model);
  for (std::size_t t = 0; t < cfg.heads; ++t) {
    const Matrix vt = col_slice(v, t * dh, (t + 1) * dh);
    set_col_slice(context, t * dh, matmul(heads[t], vt));
  }
  if (attn_used) *attn_used = heads;
  if (q_cache) *q_cache = std::move(q);
  if (k_cache) *k_cache = std::move(k);
  if (v_cache) *v_cache = std::move(v);
  if (context_cache) *context_cache = context;
  return matmul(context, ap.wo);
}

inline Matrix apply_mask_inplace_copy(const Matrix& x, const Matrix& mask) {
  if (mask.empty()) return x;
  return hadamard(x, mask);
}

}  // namespace detail

// One encoder layer: multi-head self-attention (with the dynamic rectifier,
// an injected stack, or a caller hook), residual + LN, then ReLU FFN,
// residual + LN. Sublayer outputs are masked when opt.dropout > 0; draw
// order per layer is [dynamics] [attention mask] [FFN mask].
inline Matrix encoder_layer_forward(const EncoderLayerParams& p, const ModelConfig& cfg,
                                    const Matrix& x, const std::vector<bool>& special,
                                    const LayerOptions& opt, EncoderLayerCache* cache = nullptr,
                                    std::vector<Matrix>* attn_used = nullptr,
                                    LayerDynamics* dyn_out = nullptr) {
  if (x.cols != cfg.d_model) throw ShapeError("encoder_layer_forward: bad input width");
  if (special.size() != x.rows) throw ShapeError("encoder_layer_forward: bad special mask");
  std::vector<Matrix> attn_local;
  Matrix attn_out = detail::attention_block(
      p.attn, cfg, x, x, false, special, opt, true, attn_used ? attn_used : &attn_local, dyn_out,
      cache ? &cache->q : nullptr, cache ? &cache->k : nullptr, cache ? &cache->v : nullptr,
      cache ? &cache->context : nullptr);
  Matrix attn_mask;
  if (opt.dropout > 0.0) {
    if (!opt.rng) throw ConfigError("dropout requires rng");
    attn_mask = dropout_mask(*opt.rng, attn_out.rows, attn_out.cols, opt.dropout);
  }
  const Matrix res1 = add(x, detail::apply_mask_inplace_copy(attn_out, attn_mask));
  Matrix ln1_xhat;
  std::vector<double> ln1_inv;
  const Matrix ln1_out = detail::ln_rows(res1, p.ln1, cache ? &ln1_xhat : nullptr,
                                         cache ? &ln1_inv : nullptr);
  const Matrix ffn_pre = matmul(ln1_out, p.w1);
  const Matrix ffn_act = relu(ffn_pre);
  const Matrix ffn_out = matmul(ffn_act, p.w2);
  Matrix ffn_mask;
  if (opt.dropout > 0.0)
    ffn_mask = dropout_mask(*opt.rng, ffn_out.rows, ffn_out.cols, opt.dropout);
  const Matrix res2 = add(ln1_out, detail::apply_mask_inplace_copy(ffn_out, ffn_mask));
  Matrix ln2_xhat;
  std::vector<double> ln2_inv;
  Matrix out = detail::ln_rows(res2, p.ln2, cache ? &ln2_xhat : nullptr,
                               cache ? &ln2_inv : nullptr);
  if (cache) {
    cache->x_in = x;
    if (attn_used) cache->attn = *attn_used;
    else cache->attn = std::move(attn_local);
    cache->attn_out = attn_out;
    cache->attn_mask = attn_mask;
    cache->res1 = res1;
    cache->ln1_xhat = std::move(ln1_xhat);
    cache->ln1_inv = std::move(ln1_inv);
    cache->ln1_out = ln1_out;
    cache->ffn_pre = ffn_pre;
    cache->ffn_act = ffn_act;
    cache->ffn_out = ffn_out;
    cache->ffn_mask = ffn_mask;
    cache->res2 = res2;
    cache->ln2_xhat = std::move(ln2_xhat);
    cache->ln2_inv = std::move(ln2_inv);
    cache->ln2_out = out;
  }
  return out;
}

// Public single-layer op with a caller-supplied attention hook.
inline Matrix attention_layer(const EncoderLayerParams& p, const ModelConfig& cfg,
                              const Matrix& x, const std::vector<bool>& special,
                              const AttentionHook& hook) {
  LayerOptions opt;
  opt.hook = &hook;
  return encoder_layer_forward(p, cfg, x, special, opt);
}

inline Matrix decoder_layer_forward(const DecoderLayerParams& p, const ModelConfig& cfg,
                                    const Matrix& x, const Matrix& enc_out,
                                    const std::vector<bool>& self_special,
                                    const std::vector<bool>& enc_special,
                                    const LayerOptions& opt, bool decoder_dynamics,
                                    DecoderLayerCache* cache = nullptr) {
  LayerOptions self_opt = opt;
  self_opt.inject = nullptr;
  self_opt.hook = nullptr;
  std::vector<Matrix> attn_s;
  LayerDynamics dyn;
  Matrix out_s = detail::attention_block(
      p.self_attn, cfg, x, x, true, self_special, self_opt, decoder_dynamics, &attn_s, &dyn,
      cache ? &cache->q_s : nullptr, cache ? &cache->k_s : nullptr,
      cache ? &cache->v_s : nullptr, cache ? &cache->context_s : nullptr);
  const bool mask_on = opt.dropout > 0.0;
  Matrix mask_s;
  if (mask_on) {
    if (!opt.rng) throw ConfigError("dropout requires rng");
    mask_s = dropout_mask(*opt.rng, out_s.rows, out_s.cols, opt.dropout);
  }
  const Matrix res1 = add(x, detail::apply_mask_inplace_copy(out_s, mask_s));
  Matrix ln1_xhat;
  std::vector<double> ln1_inv;
  const Matrix ln1_out = detail::ln_rows(res1, p.ln1, cache ? &ln1_xhat : nullptr,
                                         cache ? &ln1_inv : nullptr);

  LayerOptions cross_opt;  // cross-attention keys are never rectified
  cross_opt.rng = opt.rng;
  std::vector<Matrix> attn_c;
  Matrix out_c = detail::attention_block(
      p.cross_attn, cfg, ln1_out, enc_out, false, enc_special, cross_opt, false, &attn_c,
      nullptr, cache ? &cache->q_c : nullptr, cache ? &cache->k_c : nullptr,
      cache ? &cache->v_c : nullptr, cache ? &cache->context_c : nullptr);
  Matrix mask_c;
  if (mask_on) mask_c = dropout_mask(*opt.rng, out_c.rows, out_c.cols, opt.dropout);
  const Matrix res2 = add(ln1_out, detail::apply_mask_inplace_copy(out_c, mask_c));
  Matrix ln2_xhat;
  std::vector<double> ln2_inv;
  const Matrix ln2_out = detail::ln_rows(res2, p.ln2, cache ? &ln2_xhat : nullptr,
                                         cache ? &ln2_inv : nullptr);

  const Matrix ffn_pre = matmul(ln2_out, p.w1);
  const Matrix ffn_act = relu(ffn_pre);
  const Matrix ffn_out = matmul(ffn_act, p.w2);
  Matrix mask_f;
  if (mask_on) mask_f = dropout_mask(*opt.rng, ffn_out.rows, ffn_out.cols, opt.dropout);
  const Matrix res3 = add(ln2_out, detail::apply_mask_inplace_copy(ffn_out, mask_f));
  Matrix ln3_xhat;
  std::vector<double> ln3_inv;
  Matrix out = detail::ln_rows(res3, p.ln3, cache ? &ln3_xhat : nullptr,
                               cache ? &ln3_inv : nullptr);
  if (cache) {
    cache->x_in = x;
    cache->attn_s = std::move(attn_s);
    cache->out_s = out_s;
    cache->mask_s = mask_s;
    cache->res1 = res1;
    cache->ln1_xhat = std::move(ln1_xhat);
    cache->ln1_inv = std::move(ln1_inv);
    cache->ln1_out = ln1_out;
    cache->attn_c = std::move(attn_c);
    cache->out_c = out_c;
    cache->mask_c = mask_c;
    cache->res2 = res2;
    cache->ln2_xhat = std::move(ln2_xhat);
    cache->ln2_inv = std::move(ln2_inv);
    cache->ln2_out = ln2_out;
    cache->ffn_pre = ffn_pre;
    cache->ffn_act = ffn_act;
    cache->ffn_out = ffn_out;
    cache->mask_f = mask_f;
    cache->res3 = res3;
    cache->ln3_xhat = std::move(ln3_xhat);
    cache->ln3_inv = std::move(ln3_inv);
    cache->ln3_out = out;
  }
  return out;
}

inline Matrix embed_sequence(const ModelParams& p, const ModelConfig& cfg,
                             const std::vector<TokenId>& ids) {
  if (ids.empty()) throw RangeError("embed_sequence: empty sequence");
  if (ids.size() > cfg.max_len) throw RangeError("embed_sequence: longer than max_len");
  Matrix x(ids.size(), cfg.d_model);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab)
      throw RangeError("embed_sequence: id out of range");
    for (std::size_t j = 0; j < cfg.d_model; ++j)
      x(i, j) = p.tok_emb(static_cast<std::size_t>(id), j) + p.pos_emb(i, j);
  }
  return x;
}

inline std::vector<double> softmax_vec(const std::vector<double>& v) {
  Matrix m(1, v.size());
  m.data = v;
  const Matrix s = softmax_rows(m, 1.0);
  return s.data;
}

inline int argmax_low(const std::vector<double>& v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

namespace detail {

struct EncoderRunResult {
  Matrix out;
  AttentionStack attention;
  std::vector<SelectionRecord> selections;
};

inline EncoderRunResult run_encoder(const ModelParams& p, const ModelConfig& cfg, Matrix x,
                                    const std::vector<bool>& special, DynamicMode mode,
                                    const RectifierConfig* rect, bool generation_rule,
                                    RandomSource* rng, const AttentionStack* inject) {
  EncoderRunResult res;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    LayerOptions opt;
    opt.mode = mode;
    opt.rect = rect;
    opt.generation_rule = generation_rule;
    opt.rng = rng;
    if (mode_drops(mode) && rect) opt.dropout = rect->dropout_rate;
    if (inject) opt.inject = &inject->layers[l];
    std::vector<Matrix> attn_used;
    LayerDynamics dyn;
    x = encoder_layer_forward(p.encoder[l], cfg, x, special, opt, nullptr, &attn_used, &dyn);
    res.attention.layers.push_back(std::move(attn_used));
    if (dyn.rectified) {
      SelectionRecord rec;
      rec.layer = l;
      rec.m_requested = dyn.selection.m_requested;
      rec.indices = dyn.selection.indices;
      rec.key_totals = std::move(dyn.totals);
      res.selections.push_back(std::move(rec));
    }
  }
  res.out = std::move(x);
  return res;
}

}  // namespace detail

// Classifier forward. Dynamic modes resample their per-layer state from
// ctx.rng on every call; each call costs one query.
inline ForwardOutput forward_classify(const ModelParams& p, const ModelConfig& cfg,
                                      const TokenSequence& seq, DynamicMode mode,
                                      const RectifierConfig& rect, RunContext& ctx,
                                      const Matrix* embedding_noise = nullptr) {
  if (cfg.task != Task::Classifier) throw TaskError("forward_classify on a non-classifier");
  rect.validate();
  Matrix x = embed_sequence(p, cfg, seq.ids);
  if (embedding_noise) x = add(x, *embedding_noise);
  auto enc = detail::run_encoder(p, cfg, std::move(x), seq.special, mode, &rect, false,
                                 &ctx.rng, nullptr);
  std::vector<double> pooled(cfg.d_model);
  for (std::size_t j = 0; j < cfg.d_model; ++j) pooled[j] = enc.out(0, j);
  ForwardOutput out;
  out.logits.assign(cfg.classes, 0.0);
  for (std::size_t c = 0; c < cfg.classes; ++c)
    for (std::size_t j = 0; j < cfg.d_model; ++j) out.logits[c] += pooled[j] * p.head(j, c);
  out.confidences = softmax_vec(out.logits);
  out.predicted = argmax_low(out.confidences);
  out.attention = std::move(enc.attention);
  out.selections = std::move(enc.selections);
  ++ctx.queries;
  return out;
}

// Replays recorded attention maps through the mixing pipeline, bypassing the
// query/key scores entirely. Static, deterministic, no query accounting.
inline ForwardOutput inject_attention(const ModelParams& p, const ModelConfig& cfg,
                                      const TokenSequence& seq, const AttentionStack& stack) {
  if (cfg.task != Task::Classifier) throw TaskError("inject_attention on a non-classifier");
  if (stack.layers.size() != cfg.layers)
    throw AlignmentError("injected stack has wrong layer count");
  Matrix x = embed_sequence(p, cfg, seq.ids);
  auto enc = detail::run_encoder(p, cfg, std::move(x), seq.special, DynamicMode::Static,
                                 nullptr, false, nullptr, &stack);
  std::vector<double> pooled(cfg.d_model);
  for (std::size_t j = 0; j < cfg.d_model; ++j) pooled[j] = enc.out(0, j);
  ForwardOutput out;
  out.logits.assign(cfg.classes, 0.0);
  for (std::size_t c = 0; c < cfg.classes; ++c)
    for (std::size_t j = 0; j < cfg.d_model; ++j) out.logits[c] += pooled[j] * p.head(j, c);
  out.confidences = softmax_vec(out.logits);
  out.predicted = argmax_low(out.confidences);
  out.attention = std::move(enc.attention);
  return out;
}

// Greedy decode. Encoder-side dynamics always follow the mode; the decoder
// joins the dynamic scope only when rect.rectify_decoder is set. One call =
// one query.
inline GenerateOutput forward_generate(const ModelParams& p, const ModelConfig& cfg,
                                       const TokenSequence& src, DynamicMode mode,
                                       const RectifierConfig& rect, RunContext& ctx,
                                       std::size_t max_steps = 0) {
  if (cfg.task != Task::Seq2Seq) throw TaskError("forward_generate on a non-seq2seq model");
  rect.validate();
  if (max_steps == 0) max_steps = cfg.max_len - 1;
  auto enc = detail::run_encoder(p, cfg, embed_sequence(p, cfg, src.ids), src.special, mode,
                                 &rect, true, &ctx.rng, nullptr);
  GenerateOutput out;
  out.encoder_attention = std::move(enc.attention);
  out.selections = std::move(enc.selections);
  std::vector<TokenId> prefix = {Vocabulary::kBos};
  const bool decoder_dyn = rect.rectify_decoder;
  for (std::size_t step = 0; step < max_steps; ++step) {
    if (prefix.size() >= cfg.max_len) {
      out.reached_max = true;
      break;
    }
    Matrix x = embed_sequence(p, cfg, prefix);
    std::vector<bool> self_special(prefix.size(), false);
    self_special[0] = true;  // BOS
    for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
      LayerOptions opt;
      opt.mode = mode;
      opt.rect = &rect;
      opt.generation_rule = true;
      opt.rng = &ctx.rng;
      if (mode_drops(mode) && decoder_dyn) opt.dropout = rect.dropout_rate;
      x = decoder_layer_forward(p.decoder[l], cfg, x, enc.out, self_special, src.special, opt,
                                decoder_dyn, nullptr);
    }
    std::vector<double> logits(cfg.vocab, 0.0);
    const std::size_t last = prefix.size() - 1;
    for (std::size_t c = 0; c < cfg.vocab; ++c)
      for (std::size_t j = 0; j < cfg.d_model; ++j) logits[c] += x(last, j) * p.head(j, c);
    const int next = argmax_low(logits);
    if (next == Vocabulary::kEos) break;
    out.tokens.push_back(next);
    prefix.push_back(next);
    if (step + 1 == max_steps) out.reached_max = true;
  }
  ++ctx.queries;
  return out;
}

// Per-layer attentive token sets over the last `last_k` recorded layers (all
// of them when the stack is shallower): heads summed into the global map,
// key totals ranked, top `top_m` non-special indices, ties to the lower
// index. Feeds the attention-overlap analyses.
inline std::vector<std::vector<std::size_t>> extract_attentive(const AttentionStack& stack,
                                                               const std::vector<bool>& special,
                                                               std::size_t last_k,
                                                               std::size_t top_m) {
  if (stack.layers.empty()) throw RangeError("extract_attentive: empty stack");
  const std::size_t total = stack.layers.size();
  const std::size_t k = std::min(last_k, total);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t l = total - k; l < total; ++l) {
    const Matrix global = global_attention(stack.layers[l]);
    const auto totals = key_totals(global);
    out.push_back(select_tokens(totals, special, top_m, 0).indices);
  }
  return out;
}

}  // namespace dynattn
