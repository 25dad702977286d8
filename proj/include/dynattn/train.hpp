#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dynattn/errors.hpp"
#include "dynattn/matrix.hpp"
#include "dynattn/model.hpp"
#include "dynattn/random.hpp"
#include "dynattn/vocab.hpp"

namespace dynattn {

struct TrainConfig {
  double lr = 0.1;
  std::size_t epochs = 5;
  std::size_t batch = 32;
  double dropout = 0.1;
  std::uint64_t seed = 1;
  double divergence_limit = 100.0;

  void validate() const {
    if (lr <= 0.0) throw ConfigError("lr must be positive");
    if (epochs == 0 || batch == 0) throw ConfigError("epochs and batch must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout outside [0,1)");
    if (divergence_limit <= 0.0) throw ConfigError("divergence_limit must be positive");
  }
};

// Gradients reuse the parameter layout.
using ModelGrads = ModelParams;

namespace detail {

inline Matrix zeros_like(const Matrix& m) { return Matrix(m.rows, m.cols); }

inline LnParams ln_zeros_like(const LnParams& p) {
  LnParams z;
  z.gain.assign(p.gain.size(), 0.0);
  z.bias.assign(p.bias.size(), 0.0);
  return z;
}

inline AttnParams attn_zeros_like(const AttnParams& p) {
  AttnParams z;
  z.wq = zeros_like(p.wq);
  z.wk = zeros_like(p.wk);
  z.wv = zeros_like(p.wv);
  z.wo = zeros_like(p.wo);
  return z;
}

}  // namespace detail

inline ModelGrads zero_grads(const ModelParams& p) {
  ModelGrads g;
  g.tok_emb = detail::zeros_like(p.tok_emb);
  g.pos_emb = detail::zeros_like(p.pos_emb);
  for (const auto& l : p.encoder) {
    EncoderLayerParams z;
    z.attn = detail::attn_zeros_like(l.attn);
    z.w1 = detail::zeros_like(l.w1);
    z.w2 = detail::zeros_like(l.w2);
    z.ln1 = detail::ln_zeros_like(l.ln1);
    z.ln2 = detail::ln_zeros_like(l.ln2);
    g.encoder.push_back(std::move(z));
  }
  for (const auto& l : p.decoder) {
    DecoderLayerParams z;
    z.self_attn = detail::attn_zeros_like(l.self_attn);
    z.cross_attn = detail::attn_zeros_like(l.cross_attn);
    z.w1 = detail::zeros_like(l.w1);
    z.w2 = detail::zeros_like(l.w2);
    z.ln1 = detail::ln_zeros_like(l.ln1);
    z.ln2 = detail::ln_zeros_like(l.ln2);
    z.ln3 = detail::ln_zeros_like(l.ln3);
    g.decoder.push_back(std::move(z));
  }
  g.head = detail::zeros_like(p.head);
  return g;
}

// Flat view over every trainable tensor, in a fixed traversal order shared by
// the SGD step and the gradient checker.
inline std::vector<std::vector<double>*> tensor_list(ModelParams& p) {
  std::vector<std::vector<double>*> out;
  out.push_back(&p.tok_emb.data);
  out.push_back(&p.pos_emb.data);
  for (auto& l : p.encoder) {
    out.push_back(&l.attn.wq.data);
    out.push_back(&l.attn.wk.data);
    out.push_back(&l.attn.wv.data);
    out.push_back(&l.attn.wo.data);
    out.push_back(&l.w1.data);
    out.push_back(&l.w2.data);
    out.push_back(&l.ln1.gain);
    out.push_back(&l.ln1.bias);
    out.push_back(&l.ln2.gain);
    out.push_back(&l.ln2.bias);
  }
  for (auto& l : p.decoder) {
    out.push_back(&l.self_attn.wq.data);
    out.push_back(&l.self_attn.wk.data);
    out.push_back(&l.self_attn.wv.data);
    out.push_back(&l.self_attn.wo.data);
    out.push_back(&l.cross_attn.wq.data);
    out.push_back(&l.cross_attn.wk.data);
    out.push_back(&l.cross_attn.wv.data);
    out.push_back(&l.cross_attn.wo.data);
    out.push_back(&l.w1.data);
    out.push_back(&l.w2.data);
    out.push_back(&l.ln1.gain);
    out.push_back(&l.ln1.bias);
    out.push_back(&l.ln2.gain);
    out.push_back(&l.ln2.bias);
    out.push_back(&l.ln3.gain);
    out.push_back(&l.ln3.bias);
  }
  out.push_back(&p.head.data);
  return out;
}

namespace detail {

inline void accumulate_matmul_at_b(const Matrix& a, const Matrix& b, Matrix& acc) {
  // acc += a^T * b, with a: n x p, b: n x q, acc: p x q
  if (a.rows != b.rows || acc.rows != a.cols || acc.cols != b.cols)
    throw ShapeError("accumulate_matmul_at_b shape mismatch");
  for (std::size_t k = 0; k < a.rows; ++k)
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) acc(i, j) += aki * b(k, j);
    }
}

inline Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  // a * b^T, with a: n x q, b: p x q
  if (a.cols != b.cols) throw ShapeError("matmul_bt shape mismatch");
  Matrix out(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.rows; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += a(i, k) * b(j, k);
      out(i, j) = acc;
    }
  return out;
}

inline Matrix ln_backward(const Matrix& dy, const Matrix& xhat, const std::vector<double>& inv,
                          const LnParams& p, LnParams& g) {
  const double n = static_cast<double>(dy.cols);
  Matrix dx(dy.rows, dy.cols);
  for (std::size_t i = 0; i < dy.rows; ++i) {
    double mean_dxhat = 0.0;
    double mean_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < dy.cols; ++j) {
      const double d = dy(i, j);
      g.gain[j] += d * xhat(i, j);
      g.bias[j] += d;
      const double dxh = d * p.gain[j];
      mean_dxhat += dxh;
      mean_dxhat_xhat += dxh * xhat(i, j);
    }
    mean_dxhat /= n;
    mean_dxhat_xhat /= n;
    for (std::size_t j = 0; j < dy.cols; ++j) {
      const double dxh = dy(i, j) * p.gain[j];
      dx(i, j) = inv[i] * (dxh - mean_dxhat - xhat(i, j) * mean_dxhat_xhat);
    }
  }
  return dx;
}

inline Matrix softmax_backward(const Matrix& a, const Matrix& da, double scale) {
  Matrix ds(a.rows, a.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < a.cols; ++j) dot += da(i, j) * a(i, j);
    for (std::size_t j = 0; j < a.cols; ++j)
      ds(i, j) = scale * a(i, j) * (da(i, j) - dot);
  }
  return ds;
}

struct AttnBackward {
  Matrix dx_q;
  Matrix dx_kv;
};

// Backward through context = concat_t(A_t V_t), out = context * Wo, with
// A_t = softmax(Q_t K_t^T / sqrt(d_head)). Masked (causal) entries carry
// A = 0 so their score gradients vanish on their own.
inline AttnBackward attention_backward(const AttnParams& ap, const ModelConfig& cfg,
                                       const Matrix& x_q, const Matrix& x_kv, const Matrix& q,
                                       const Matrix& k, const Matrix& v,
                                       const std::vector<Matrix>& heads, const Matrix& context,
                                       const Matrix& dout, AttnParams& g) {
  const std::size_t dh = cfg.d_head;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  accumulate_matmul_at_b(context, dout, g.wo);
  const Matrix dcontext = matmul_bt(dout, ap.wo);
  Matrix dq(q.rows, q.cols), dk(k.rows, k.cols), dv(v.rows, v.cols);
  for (std::size_t t = 0; t < cfg.heads; ++t) {
    const Matrix dctx_t = col_slice(dcontext, t * dh, (t + 1) * dh);
    const Matrix vt = col_slice(v, t * dh, (t + 1) * dh);
    const Matrix da = matmul_bt(dctx_t, vt);
    Matrix dvt(vt.rows, vt.cols);
    accumulate_matmul_at_b(heads[t], dctx_t, dvt);
    const Matrix ds = softmax_backward(heads[t], da, scale);
    const Matrix qt = col_slice(q, t * dh, (t + 1) * dh);
    const Matrix kt = col_slice(k, t * dh, (t + 1) * dh);
    const Matrix dqt = matmul(ds, kt);
    Matrix dkt(kt.rows, kt.cols);
    accumulate_matmul_at_b(ds, qt, dkt);
    set_col_slice(dq, t * dh, dqt);
    set_col_slice(dk, t * dh, dkt);
    set_col_slice(dv, t * dh, dvt);
  }
  accumulate_matmul_at_b(x_q, dq, g.wq);
  accumulate_matmul_at_b(x_kv, dk, g.wk);
  accumulate_matmul_at_b(x_kv, dv, g.wv);
  AttnBackward out;
  out.dx_q = matmul_bt(dq, ap.wq);
  out.dx_kv = add(matmul_bt(dk, ap.wk), matmul_bt(dv, ap.wv));
  return out;
}

inline Matrix masked_grad(const Matrix& d, const Matrix& mask) {
  return mask.empty() ? d : hadamard(d, mask);
}

inline Matrix relu_backward(const Matrix& d, const Matrix& pre) {
  Matrix out = d;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    if (pre.data[i] <= 0.0) out.data[i] = 0.0;
  return out;
}

inline Matrix encoder_layer_backward(const EncoderLayerParams& p, const ModelConfig& cfg,
                                     const EncoderLayerCache& c, const Matrix& dout,
                                     EncoderLayerParams& g) {
  const Matrix dres2 = ln_backward(dout, c.ln2_xhat, c.ln2_inv, p.ln2, g.ln2);
  const Matrix dffn_out = masked_grad(dres2, c.ffn_mask);
  Matrix dln1_out = dres2;
  accumulate_matmul_at_b(c.ffn_act, dffn_out, g.w2);
  const Matrix dffn_act = matmul_bt(dffn_out, p.w2);
  const Matrix dffn_pre = relu_backward(dffn_act, c.ffn_pre);
  accumulate_matmul_at_b(c.ln1_out, dffn_pre, g.w1);
  dln1_out = add(dln1_out, matmul_bt(dffn_pre, p.w1));
  const Matrix dres1 = ln_backward(dln1_out, c.ln1_xhat, c.ln1_inv, p.ln1, g.ln1);
  const Matrix dattn_out = masked_grad(dres1, c.attn_mask);
  const AttnBackward ab = attention_backward(p.attn, cfg, c.x_in, c.x_in, c.q, c.k, c.v,
                                             c.attn, c.context, dattn_out, g.attn);
  return add(dres1, add(ab.dx_q, ab.dx_kv));
}

inline Matrix decoder_layer_backward(const DecoderLayerParams& p, const ModelConfig& cfg,
                                     const DecoderLayerCache& c, const Matrix& enc_out,
                                     const Matrix& dout, DecoderLayerParams& g,
                                     Matrix& denc_out) {
  const Matrix dres3 = ln_backward(dout, c.ln3_xhat, c.ln3_inv, p.ln3, g.ln3);
  const Matrix dffn_out = masked_grad(dres3, c.mask_f);
  Matrix dln2_out = dres3;
  accumulate_matmul_at_b(c.ffn_act, dffn_out, g.w2);
  const Matrix dffn_act = matmul_bt(dffn_out, p.w2);
  const Matrix dffn_pre = relu_backward(dffn_act, c.ffn_pre);
  accumulate_matmul_at_b(c.ln2_out, dffn_pre, g.w1);
  dln2_out = add(dln2_out, matmul_bt(dffn_pre, p.w1));
  const Matrix dres2 = ln_backward(dln2_out, c.ln2_xhat, c.ln2_inv, p.ln2, g.ln2);
  const Matrix dout_c = masked_grad(dres2, c.mask_c);
  Matrix dln1_out = dres2;
  const AttnBackward cb =
      attention_backward(p.cross_attn, cfg, c.ln1_out, enc_out, c.q_c, c.k_c, c.v_c, c.attn_c,
                         c.context_c, dout_c, g.cross_attn);
  dln1_out = add(dln1_out, cb.dx_q);
  denc_out = add(denc_out, cb.dx_kv);
  const Matrix dres1 = ln_backward(dln1_out, c.ln1_xhat, c.ln1_inv, p.ln1, g.ln1);
  const Matrix dout_s = masked_grad(dres1, c.mask_s);
  const AttnBackward sb = attention_backward(p.self_attn, cfg, c.x_in, c.x_in, c.q_s, c.k_s,
                                             c.v_s, c.attn_s, c.context_s, dout_s, g.self_attn);
  return add(dres1, add(sb.dx_q, sb.dx_kv));
}

}  // namespace detail

struct ClassifierTrace {
  Matrix x0;
  std::vector<EncoderLayerCache> layers;
  std::vector<double> pooled;
  std::vector<double> probs;
  double loss = 0.0;
};

// Training-path forward: static attention, optional inverted dropout at the
// sublayer outputs. Returns everything backward needs.
inline ClassifierTrace classifier_loss_forward(const ModelParams& p, const ModelConfig& cfg,
                                               const TokenSequence& seq, int label,
                                               double dropout, RandomSource* rng) {
  if (cfg.task != Task::Classifier) throw TaskError("classifier_loss_forward: wrong task");
  if (label < 0 || static_cast<std::size_t>(label) >= cfg.classes)
    throw RangeError("classifier_loss_forward: label out of range");
  ClassifierTrace tr;
  tr.x0 = embed_sequence(p, cfg, seq.ids);
  Matrix x = tr.x0;
  tr.layers.resize(cfg.layers);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    LayerOptions opt;
    opt.dropout = dropout;
    opt.rng = rng;
    x = encoder_layer_forward(p.encoder[l], cfg, x, seq.special, opt, &tr.layers[l]);
  }
  tr.pooled.assign(cfg.d_model, 0.0);
  for (std::size_t j = 0; j < cfg.d_model; ++j) tr.pooled[j] = x(0, j);
  std::vector<double> logits(cfg.classes, 0.0);
  for (std::size_t c = 0; c < cfg.classes; ++c)
    for (std::size_t j = 0; j < cfg.d_model; ++j) logits[c] += tr.pooled[j] * p.head(j, c);
  tr.probs = softmax_vec(logits);
  tr.loss = -std::log(std::max(tr.probs[static_cast<std::size_t>(label)], 1e-300));
  return tr;
}

inline void classifier_loss_backward(const ModelParams& p, const ModelConfig& cfg,
                                     const TokenSequence& seq, int label,
                                     const ClassifierTrace& tr, ModelGrads& g) {
  std::vector<double> dlogits = tr.probs;
  dlogits[static_cast<std::size_t>(label)] -= 1.0;
  std::vector<double> dpooled(cfg.d_model, 0.0);
  for (std::size_t j = 0; j < cfg.d_model; ++j)
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      g.head(j, c) += tr.pooled[j] * dlogits[c];
      dpooled[j] += dlogits[c] * p.head(j, c);
    }
  Matrix dx(tr.x0.rows, cfg.d_model);
  for (std::size_t j = 0; j < cfg.d_model; ++j) dx(0, j) = dpooled[j];
  for (std::size_t l = cfg.layers; l-- > 0;)
    dx = detail::encoder_layer_backward(p.encoder[l], cfg, tr.layers[l], dx, g.encoder[l]);
  for (std::size_t i = 0; i < seq.ids.size(); ++i)
    for (std::size_t j = 0; j < cfg.d_model; ++j) {
      g.tok_emb(static_cast<std::size_t>(seq.ids[i]), j) += dx(i, j);
      g.pos_emb(i, j) += dx(i, j);
    }
}

struct Seq2SeqExample {
  TokenSequence src;
  std::vector<TokenId> ref;  // reference ids, no BOS/EOS
};

struct Seq2SeqTrace {
  Matrix x0_enc, x0_dec;
  std::vector<EncoderLayerCache> enc_layers;
  std::vector<DecoderLayerCache> dec_layers;
  Matrix enc_out;
  Matrix dec_out;
  std::vector<TokenId> dec_in;
  std::vector<TokenId> targets;
  Matrix probs;  // steps x vocab
  double loss = 0.0;
};

// Teacher-forced forward over the whole target at once (causal self
// attention). Loss is the mean per-step cross-entropy.
inline Seq2SeqTrace seq2seq_loss_forward(const ModelParams& p, const ModelConfig& cfg,
                                         const Seq2SeqExample& ex, double dropout,
                                         RandomSource* rng) {
  if (cfg.task != Task::Seq2Seq) throw TaskError("seq2seq_loss_forward: wrong task");
  if (ex.ref.empty()) throw RangeError("seq2seq_loss_forward: empty reference");
  Seq2SeqTrace tr;
  tr.dec_in.push_back(Vocabulary::kBos);
  for (const auto id : ex.ref) tr.dec_in.push_back(id);
  tr.targets = ex.ref;
  tr.targets.push_back(Vocabulary::kEos);
  if (tr.dec_in.size() > cfg.max_len) throw RangeError("seq2seq_loss_forward: target too long");

  tr.x0_enc = embed_sequence(p, cfg, ex.src.ids);
  Matrix x = tr.x0_enc;
  tr.enc_layers.resize(cfg.layers);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    LayerOptions opt;
    opt.dropout = dropout;
    opt.rng = rng;
    x = encoder_layer_forward(p.encoder[l], cfg, x, ex.src.special, opt, &tr.enc_layers[l]);
  }
  tr.enc_out = x;

  tr.x0_dec = embed_sequence(p, cfg, tr.dec_in);
  std::vector<bool> self_special(tr.dec_in.size(), false);
  self_special[0] = true;
  Matrix y = tr.x0_dec;
  tr.dec_layers.resize(cfg.decoder_layers);
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
    LayerOptions opt;
    opt.dropout = dropout;
    opt.rng = rng;
    y = decoder_layer_forward(p.decoder[l], cfg, y, tr.enc_out, self_special, ex.src.special,
                              opt, false, &tr.dec_layers[l]);
  }
  tr.dec_out = y;

  const std::size_t steps = tr.targets.size();
  tr.probs = Matrix(steps, cfg.vocab);
  double total = 0.0;
  for (std::size_t s = 0; s < steps; ++s) {
    std::vector<double> logits(cfg.vocab, 0.0);
    for (std::size_t c = 0; c < cfg.vocab; ++c)
      for (std::size_t j = 0; j < cfg.d_model; ++j) logits[c] += y(s, j) * p.head(j, c);
    const auto probs = softmax_vec(logits);
    for (std::size_t c = 0; c < cfg.vocab; ++c) tr.probs(s, c) = probs[c];
    total += -std::log(std::max(probs[static_cast<std::size_t>(tr.targets[s])], 1e-300));
  }
  tr.loss = total / static_cast<double>(steps);
  return tr;
}

inline void seq2seq_loss_backward(const ModelParams& p, const ModelConfig& cfg,
                                  const Seq2SeqExample& ex, const Seq2SeqTrace& tr,
                                  ModelGrads& g) {
  const std::size_t steps = tr.targets.size();
  Matrix dlogits(steps, cfg.vocab);
  const double inv_steps = 1.0 / static_cast<double>(steps);
  for (std::size_t s = 0; s < steps; ++s)
    for (std::size_t c = 0; c < cfg.vocab; ++c) {
      double d = tr.probs(s, c);
      if (static_cast<std::size_t>(tr.targets[s]) == c) d -= 1.0;
      dlogits(s, c) = d * inv_steps;
    }
  detail::accumulate_matmul_at_b(tr.dec_out, dlogits, g.head);
  Matrix dy = detail::matmul_bt(dlogits, p.head);
  Matrix denc_out(tr.enc_out.rows, tr.enc_out.cols);
  for (std::size_t l = cfg.decoder_layers; l-- > 0;)
    dy = detail::decoder_layer_backward(p.decoder[l], cfg, tr.dec_layers[l], tr.enc_out, dy,
                                        g.decoder[l], denc_out);
  for (std::size_t i = 0; i < tr.dec_in.size(); ++i)
    for (std::size_t j = 0; j < cfg.d_model; ++j) {
      g.tok_emb(static_cast<std::size_t>(tr.dec_in[i]), j) += dy(i, j);
      g.pos_emb(i, j) += dy(i, j);
    }
  Matrix dx = denc_out;
  for (std::size_t l = cfg.layers; l-- > 0;)
    dx = detail::encoder_layer_backward(p.encoder[l], cfg, tr.enc_layers[l], dx, g.encoder[l]);
  for (std::size_t i = 0; i < ex.src.ids.size(); ++i)
    for (std::size_t j = 0; j < cfg.d_model; ++j) {
      g.tok_emb(static_cast<std::size_t>(ex.src.ids[i]), j) += dx(i, j);
      g.pos_emb(i, j) += dx(i, j);
    }
}

struct TrainReport {
  std::vector<double> epoch_losses;
};

namespace detail {

inline void sgd_step(ModelParams& p, ModelGrads& g, double lr, double inv_batch) {
  auto pt = tensor_list(p);
  auto gt = tensor_list(g);
  for (std::size_t t = 0; t < pt.size(); ++t) {
    auto& pv = *pt[t];
    auto& gv = *gt[t];
    for (std::size_t i = 0; i < pv.size(); ++i) {
      pv[i] -= lr * gv[i] * inv_batch;
      gv[i] = 0.0;
    }
  }
}

inline void check_divergence(double epoch_loss, std::size_t epoch, double limit) {
  if (!std::isfinite(epoch_loss) || epoch_loss > limit)
    throw TrainingError("training diverged at epoch " + std::to_string(epoch + 1));
}

}  // namespace detail

// Minibatch SGD, shuffling every epoch from a child stream of tc.seed. Runs
// are bit-reproducible: equal (params, data, config) in, equal params out.
inline TrainReport train_classifier(ModelParams& p, const ModelConfig& cfg,
                                    const std::vector<TokenSequence>& seqs,
                                    const std::vector<int>& labels, const TrainConfig& tc) {
  tc.validate();
  if (seqs.size() != labels.size() || seqs.empty())
    throw RangeError("train_classifier: bad dataset");
  RandomSource rng(child_seed(tc.seed, "train-cls"));
  ModelGrads g = zero_grads(p);
  TrainReport report;
  std::vector<std::size_t> order(seqs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    shuffle(rng, order);
    double total = 0.0;
    std::size_t done = 0;
    while (done < order.size()) {
      const std::size_t take = std::min(tc.batch, order.size() - done);
      for (std::size_t b = 0; b < take; ++b) {
        const std::size_t idx = order[done + b];
        const auto tr =
            classifier_loss_forward(p, cfg, seqs[idx], labels[idx], tc.dropout, &rng);
        total += tr.loss;
        classifier_loss_backward(p, cfg, seqs[idx], labels[idx], tr, g);
      }
      detail::sgd_step(p, g, tc.lr, 1.0 / static_cast<double>(take));
      done += take;
    }
    const double epoch_loss = total / static_cast<double>(order.size());
    detail::check_divergence(epoch_loss, epoch, tc.divergence_limit);
    report.epoch_losses.push_back(epoch_loss);
  }
  return report;
}

inline TrainReport train_seq2seq(ModelParams& p, const ModelConfig& cfg,
                                 const std::vector<Seq2SeqExample>& data,
                                 const TrainConfig& tc) {
  tc.validate();
  if (data.empty()) throw RangeError("train_seq2seq: empty dataset");
  RandomSource rng(child_seed(tc.seed, "train-seq"));
  ModelGrads g = zero_grads(p);
  TrainReport report;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    shuffle(rng, order);
    double total = 0.0;
    std::size_t done = 0;
    while (done < order.size()) {
      const std::size_t take = std::min(tc.batch, order.size() - done);
      for (std::size_t b = 0; b < take; ++b) {
        const auto& ex = data[order[done + b]];
        const auto tr = seq2seq_loss_forward(p, cfg, ex, tc.dropout, &rng);
        total += tr.loss;
        seq2seq_loss_backward(p, cfg, ex, tr, g);
      }
      detail::sgd_step(p, g, tc.lr, 1.0 / static_cast<double>(take));
      done += take;
    }
    const double epoch_loss = total / static_cast<double>(data.size());
    detail::check_divergence(epoch_loss, epoch, tc.divergence_limit);
    report.epoch_losses.push_back(epoch_loss);
  }
  return report;
}

// Static argmax accuracy, no dropout, no dynamics.
inline double static_accuracy(const ModelParams& p, const ModelConfig& cfg,
                              const std::vector<TokenSequence>& seqs,
                              const std::vector<int>& labels) {
  if (seqs.size() != labels.size() || seqs.empty())
    throw RangeError("static_accuracy: bad dataset");
  RectifierConfig rect;
  RunContext ctx(0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto out = forward_classify(p, cfg, seqs[i], DynamicMode::Static, rect, ctx);
    hits += out.predicted == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(seqs.size());
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

namespace detail {

inline GradCheckResult grad_check_core(ModelParams& p, const ModelGrads& analytic,
                                       const std::function<double()>& batch_loss,
                                       double sample_fraction, std::uint64_t seed) {
  if (sample_fraction <= 0.0 || sample_fraction > 1.0)
    throw RangeError("grad_check: sample_fraction outside (0,1]");
  auto pt = tensor_list(p);
  auto at = tensor_list(const_cast<ModelGrads&>(analytic));
  std::size_t total = 0;
  for (const auto* t : pt) total += t->size();
  RandomSource rng(child_seed(seed, "grad-check"));
  const double h = 1e-5;
  GradCheckResult res;
  for (std::size_t t = 0; t < pt.size(); ++t) {
    auto& pv = *pt[t];
    const auto& av = *at[t];
    for (std::size_t i = 0; i < pv.size(); ++i) {
      if (rng.uniform01() >= sample_fraction) continue;
      const double saved = pv[i];
      pv[i] = saved + h;
      const double lp = batch_loss();
      pv[i] = saved - h;
      const double lm = batch_loss();
      pv[i] = saved;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = av[i];
      const double denom = std::max(1e-8, std::fabs(fd) + std::fabs(an));
      const double rel = std::fabs(fd - an) / denom;
      if (rel > res.max_rel_err) res.max_rel_err = rel;
      ++res.checked;
    }
  }
  if (res.checked == 0) throw RangeError("grad_check: sampled zero coordinates");
  return res;
}

}  // namespace detail

// Central-difference check of the analytic gradients on a batch, dropout
// disabled. Samples roughly sample_fraction of all coordinates.
inline GradCheckResult grad_check_classifier(const ModelParams& params, const ModelConfig& cfg,
                                             const std::vector<TokenSequence>& seqs,
                                             const std::vector<int>& labels,
                                             double sample_fraction, std::uint64_t seed) {
  if (seqs.empty() || seqs.size() != labels.size()) throw RangeError("grad_check: bad batch");
  ModelParams work = params;
  ModelGrads g = zero_grads(work);
  double base = 0.0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto tr = classifier_loss_forward(work, cfg, seqs[i], labels[i], 0.0, nullptr);
    base += tr.loss;
    classifier_loss_backward(work, cfg, seqs[i], labels[i], tr, g);
  }
  (void)base;
  const double inv = 1.0 / static_cast<double>(seqs.size());
  for (auto* t : tensor_list(g))
    for (auto& v : *t) v *= inv;
  auto loss_fn = [&work, &cfg, &seqs, &labels]() {
    double total = 0.0;
    for (std::size_t i = 0; i < seqs.size(); ++i)
      total += classifier_loss_forward(work, cfg, seqs[i], labels[i], 0.0, nullptr).loss;
    return total / static_cast<double>(seqs.size());
  };
  return detail::grad_check_core(work, g, loss_fn, sample_fraction, seed);
}

inline GradCheckResult grad_check_seq2seq(const ModelParams& params, const ModelConfig& cfg,
                                          const std::vector<Seq2SeqExample>& data,
                                          double sample_fraction, std::uint64_t seed) {
  if (data.empty()) throw RangeError("grad_check: bad batch");
  ModelParams work = params;
  ModelGrads g = zero_grads(work);
  for (const auto& ex : data) {
    const auto tr = seq2seq_loss_forward(work, cfg, ex, 0.0, nullptr);
    seq2seq_loss_backward(work, cfg, ex, tr, g);
  }
  const double inv = 1.0 / static_cast<double>(data.size());
  for (auto* t : tensor_list(g))
    for (auto& v : *t) v *= inv;
  auto loss_fn = [&work, &cfg, &data]() {
    double total = 0.0;
    for (const auto& ex : data) total += seq2seq_loss_forward(work, cfg, ex, 0.0, nullptr).loss;
    return total / static_cast<double>(data.size());
  };
  return detail::grad_check_core(work, g, loss_fn, sample_fraction, seed);
}

}  // namespace dynattn
