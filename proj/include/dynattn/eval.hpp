#pragma once

// Measurement protocols: query/transfer/multi-trial attack suites, output
// stability, statistical robustness under embedding noise, attention
// replacement, hyperparameter sensitivity, backdoor trigger rate, and
// cross-seed retraining transfer. Every fraction keeps its numerator and
// denominator; every suite is a pure function of (model, inputs, seed), so
// reruns reproduce reports byte for byte regardless of thread count.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dynattn/attacks.hpp"
#include "dynattn/corpus.hpp"
#include "dynattn/train.hpp"

namespace dynattn {

struct Fraction {
  std::size_t num = 0;
  std::size_t den = 0;

  double value() const { return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den); }

  bool operator==(const Fraction& o) const = default;
};

inline nlohmann::ordered_json fraction_json(const Fraction& f) {
  nlohmann::ordered_json j;
  j["numerator"] = f.num;
  j["denominator"] = f.den;
  j["value"] = f.value();
  return j;
}

struct LabeledText {
  std::vector<std::string> words;
  int label = 0;
};

// Read-only model bundle shared across worker threads. Forward passes carry
// their own RunContext, so concurrent evaluation never mutates the bundle.
struct EvalModel {
  const ModelParams* params = nullptr;
  const ModelConfig* config = nullptr;
  const Vocabulary* vocab = nullptr;
};

namespace detail {

// Index-parallel loop. Work items must be independent; the first exception
// wins and is rethrown after all workers drain.
template <typename Fn>
inline void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        const std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t width = std::min(threads, n);
  pool.reserve(width);
  for (std::size_t t = 0; t < width; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

inline ForwardOutput eval_classify(const EvalModel& m, const std::vector<std::string>& words,
                                   DynamicMode mode, const RectifierConfig& rect,
                                   RunContext& ctx) {
  const TokenSequence seq =
      tokenize(*m.vocab, words, SequenceKind::Classification, m.config->max_len);
  return forward_classify(*m.params, *m.config, seq, mode, rect, ctx);
}

inline bool static_correct(const EvalModel& m, const LabeledText& t) {
  RunContext scratch(0);
  return eval_classify(m, t.words, DynamicMode::Static, RectifierConfig{}, scratch).predicted ==
         t.label;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Query-threat attack suite: greedy attacks against the served mode, one
// fresh context per text. Texts the static model already misclassifies are
// excluded before any query is spent.

struct AttackSuiteResult {
  Fraction asr_q;               // successes over attacked texts
  double mean_queries = 0.0;    // over all attacked texts, success or not
  std::size_t excluded = 0;     // sample texts the static model gets wrong
  std::vector<AdversarialRecord> records;
};

inline AttackSuiteResult attack_suite(const EvalModel& m, DynamicMode mode,
                                      const RectifierConfig& rect,
                                      const std::vector<LabeledText>& sample,
                                      const SynonymTable& synonyms, const AttackConfig& attack,
                                      std::uint64_t seed, std::size_t threads = 1) {
  attack.validate();
  rect.validate();
  AttackSuiteResult out;
  std::vector<const LabeledText*> pool;
  for (const auto& t : sample) {
    if (detail::static_correct(m, t))
      pool.push_back(&t);
    else
      ++out.excluded;
  }
  if (pool.empty()) throw EvalError("attack_suite: no eligible texts in sample");
  out.records.resize(pool.size());
  detail::parallel_for(pool.size(), threads, [&](std::size_t i) {
    RunContext ctx(child_seed(seed, "attack-suite", i));
    ClassifierVictim victim{m.params, m.config, m.vocab, mode, rect, &ctx};
    out.records[i] =
        attack_classifier(pool[i]->words, pool[i]->label, victim, synonyms, attack);
  });
  std::size_t wins = 0;
  std::size_t queries = 0;
  for (const auto& r : out.records) {
    wins += r.success ? 1 : 0;
    queries += r.queries;
  }
  out.asr_q = {wins, out.records.size()};
  out.mean_queries = static_cast<double>(queries) / static_cast<double>(out.records.size());
  return out;
}

inline nlohmann::ordered_json attack_suite_json(const AttackSuiteResult& r) {
  nlohmann::ordered_json j;
  j["asr_q"] = fraction_json(r.asr_q);
  j["mean_queries"] = r.mean_queries;
  j["attacked"] = r.records.size();
  j["excluded"] = r.excluded;
  return j;
}

// ---------------------------------------------------------------------------
// Transfer suites: replay archived successes on a target mode. One trial
// gives ASR_D/ASR_S depending on the target; `trials` > 1 counts a record as
// transferred when any trial misclassifies (ASR_M at trials=10). Trial 1 of
// a multi-trial run consumes the same stream prefix as a single-trial run,
// so the multi-trial rate can never be smaller.

struct TransferResult {
  Fraction asr;
  std::size_t trials = 1;
  std::size_t skipped_failures = 0;  // archive records that never succeeded
};

inline TransferResult transfer_suite(const std::vector<AdversarialRecord>& archive,
                                     const EvalModel& m, DynamicMode mode,
                                     const RectifierConfig& rect, std::uint64_t seed,
                                     std::size_t trials = 1, std::size_t threads = 1) {
  rect.validate();
  if (trials == 0) throw EvalError("transfer_suite: zero trials");
  TransferResult out;
  out.trials = trials;
  std::vector<const AdversarialRecord*> pool;
  for (const auto& r : archive) {
    if (r.success)
      pool.push_back(&r);
    else
      ++out.skipped_failures;
  }
  std::vector<std::uint8_t> hit(pool.size(), 0);
  detail::parallel_for(pool.size(), threads, [&](std::size_t i) {
    RunContext ctx(child_seed(seed, "transfer", i));
    const ClassifierVictim target{m.params, m.config, m.vocab, mode, rect, &ctx};
    for (const auto& trial : replay(*pool[i], target, trials))
      if (trial.predicted != pool[i]->original_label) {
        hit[i] = 1;
        break;
      }
  });
  std::size_t wins = 0;
  for (const auto h : hit) wins += h;
  out.asr = {wins, pool.size()};
  return out;
}

inline TransferResult multi_trial(const std::vector<AdversarialRecord>& archive,
                                  const EvalModel& m, DynamicMode mode,
                                  const RectifierConfig& rect, std::uint64_t seed,
                                  std::size_t trials = 10, std::size_t threads = 1) {
  return transfer_suite(archive, m, mode, rect, seed, trials, threads);
}

inline nlohmann::ordered_json transfer_json(const TransferResult& r) {
  nlohmann::ordered_json j;
  j["asr"] = fraction_json(r.asr);
  j["trials"] = r.trials;
  j["skipped_failures"] = r.skipped_failures;
  return j;
}

// ---------------------------------------------------------------------------
// Output stability: repeat each query `trials` times and take the population
// stdev of the original-label confidence. A static model answers identically
// every time, so both means are exactly zero there.

struct StabilityResult {
  double sigma_clean = 0.0;  // mean per-text stdev over the clean set
  double sigma_adv = 0.0;    // same over the adversarial set
  std::size_t trials = 0;
  std::size_t clean_texts = 0;
  std::size_t adv_texts = 0;
};

inline StabilityResult stability(const EvalModel& m, DynamicMode mode,
                                 const RectifierConfig& rect,
                                 const std::vector<LabeledText>& clean,
                                 const std::vector<LabeledText>& adv, std::size_t trials = 100,
                                 std::uint64_t seed = 1, std::size_t threads = 1) {
  rect.validate();
  if (trials < 2) throw EvalError("stability: need at least 2 trials");
  StabilityResult out;
  out.trials = trials;
  out.clean_texts = clean.size();
  out.adv_texts = adv.size();
  const std::size_t total = clean.size() + adv.size();
  std::vector<double> stdevs(total, 0.0);
  detail::parallel_for(total, threads, [&](std::size_t i) {
    const LabeledText& t = i < clean.size() ? clean[i] : adv[i - clean.size()];
    RunContext ctx(child_seed(seed, "stability", i));
    std::vector<double> conf;
    conf.reserve(trials);
    for (std::size_t k = 0; k < trials; ++k)
      conf.push_back(detail::eval_classify(m, t.words, mode, rect, ctx)
                         .confidences[static_cast<std::size_t>(t.label)]);
    stdevs[i] = population_stdev(conf);
  });
  for (std::size_t i = 0; i < clean.size(); ++i) out.sigma_clean += stdevs[i];
  for (std::size_t i = clean.size(); i < total; ++i) out.sigma_adv += stdevs[i];
  if (!clean.empty()) out.sigma_clean /= static_cast<double>(clean.size());
  if (!adv.empty()) out.sigma_adv /= static_cast<double>(adv.size());
  return out;
}

inline nlohmann::ordered_json stability_json(const StabilityResult& r) {
  nlohmann::ordered_json j;
  j["sigma_clean"] = r.sigma_clean;
  j["sigma_adv"] = r.sigma_adv;
  j["trials"] = r.trials;
  j["clean_texts"] = r.clean_texts;
  j["adv_texts"] = r.adv_texts;
  return j;
}

// ---------------------------------------------------------------------------
// Statistical robustness: Gaussian noise on a fraction of the non-special
// token embeddings, noise scale tied to the perturbation strength grid. A
// text is robust at a strength iff all noise copies keep the correct label.

struct RobustnessPoint {
  double mu = 0.0;
  double sigma = 0.0;
  Fraction robust;
};

struct RobustnessCurveResult {
  double rho = 0.0;
  std::size_t copies = 0;
  double noise_factor = 0.0;
  std::size_t eligible = 0;
  std::size_t excluded = 0;  // texts the evaluated mode got wrong at sigma=0
  std::vector<RobustnessPoint> points;  // grid order, sorted by mu
};

// 0.9 .. 2.2 in steps of 0.1, built from integer tenths so the values print
// cleanly in reports.
inline std::vector<double> default_mu_grid() {
  std::vector<double> grid;
  for (int k = 9; k <= 22; ++k) grid.push_back(static_cast<double>(k) / 10.0);
  return grid;
}

inline RobustnessCurveResult statistical_robustness(
    const EvalModel& m, DynamicMode mode, const RectifierConfig& rect,
    const std::vector<LabeledText>& texts, double rho, const std::vector<double>& mu_grid,
    std::size_t copies = 500, double noise_factor = 0.03125, std::uint64_t seed = 1,
    std::size_t threads = 1) {
  rect.validate();
  if (!(rho > 0.0 && rho <= 1.0)) throw EvalError("statistical_robustness: rho outside (0,1]");
  if (copies == 0) throw EvalError("statistical_robustness: zero copies");
  if (noise_factor < 0.0) throw EvalError("statistical_robustness: negative noise factor");
  if (mu_grid.empty()) throw EvalError("statistical_robustness: empty grid");
  if (!std::is_sorted(mu_grid.begin(), mu_grid.end()))
    throw EvalError("statistical_robustness: grid must be sorted by mu");

  RobustnessCurveResult out;
  out.rho = rho;
  out.copies = copies;
  out.noise_factor = noise_factor;

  struct Prepared {
    TokenSequence seq;
    std::vector<std::size_t> content_rows;  // embedding rows open to noise
    int label = 0;
  };
  std::vector<Prepared> prep;
  std::vector<std::uint8_t> keep(texts.size(), 0);
  detail::parallel_for(texts.size(), threads, [&](std::size_t i) {
    RunContext ctx(child_seed(seed, "robust-elig", i));
    keep[i] = detail::eval_classify(m, texts[i].words, mode, rect, ctx).predicted ==
                      texts[i].label
                  ? 1
                  : 0;
  });
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (!keep[i]) {
      ++out.excluded;
      continue;
    }
    Prepared p;
    p.seq = tokenize(*m.vocab, texts[i].words, SequenceKind::Classification, m.config->max_len);
    for (std::size_t r = 0; r < p.seq.special.size(); ++r)
      if (!p.seq.special[r]) p.content_rows.push_back(r);
    p.label = texts[i].label;
    prep.push_back(std::move(p));
  }
  out.eligible = prep.size();
  if (prep.empty()) throw EvalError("statistical_robustness: no eligible texts");

  const std::size_t points = mu_grid.size();
  std::vector<std::uint8_t> robust(prep.size() * points, 0);
  detail::parallel_for(prep.size() * points, threads, [&](std::size_t task) {
    const std::size_t t = task / points;
    const std::size_t g = task % points;
    const Prepared& p = prep[t];
    const double sigma = noise_factor * mu_grid[g];
    const std::size_t n = p.content_rows.size();
    const auto k = std::min(
        n, static_cast<std::size_t>(std::ceil(rho * static_cast<double>(n))));
    RunContext ctx(child_seed(child_seed(seed, "robust", t), "strength", g));
    bool ok = true;
    for (std::size_t c = 0; c < copies && ok; ++c) {
      const auto chosen = sample_without_replacement(ctx.rng, n, k);
      Matrix noise(p.seq.ids.size(), m.config->d_model);
      for (const auto pick : chosen) {
        const auto values = gaussian(ctx.rng, sigma, m.config->d_model);
        const std::size_t row = p.content_rows[pick];
        for (std::size_t d = 0; d < m.config->d_model; ++d) noise(row, d) = values[d];
      }
      const auto res = forward_classify(*m.params, *m.config, p.seq, mode, rect, ctx, &noise);
      ok = res.predicted == p.label;
    }
    robust[task] = ok ? 1 : 0;
  });
  for (std::size_t g = 0; g < points; ++g) {
    RobustnessPoint pt;
    pt.mu = mu_grid[g];
    pt.sigma = noise_factor * mu_grid[g];
    std::size_t wins = 0;
    for (std::size_t t = 0; t < prep.size(); ++t) wins += robust[t * points + g];
    pt.robust = {wins, prep.size()};
    out.points.push_back(pt);
  }
  return out;
}

inline nlohmann::ordered_json robustness_json(const RobustnessCurveResult& r) {
  nlohmann::ordered_json j;
  j["rho"] = r.rho;
  j["copies"] = r.copies;
  j["noise_factor"] = r.noise_factor;
  j["eligible"] = r.eligible;
  j["excluded"] = r.excluded;
  auto pts = nlohmann::ordered_json::array();
  for (const auto& p : r.points) {
    nlohmann::ordered_json pj;
    pj["mu"] = p.mu;
    pj["sigma"] = p.sigma;
    pj["robust"] = fraction_json(p.robust);
    pts.push_back(std::move(pj));
  }
  j["points"] = std::move(pts);
  return j;
}

// CSV rows for plotting; numbers use shortest round-trip formatting so equal
// results serialize identically.
inline std::string robustness_csv(const RobustnessCurveResult& r) {
  std::string out = "mu,sigma,robust_fraction\n";
  for (const auto& p : r.points) {
    out += nlohmann::ordered_json(p.mu).dump();
    out += ',';
    out += nlohmann::ordered_json(p.sigma).dump();
    out += ',';
    out += nlohmann::ordered_json(p.robust.value()).dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attention replacement: capture the static attention maps of the original
// text and force them into a forward pass over its adversarial twin. The
// self-injection identity is revalidated on every pair.

struct ReplacementPair {
  std::vector<std::string> original;
  std::vector<std::string> adversarial;
  int label = 0;  // the original text's true label
};

struct ReplacementResult {
  Fraction recovered;
  std::size_t skipped_misaligned = 0;
};

inline ReplacementResult replacement_experiment(const EvalModel& m,
                                                const std::vector<ReplacementPair>& pairs,
                                                std::size_t threads = 1) {
  if (pairs.empty()) throw EvalError("replacement_experiment: empty pair set");
  ReplacementResult out;
  std::vector<const ReplacementPair*> aligned;
  for (const auto& p : pairs) {
    if (p.original.size() == p.adversarial.size())
      aligned.push_back(&p);
    else
      ++out.skipped_misaligned;
  }
  if (aligned.empty()) throw EvalError("replacement_experiment: no aligned pairs");
  std::vector<std::uint8_t> hit(aligned.size(), 0);
  detail::parallel_for(aligned.size(), threads, [&](std::size_t i) {
    const ReplacementPair& p = *aligned[i];
    const auto orig_seq =
        tokenize(*m.vocab, p.original, SequenceKind::Classification, m.config->max_len);
    const auto adv_seq =
        tokenize(*m.vocab, p.adversarial, SequenceKind::Classification, m.config->max_len);
    RunContext scratch(0);
    const auto base = forward_classify(*m.params, *m.config, orig_seq, DynamicMode::Static,
                                       RectifierConfig{}, scratch);
    const auto self = inject_attention(*m.params, *m.config, orig_seq, base.attention);
    if (self.predicted != base.predicted)
      throw EvalError("replacement_experiment: self-injection identity violated");
    const auto swapped = inject_attention(*m.params, *m.config, adv_seq, base.attention);
    hit[i] = swapped.predicted == p.label ? 1 : 0;
  });
  std::size_t wins = 0;
  for (const auto h : hit) wins += h;
  out.recovered = {wins, aligned.size()};
  return out;
}

inline nlohmann::ordered_json replacement_json(const ReplacementResult& r) {
  nlohmann::ordered_json j;
  j["recovered"] = fraction_json(r.recovered);
  j["skipped_misaligned"] = r.skipped_misaligned;
  return j;
}

// ---------------------------------------------------------------------------
// Sensitivity sweep over the selection range and the weakening factor.
// ACC_a scores archived adversarial texts, ACC_o a clean sample, one seeded
// trial per text; cells are ranked by the composite M = ACC_a + ACC_o.

struct SweepCell {
  double m_lo = 0.0;
  double m_hi = 0.0;
  double beta = 0.0;
  Fraction acc_adv;
  Fraction acc_clean;
  double metric = 0.0;
};

inline std::vector<SweepCell> sensitivity_sweep(
    const EvalModel& m, const std::vector<AdversarialRecord>& archive,
    const std::vector<LabeledText>& clean,
    const std::vector<std::pair<double, double>>& ranges, const std::vector<double>& betas,
    std::uint64_t seed, std::size_t threads = 1) {
  if (ranges.empty() || betas.empty()) throw EvalError("sensitivity_sweep: empty grid");
  std::vector<const AdversarialRecord*> adv;
  for (const auto& r : archive)
    if (r.success) adv.push_back(&r);
  if (adv.empty()) throw EvalError("sensitivity_sweep: no successful records in archive");
  if (clean.empty()) throw EvalError("sensitivity_sweep: empty clean sample");

  std::vector<SweepCell> cells;
  for (const auto& [lo, hi] : ranges)
    for (const auto beta : betas) {
      SweepCell c;
      c.m_lo = lo;
      c.m_hi = hi;
      c.beta = beta;
      cells.push_back(c);
    }
  detail::parallel_for(cells.size(), threads, [&](std::size_t i) {
    SweepCell& c = cells[i];
    RectifierConfig rect;
    rect.m_lo = c.m_lo;
    rect.m_hi = c.m_hi;
    rect.beta = c.beta;
    rect.validate();
    RunContext ctx(child_seed(seed, "sweep", i));
    std::size_t adv_wins = 0;
    for (const auto* r : adv)
      adv_wins += detail::eval_classify(m, r->adversarial_words, DynamicMode::DynAttn, rect, ctx)
                          .predicted == r->original_label
                      ? 1
                      : 0;
    std::size_t clean_wins = 0;
    for (const auto& t : clean)
      clean_wins +=
          detail::eval_classify(m, t.words, DynamicMode::DynAttn, rect, ctx).predicted == t.label
              ? 1
              : 0;
    c.acc_adv = {adv_wins, adv.size()};
    c.acc_clean = {clean_wins, clean.size()};
    c.metric = c.acc_adv.value() + c.acc_clean.value();
  });
  std::sort(cells.begin(), cells.end(), [](const SweepCell& a, const SweepCell& b) {
    if (a.metric != b.metric) return a.metric > b.metric;
    if (a.m_lo != b.m_lo) return a.m_lo < b.m_lo;
    if (a.m_hi != b.m_hi) return a.m_hi < b.m_hi;
    return a.beta < b.beta;
  });
  return cells;
}

inline nlohmann::ordered_json sweep_json(const std::vector<SweepCell>& cells) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& c : cells) {
    nlohmann::ordered_json j;
    j["m_lo"] = c.m_lo;
    j["m_hi"] = c.m_hi;
    j["beta"] = c.beta;
    j["acc_adv"] = fraction_json(c.acc_adv);
    j["acc_clean"] = fraction_json(c.acc_clean);
    j["metric"] = c.metric;
    arr.push_back(std::move(j));
  }
  return arr;
}

inline std::string sweep_csv(const std::vector<SweepCell>& cells) {
  std::string out = "m_lo,m_hi,beta,acc_adv,acc_clean,metric\n";
  for (const auto& c : cells) {
    out += nlohmann::ordered_json(c.m_lo).dump();
    out += ',';
    out += nlohmann::ordered_json(c.m_hi).dump();
    out += ',';
    out += nlohmann::ordered_json(c.beta).dump();
    out += ',';
    out += nlohmann::ordered_json(c.acc_adv.value()).dump();
    out += ',';
    out += nlohmann::ordered_json(c.acc_clean.value()).dump();
    out += ',';
    out += nlohmann::ordered_json(c.metric).dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backdoor trigger rate: splice the trigger word into clean texts whose label
// differs from the target and count predictions landing on the target label.

struct TriggerResult {
  Fraction asr;
  std::size_t skipped_target_label = 0;
};

inline TriggerResult trigger_asr(const EvalModel& m, DynamicMode mode,
                                 const RectifierConfig& rect, const std::string& trigger,
                                 int target_label, const std::vector<LabeledText>& clean,
                                 std::uint64_t seed, std::size_t threads = 1) {
  rect.validate();
  if (trigger.empty()) throw EvalError("trigger_asr: empty trigger");
  TriggerResult out;
  std::vector<const LabeledText*> pool;
  for (const auto& t : clean) {
    if (t.label != target_label)
      pool.push_back(&t);
    else
      ++out.skipped_target_label;
  }
  if (pool.empty()) throw EvalError("trigger_asr: no texts outside the target label");
  std::vector<std::uint8_t> hit(pool.size(), 0);
  detail::parallel_for(pool.size(), threads, [&](std::size_t i) {
    RunContext ctx(child_seed(seed, "trigger", i));
    auto words = pool[i]->words;
    const auto pos = static_cast<std::size_t>(
        discrete_uniform(ctx.rng, 0, static_cast<std::int64_t>(words.size())));
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(pos), trigger);
    hit[i] = detail::eval_classify(m, words, mode, rect, ctx).predicted == target_label ? 1 : 0;
  });
  std::size_t wins = 0;
  for (const auto h : hit) wins += h;
  out.asr = {wins, pool.size()};
  return out;
}

inline nlohmann::ordered_json trigger_json(const TriggerResult& r) {
  nlohmann::ordered_json j;
  j["asr"] = fraction_json(r.asr);
  j["skipped_target_label"] = r.skipped_target_label;
  return j;
}

// ---------------------------------------------------------------------------
// Retraining transfer: train two models from different seeds on the same
// corpus, attack the first, replay its successes on the second.

struct RetrainTransferResult {
  Fraction transfer;    // replayed successes the second model misclassifies
  Fraction source_asr;  // attack success on the first model, for context
};

inline RetrainTransferResult retrain_transfer_rate(
    const std::vector<LabeledText>& train, const std::vector<LabeledText>& attack_pool,
    const Vocabulary& vocab, ModelConfig cfg, TrainConfig tc, std::uint64_t seed_a,
    std::uint64_t seed_b, const SynonymTable& synonyms, const AttackConfig& attack,
    std::uint64_t seed, std::size_t threads = 1) {
  if (train.empty()) throw EvalError("retrain_transfer_rate: empty training set");
  cfg.validate();
  std::vector<TokenSequence> seqs;
  std::vector<int> labels;
  for (const auto& t : train) {
    seqs.push_back(tokenize(vocab, t.words, SequenceKind::Classification, cfg.max_len));
    labels.push_back(t.label);
  }
  auto fit = [&](std::uint64_t model_seed) {
    RandomSource init_rng(model_seed);
    ModelParams params = init_params(cfg, init_rng);
    TrainConfig local = tc;
    local.seed = model_seed;
    train_classifier(params, cfg, seqs, labels, local);
    return params;
  };
  const ModelParams a = fit(seed_a);
  const ModelParams b = fit(seed_b);
  const EvalModel model_a{&a, &cfg, &vocab};
  const EvalModel model_b{&b, &cfg, &vocab};
  const auto suite = attack_suite(model_a, DynamicMode::Static, RectifierConfig{}, attack_pool,
                                  synonyms, attack, seed, threads);
  const auto replayed = transfer_suite(suite.records, model_b, DynamicMode::Static,
                                       RectifierConfig{}, seed, 1, threads);
  RetrainTransferResult out;
  out.transfer = replayed.asr;
  out.source_asr = suite.asr_q;
  return out;
}

inline nlohmann::ordered_json retrain_transfer_json(const RetrainTransferResult& r) {
  nlohmann::ordered_json j;
  j["transfer"] = fraction_json(r.transfer);
  j["source_asr"] = fraction_json(r.source_asr);
  return j;
}

// ---------------------------------------------------------------------------
// Generation quality: greedy decode and score against references. Callers
// feed clean sources for the baseline and archived adversarial sources for
// the attacked score.

struct GenerationInput {
  std::vector<std::string> src;
  std::vector<TokenId> reference;
};

struct GenerationBleuResult {
  double corpus = 0.0;
  std::vector<double> sentences;
};

inline GenerationBleuResult generation_bleu(const EvalModel& m,
                                            const std::vector<GenerationInput>& inputs,
                                            DynamicMode mode, const RectifierConfig& rect,
                                            std::uint64_t seed, std::size_t threads = 1) {
  rect.validate();
  if (inputs.empty()) throw EvalError("generation_bleu: no inputs");
  GenerationBleuResult out;
  out.sentences.assign(inputs.size(), 0.0);
  detail::parallel_for(inputs.size(), threads, [&](std::size_t i) {
    if (inputs[i].reference.empty()) throw EvalError("generation_bleu: empty reference");
    RunContext ctx(child_seed(seed, "gen-bleu", i));
    const auto seq = tokenize(*m.vocab, inputs[i].src, SequenceKind::Source, m.config->max_len);
    const auto gen = forward_generate(*m.params, *m.config, seq, mode, rect, ctx);
    out.sentences[i] = sentence_bleu(gen.tokens, inputs[i].reference);
  });
  for (const auto s : out.sentences) out.corpus += s;
  out.corpus /= static_cast<double>(out.sentences.size());
  return out;
}

inline nlohmann::ordered_json generation_bleu_json(const GenerationBleuResult& r) {
  nlohmann::ordered_json j;
  j["corpus_bleu"] = r.corpus;
  j["sentences"] = r.sentences;
  return j;
}

}  // namespace dynattn
