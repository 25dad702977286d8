// Command line driver: train models, attack them, evaluate defenses, sweep
// rectifier settings, and replay archived adversarial inputs. Exit codes are
// part of the interface: 0 success, 2 config error, 3 training divergence,
// 4 missing or unusable artifact, 1 anything else.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "cli_support.hpp"

namespace cli {
namespace {

struct Invocation {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::size_t> threads;
};

struct Run {
  Json cfg;
  std::string config_bytes;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::string started;
  RunOutput out;
};

Run begin(const Invocation& inv, std::initializer_list<const char*> allowed_top,
          std::initializer_list<const char*> allowed_io) {
  std::ifstream in(inv.config_path, std::ios::binary);
  if (!in) throw dynattn::ConfigError("cannot open config: " + inv.config_path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Json cfg;
  try {
    cfg = Json::parse(bytes);
  } catch (const Json::parse_error& e) {
    throw dynattn::ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  require_object(cfg, "config");
  reject_unknown(cfg, "", allowed_top);

  Run r;
  r.started = rfc3339_utc_now();
  r.cfg = std::move(cfg);
  r.config_bytes = std::move(bytes);
  r.seed = inv.seed ? *inv.seed : opt_u64(r.cfg, "", "seed", 1);
  r.threads = inv.threads ? *inv.threads : opt_size(r.cfg, "", "threads", 1);
  if (r.threads == 0) fail("threads", "must be positive");

  const Json* io = maybe(r.cfg, "io");
  if (io) reject_unknown(*io, "io", allowed_io);
  if (inv.out_dir)
    r.out.out_dir = *inv.out_dir;
  else if (io && maybe(*io, "out_dir"))
    r.out.out_dir = need_string(*io, "io", "out_dir");
  else
    fail("io.out_dir", "missing required key (or pass --out-dir)");
  std::filesystem::create_directories(r.out.out_dir);
  return r;
}

const Json& io_section(const Run& r) { return need(r.cfg, "", "io"); }

std::string io_string(const Run& r, const char* key, const std::string& dflt) {
  const Json* io = maybe(r.cfg, "io");
  return io ? opt_string(*io, "io", key, dflt) : dflt;
}

std::string io_required(const Run& r, const char* key) {
  return need_string(io_section(r), "io", key);
}

DefenseSpec defense_or_default(const Run& r) {
  const Json* d = maybe(r.cfg, "defense");
  return d ? parse_defense(*d, "defense") : DefenseSpec{};
}

std::vector<std::uint64_t> eval_seeds(const Json& ev, std::uint64_t fallback) {
  const Json* s = maybe(ev, "seeds");
  if (!s) return {fallback};
  if (!s->is_array() || s->empty()) fail("eval.seeds", "expected a non-empty array");
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < s->size(); ++i)
    out.push_back(as_u64((*s)[i], "eval.seeds[" + std::to_string(i) + "]"));
  return out;
}

std::vector<double> double_array(const Json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) fail(path, "expected a non-empty array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(as_double(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

std::vector<std::pair<double, double>> range_array(const Json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) fail(path, "expected a non-empty array of [lo, hi] pairs");
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    if (!v[i].is_array() || v[i].size() != 2) fail(p, "expected a [lo, hi] pair");
    out.emplace_back(as_double(v[i][0], p + "[0]"), as_double(v[i][1], p + "[1]"));
  }
  return out;
}

void check_task(const dynattn::ModelConfig& ck, dynattn::Task want, const std::string& what) {
  if (ck.task != want)
    throw dynattn::ConfigError(what + " needs a " +
                               std::string(dynattn::task_name(want)) + " checkpoint, got " +
                               dynattn::task_name(ck.task));
}

// ---------------------------------------------------------------------------
// train: materialize a corpus, fit a model, save the checkpoint.

int cmd_train(const Invocation& inv) {
  Run r = begin(inv, {"seed", "threads", "data", "model", "train", "io"},
                {"out_dir", "checkpoint", "report"});
  const Json* dsec = maybe(r.cfg, "data");
  const DataSpec d = dsec ? parse_data(*dsec, "data", true) : DataSpec{};
  const Json* tsec = maybe(r.cfg, "train");
  const dynattn::TrainConfig tc = tsec ? parse_train(*tsec, "train") : dynattn::TrainConfig{};
  const Json* msec = maybe(r.cfg, "model");
  dynattn::ModelConfig cfg = msec ? parse_model(*msec, "model", d.task)
                                  : [&] {
                                      dynattn::ModelConfig c;
                                      c.task = d.task;
                                      return c;
                                    }();

  dynattn::Vocabulary vocab;
  dynattn::ModelParams params;
  dynattn::TrainReport report;
  std::size_t corpus_size = 0;
  std::size_t train_n = 0;
  OJson holdout = nullptr;

  if (d.task == dynattn::Task::Classifier) {
    std::vector<dynattn::TextItem> items = materialize_classification(d);
    corpus_size = items.size();
    train_n = d.train_count == 0 ? items.size() : d.train_count;
    if (train_n == 0 || train_n > items.size())
      fail("data.train_count", "outside [1, corpus size]");
    std::vector<dynattn::TextItem> train_items(items.begin(),
                                               items.begin() + static_cast<std::ptrdiff_t>(train_n));
    if (d.poisoned) {
      dynattn::RandomSource prng(d.poison_seed);
      auto pr = dynattn::poison(train_items, d.trigger, d.target_label, d.poison_rate, prng);
      train_items = std::move(pr.items);
      vocab = classification_vocab(train_items);
    } else {
      vocab = classification_vocab(items);
    }
    cfg.vocab = vocab.size();
    cfg.validate();

    std::vector<dynattn::TokenSequence> seqs;
    std::vector<int> labels;
    seqs.reserve(train_items.size());
    for (const auto& t : train_items) {
      seqs.push_back(
          dynattn::tokenize(vocab, t.words, dynattn::SequenceKind::Classification, cfg.max_len));
      labels.push_back(t.label);
    }
    dynattn::RandomSource init_rng(r.seed);
    params = dynattn::init_params(cfg, init_rng);
    report = dynattn::train_classifier(params, cfg, seqs, labels, tc);

    if (train_n < items.size()) {
      const dynattn::EvalModel m{&params, &cfg, &vocab};
      std::size_t correct = 0;
      for (std::size_t i = train_n; i < items.size(); ++i)
        correct += dynattn::detail::static_correct(m, {items[i].words, items[i].label}) ? 1u : 0u;
      holdout = dynattn::fraction_json(
          dynattn::Fraction{correct, items.size() - train_n});
    }
  } else {
    std::vector<dynattn::ParallelItem> pairs = materialize_seq2seq(d);
    corpus_size = pairs.size();
    train_n = d.train_count == 0 ? pairs.size() : d.train_count;
    if (train_n == 0 || train_n > pairs.size()) fail("data.train_count", "outside [1, corpus size]");
    vocab = seq2seq_vocab(pairs);
    cfg.vocab = vocab.size();
    cfg.validate();

    std::vector<dynattn::Seq2SeqExample> data;
    data.reserve(train_n);
    for (std::size_t i = 0; i < train_n; ++i) {
      dynattn::Seq2SeqExample ex;
      ex.src = dynattn::tokenize(vocab, pairs[i].src, dynattn::SequenceKind::Source, cfg.max_len);
      for (const auto& w : pairs[i].ref) ex.ref.push_back(vocab.id_of(w));
      data.push_back(std::move(ex));
    }
    dynattn::RandomSource init_rng(r.seed);
    params = dynattn::init_params(cfg, init_rng);
    report = dynattn::train_seq2seq(params, cfg, data, tc);
  }

  const std::string ck_name = io_string(r, "checkpoint", "model.ckpt");
  dynattn::save_checkpoint((r.out.add(ck_name)).string(), params, cfg, vocab);

  OJson j;
  j["task"] = dynattn::task_name(cfg.task);
  j["corpus_size"] = corpus_size;
  j["train_count"] = train_n;
  j["vocab_size"] = vocab.size();
  j["poisoned"] = d.poisoned;
  j["epochs"] = report.epoch_losses.size();
  j["final_loss"] = report.epoch_losses.empty() ? 0.0 : report.epoch_losses.back();
  j["holdout_accuracy"] = holdout;
  const std::string report_name = io_string(r, "report", "train_report.json");
  r.out.emit_json(report_name, j);

  write_manifest(r.out, "train", r.config_bytes, r.seed, r.threads, r.started);
  std::cout << "checkpoint=" << ck_name << " vocab=" << vocab.size()
            << " final_loss=" << csv_num(j["final_loss"].get<double>());
  if (!holdout.is_null()) std::cout << " holdout_acc=" << csv_num(holdout["value"].get<double>());
  std::cout << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// attack: run an adversarial suite against a checkpoint and archive every
// record. Threat selects the surface the attacker queries; transfer threats
// replay the archive against the configured target mode afterwards.

int cmd_attack(const Invocation& inv) {
  Run r = begin(inv, {"seed", "threads", "data", "defense", "attack", "threat", "transfer", "io"},
                {"out_dir", "checkpoint", "archive", "report"});
  const dynattn::Checkpoint ck = dynattn::load_checkpoint(io_required(r, "checkpoint"));
  const DefenseSpec def = defense_or_default(r);
  const Json* asec = maybe(r.cfg, "attack");
  const dynattn::AttackConfig ac = asec ? parse_attack(*asec, "attack") : dynattn::AttackConfig{};
  const std::string threat = opt_string(r.cfg, "", "threat", "query");
  if (threat != "query" && threat != "dyn-transfer" && threat != "static-transfer")
    fail("threat", "unknown threat '" + threat + "'");
  std::size_t transfer_trials = 1;
  if (const Json* t = maybe(r.cfg, "transfer")) {
    reject_unknown(*t, "transfer", {"trials"});
    transfer_trials = opt_size(*t, "transfer", "trials", 1);
    if (transfer_trials == 0) fail("transfer.trials", "must be positive");
  }
  const DataSpec d = parse_data(need(r.cfg, "", "data"), "data", false);
  const std::string archive_name = io_string(r, "archive", "archive.jsonl");
  const std::string report_name = io_string(r, "report", "attack_report.json");
  const dynattn::SynonymTable syns{dynattn::wordlists_v1::make_synonym_table()};
  const dynattn::EvalModel m{&ck.params, &ck.config, &ck.vocab};

  OJson j;
  j["threat"] = threat;

  if (ac.goal == dynattn::AttackGoal::Generation) {
    if (threat != "query") fail("threat", "generation attacks support the query threat only");
    check_task(ck.config, dynattn::Task::Seq2Seq, "attack.goal generation");
    if (d.task != dynattn::Task::Seq2Seq) fail("data.task", "does not match the checkpoint's task");
    const std::vector<dynattn::ParallelItem> pairs =
        slice_pairs(materialize_seq2seq(d), d, "data");
    dynattn::RunContext ctx(r.seed);
    const dynattn::GenerationVictim victim{&ck.params, &ck.config, &ck.vocab,
                                           def.mode,   def.rect,   &ctx};
    std::vector<dynattn::AdversarialRecord> records;
    std::size_t successes = 0;
    double queries = 0.0;
    for (const auto& p : pairs) {
      std::vector<dynattn::TokenId> ref;
      for (const auto& w : p.ref) ref.push_back(ck.vocab.id_of(w));
      records.push_back(dynattn::attack_generation(p.src, ref, victim, syns, ac));
      successes += records.back().success ? 1u : 0u;
      queries += static_cast<double>(records.back().queries);
    }
    dynattn::save_archive((r.out.add(archive_name)).string(), records);
    j["mode"] = dynattn::mode_name(def.mode);
    j["attacked"] = records.size();
    j["asr"] = dynattn::fraction_json(dynattn::Fraction{successes, records.size()});
    j["mean_queries"] = records.empty() ? 0.0 : queries / static_cast<double>(records.size());
    r.out.emit_json(report_name, j);
    write_manifest(r.out, "attack", r.config_bytes, r.seed, r.threads, r.started);
    std::cout << "attacked=" << records.size() << " asr="
              << csv_num(j["asr"]["value"].get<double>()) << "\n";
    return 0;
  }

  check_task(ck.config, dynattn::Task::Classifier, "attack.goal classification");
  if (d.task != dynattn::Task::Classifier) fail("data.task", "does not match the checkpoint's task");
  const std::vector<dynattn::LabeledText> sample =
      slice_items(materialize_classification(d), d, "data");

  dynattn::DynamicMode surface = def.mode;
  if (threat == "dyn-transfer") surface = dynattn::DynamicMode::DynAttn;
  if (threat == "static-transfer") surface = dynattn::DynamicMode::Static;

  const dynattn::AttackSuiteResult suite =
      dynattn::attack_suite(m, surface, def.rect, sample, syns, ac, r.seed, r.threads);
  dynattn::save_archive((r.out.add(archive_name)).string(), suite.records);

  j["surface_mode"] = dynattn::mode_name(surface);
  j["target_mode"] = dynattn::mode_name(def.mode);
  j["suite"] = dynattn::attack_suite_json(suite);
  std::cout << "attacked=" << suite.records.size()
            << " asr=" << csv_num(suite.asr_q.value())
            << " mean_queries=" << csv_num(suite.mean_queries) << " excluded=" << suite.excluded
            << "\n";

  if (threat != "query") {
    const dynattn::TransferResult tr = dynattn::transfer_suite(
        suite.records, m, def.mode, def.rect, r.seed, transfer_trials, r.threads);
    j["transfer"] = dynattn::transfer_json(tr);
    if (threat == "static-transfer" && def.mode == dynattn::DynamicMode::Static) {
      j["sanity"] = "static archive replayed on the static victim: every archived success lands";
      std::cout << "sanity: static->static transfer asr=" << csv_num(tr.asr.value())
                << " (expected 1)\n";
    } else {
      std::cout << "transfer asr=" << csv_num(tr.asr.value()) << " trials=" << tr.trials << "\n";
    }
  }
  r.out.emit_json(report_name, j);
  write_manifest(r.out, "attack", r.config_bytes, r.seed, r.threads, r.started);
  return 0;
}

// ---------------------------------------------------------------------------
// eval: independent measurement suites against one checkpoint. Each suite
// writes <suite>.json and <suite>.csv; multi-seed suites loop eval.seeds.

int cmd_eval(const Invocation& inv) {
  Run r = begin(inv, {"seed", "threads", "data", "defense", "eval", "io"},
                {"out_dir", "checkpoint", "archive"});
  const dynattn::Checkpoint ck = dynattn::load_checkpoint(io_required(r, "checkpoint"));
  const DefenseSpec def = defense_or_default(r);
  const dynattn::EvalModel m{&ck.params, &ck.config, &ck.vocab};

  const Json& ev = need(r.cfg, "", "eval");
  reject_unknown(ev, "eval",
                 {"suites", "seeds", "stability", "robustness", "sensitivity", "trigger"});
  const Json& suites = need(ev, "eval", "suites");
  if (!suites.is_array() || suites.empty()) fail("eval.suites", "expected a non-empty array");
  const std::vector<std::uint64_t> seeds = eval_seeds(ev, r.seed);

  // Shared artifacts, loaded lazily so a suite list never pays for inputs it
  // does not use.
  std::optional<std::vector<dynattn::AdversarialRecord>> archive;
  auto need_archive = [&](const std::string& suite) -> const std::vector<dynattn::AdversarialRecord>& {
    if (!archive) {
      const Json* io = maybe(r.cfg, "io");
      if (!io || !maybe(*io, "archive"))
        fail("io.archive", "required by suite '" + suite + "'");
      archive = dynattn::load_archive(need_string(*io, "io", "archive"));
    }
    return *archive;
  };
  std::optional<std::vector<dynattn::LabeledText>> texts;
  std::optional<DataSpec> dspec;
  auto need_texts = [&](const std::string& suite) -> const std::vector<dynattn::LabeledText>& {
    if (!texts) {
      const Json* dsec = maybe(r.cfg, "data");
      if (!dsec) fail("data", "required by suite '" + suite + "'");
      dspec = parse_data(*dsec, "data", false);
      if (dspec->task != dynattn::Task::Classifier)
        fail("data.task", "suite '" + suite + "' needs classification texts");
      texts = slice_items(materialize_classification(*dspec), *dspec, "data");
    }
    return *texts;
  };

  for (std::size_t si = 0; si < suites.size(); ++si) {
    const std::string suite = as_string(suites[si], "eval.suites[" + std::to_string(si) + "]");

    if (suite == "stability") {
      check_task(ck.config, dynattn::Task::Classifier, "suite stability");
      std::size_t trials = 100;
      if (const Json* s = maybe(ev, "stability")) {
        reject_unknown(*s, "eval.stability", {"trials"});
        trials = opt_size(*s, "eval.stability", "trials", trials);
      }
      std::vector<dynattn::LabeledText> clean, adv;
      for (const auto& rec : need_archive(suite)) {
        if (!rec.success) continue;
        clean.push_back({rec.original_words, rec.original_label});
        adv.push_back({rec.adversarial_words, rec.original_label});
      }
      OJson j;
      j["mode"] = dynattn::mode_name(def.mode);
      j["trials"] = trials;
      j["per_seed"] = OJson::array();
      std::string csv = "seed,sigma_clean,sigma_adv\n";
      for (std::uint64_t s : seeds) {
        const dynattn::StabilityResult st =
            dynattn::stability(m, def.mode, def.rect, clean, adv, trials, s, r.threads);
        OJson e;
        e["seed"] = s;
        e["result"] = dynattn::stability_json(st);
        j["per_seed"].push_back(std::move(e));
        csv += std::to_string(s) + "," + csv_num(st.sigma_clean) + "," + csv_num(st.sigma_adv) +
               "\n";
        std::cout << "stability seed=" << s << " sigma_clean=" << csv_num(st.sigma_clean)
                  << " sigma_adv=" << csv_num(st.sigma_adv) << "\n";
      }
      r.out.emit_json("stability.json", j);
      r.out.emit("stability.csv", csv);

    } else if (suite == "robustness") {
      check_task(ck.config, dynattn::Task::Classifier, "suite robustness");
      std::vector<double> rhos{0.1};
      std::size_t copies = 500;
      double noise = 0.03125;
      std::vector<double> grid = dynattn::default_mu_grid();
      if (const Json* s = maybe(ev, "robustness")) {
        reject_unknown(*s, "eval.robustness", {"rho", "copies", "noise_factor", "grid"});
        if (const Json* v = maybe(*s, "rho")) rhos = double_array(*v, "eval.robustness.rho");
        copies = opt_size(*s, "eval.robustness", "copies", copies);
        noise = opt_double(*s, "eval.robustness", "noise_factor", noise);
        if (const Json* v = maybe(*s, "grid")) grid = double_array(*v, "eval.robustness.grid");
      }
      const auto& sample = need_texts(suite);
      OJson j = OJson::array();
      std::string csv = "rho,seed,mu,sigma,robust_fraction\n";
      for (double rho : rhos)
        for (std::uint64_t s : seeds) {
          const dynattn::RobustnessCurveResult res = dynattn::statistical_robustness(
              m, def.mode, def.rect, sample, rho, grid, copies, noise, s, r.threads);
          OJson e;
          e["seed"] = s;
          e["curve"] = dynattn::robustness_json(res);
          j.push_back(std::move(e));
          for (const auto& p : res.points)
            csv += csv_num(rho) + "," + std::to_string(s) + "," + csv_num(p.mu) + "," +
                   csv_num(p.sigma) + "," + csv_num(p.robust.value()) + "\n";
          std::cout << "robustness rho=" << csv_num(rho) << " seed=" << s
                    << " eligible=" << res.eligible << "\n";
        }
      r.out.emit_json("robustness.json", j);
      r.out.emit("robustness.csv", csv);

    } else if (suite == "sensitivity") {
      check_task(ck.config, dynattn::Task::Classifier, "suite sensitivity");
      const Json& s = need(ev, "eval", "sensitivity");
      reject_unknown(s, "eval.sensitivity", {"m_ranges", "betas"});
      const auto ranges = range_array(need(s, "eval.sensitivity", "m_ranges"),
                                      "eval.sensitivity.m_ranges");
      const auto betas = double_array(need(s, "eval.sensitivity", "betas"),
                                      "eval.sensitivity.betas");
      const std::vector<dynattn::SweepCell> cells = dynattn::sensitivity_sweep(
          m, need_archive(suite), need_texts(suite), ranges, betas, r.seed, r.threads);
      r.out.emit_json("sensitivity.json", dynattn::sweep_json(cells));
      r.out.emit("sensitivity.csv", dynattn::sweep_csv(cells));
      std::cout << "sensitivity cells=" << cells.size() << " best_metric="
                << csv_num(cells.empty() ? 0.0 : cells.front().metric) << "\n";

    } else if (suite == "replacement") {
      check_task(ck.config, dynattn::Task::Classifier, "suite replacement");
      std::vector<dynattn::ReplacementPair> pairs;
      for (const auto& rec : need_archive(suite)) {
        if (!rec.success) continue;
        pairs.push_back({rec.original_words, rec.adversarial_words, rec.original_label});
      }
      const dynattn::ReplacementResult res = dynattn::replacement_experiment(m, pairs, r.threads);
      OJson j;
      j["pairs"] = pairs.size();
      j["recovered"] = dynattn::fraction_json(res.recovered);
      j["skipped_misaligned"] = res.skipped_misaligned;
      r.out.emit_json("replacement.json", j);
      r.out.emit("replacement.csv",
                 "recovered_num,recovered_den,recovered_fraction,skipped_misaligned\n" +
                     std::to_string(res.recovered.num) + "," + std::to_string(res.recovered.den) +
                     "," + csv_num(res.recovered.value()) + "," +
                     std::to_string(res.skipped_misaligned) + "\n");
      std::cout << "replacement recovered=" << csv_num(res.recovered.value()) << " ("
                << res.recovered.num << "/" << res.recovered.den << ")\n";

    } else if (suite == "trigger-asr") {
      check_task(ck.config, dynattn::Task::Classifier, "suite trigger-asr");
      const Json& s = need(ev, "eval", "trigger");
      reject_unknown(s, "eval.trigger", {"trigger", "target_label"});
      const std::string trigger = need_string(s, "eval.trigger", "trigger");
      const int target = as_int(need(s, "eval.trigger", "target_label"),
                                "eval.trigger.target_label");
      const auto& clean = need_texts(suite);
      OJson j;
      j["trigger"] = trigger;
      j["target_label"] = target;
      j["mode"] = dynattn::mode_name(def.mode);
      j["per_seed"] = OJson::array();
      std::string csv = "seed,asr_num,asr_den,asr,skipped_target_label\n";
      for (std::uint64_t s2 : seeds) {
        const dynattn::TriggerResult res =
            dynattn::trigger_asr(m, def.mode, def.rect, trigger, target, clean, s2, r.threads);
        OJson e;
        e["seed"] = s2;
        e["asr"] = dynattn::fraction_json(res.asr);
        e["skipped_target_label"] = res.skipped_target_label;
        j["per_seed"].push_back(std::move(e));
        csv += std::to_string(s2) + "," + std::to_string(res.asr.num) + "," +
               std::to_string(res.asr.den) + "," + csv_num(res.asr.value()) + "," +
               std::to_string(res.skipped_target_label) + "\n";
        std::cout << "trigger-asr seed=" << s2 << " asr=" << csv_num(res.asr.value()) << "\n";
      }
      r.out.emit_json("trigger-asr.json", j);
      r.out.emit("trigger-asr.csv", csv);

    } else if (suite == "bleu-suite") {
      check_task(ck.config, dynattn::Task::Seq2Seq, "suite bleu-suite");
      const Json* dsec = maybe(r.cfg, "data");
      if (!dsec) fail("data", "required by suite 'bleu-suite'");
      const DataSpec d = parse_data(*dsec, "data", false);
      if (d.task != dynattn::Task::Seq2Seq) fail("data.task", "suite 'bleu-suite' needs seq2seq data");
      const std::vector<dynattn::ParallelItem> pairs =
          slice_pairs(materialize_seq2seq(d), d, "data");
      std::vector<dynattn::GenerationInput> inputs;
      inputs.reserve(pairs.size());
      for (const auto& p : pairs) {
        dynattn::GenerationInput gi;
        gi.src = p.src;
        for (const auto& w : p.ref) gi.reference.push_back(ck.vocab.id_of(w));
        inputs.push_back(std::move(gi));
      }
      OJson j;
      j["mode"] = dynattn::mode_name(def.mode);
      j["per_seed"] = OJson::array();
      std::string csv = "seed,corpus_bleu\n";
      for (std::uint64_t s : seeds) {
        const dynattn::GenerationBleuResult res =
            dynattn::generation_bleu(m, inputs, def.mode, def.rect, s, r.threads);
        OJson e;
        e["seed"] = s;
        e["result"] = dynattn::generation_bleu_json(res);
        j["per_seed"].push_back(std::move(e));
        csv += std::to_string(s) + "," + csv_num(res.corpus) + "\n";
        std::cout << "bleu-suite seed=" << s << " corpus_bleu=" << csv_num(res.corpus) << "\n";
      }
      r.out.emit_json("bleu-suite.json", j);
      r.out.emit("bleu-suite.csv", csv);

    } else {
      fail("eval.suites[" + std::to_string(si) + "]", "unknown suite '" + suite + "'");
    }
  }

  write_manifest(r.out, "eval", r.config_bytes, r.seed, r.threads, r.started);
  return 0;
}

// ---------------------------------------------------------------------------
// sweep: rectifier sensitivity grid as a standalone command.

int cmd_sweep(const Invocation& inv) {
  Run r = begin(inv, {"seed", "threads", "data", "sweep", "io"},
                {"out_dir", "checkpoint", "archive"});
  const dynattn::Checkpoint ck = dynattn::load_checkpoint(io_required(r, "checkpoint"));
  check_task(ck.config, dynattn::Task::Classifier, "sweep");
  const dynattn::EvalModel m{&ck.params, &ck.config, &ck.vocab};
  const std::vector<dynattn::AdversarialRecord> archive =
      dynattn::load_archive(io_required(r, "archive"));
  const DataSpec d = parse_data(need(r.cfg, "", "data"), "data", false);
  if (d.task != dynattn::Task::Classifier) fail("data.task", "sweep needs classification texts");
  const std::vector<dynattn::LabeledText> clean =
      slice_items(materialize_classification(d), d, "data");

  const Json& s = need(r.cfg, "", "sweep");
  reject_unknown(s, "sweep", {"m_ranges", "betas"});
  const auto ranges = range_array(need(s, "sweep", "m_ranges"), "sweep.m_ranges");
  const auto betas = double_array(need(s, "sweep", "betas"), "sweep.betas");

  const std::vector<dynattn::SweepCell> cells =
      dynattn::sensitivity_sweep(m, archive, clean, ranges, betas, r.seed, r.threads);
  r.out.emit_json("sweep.json", dynattn::sweep_json(cells));
  r.out.emit("sweep.csv", dynattn::sweep_csv(cells));
  write_manifest(r.out, "sweep", r.config_bytes, r.seed, r.threads, r.started);
  const dynattn::SweepCell& best = cells.front();
  std::cout << "cells=" << cells.size() << " best m=[" << csv_num(best.m_lo) << ","
            << csv_num(best.m_hi) << "] beta=" << csv_num(best.beta)
            << " metric=" << csv_num(best.metric) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// replay: feed archived adversarial texts to a (possibly differently
// defended) victim, several trials each, and report flip rates.

int cmd_replay(const Invocation& inv) {
  Run r = begin(inv, {"seed", "threads", "defense", "replay", "io"},
                {"out_dir", "checkpoint", "archive", "report"});
  const dynattn::Checkpoint ck = dynattn::load_checkpoint(io_required(r, "checkpoint"));
  check_task(ck.config, dynattn::Task::Classifier, "replay");
  const DefenseSpec def = defense_or_default(r);
  std::size_t trials = 10;
  if (const Json* s = maybe(r.cfg, "replay")) {
    reject_unknown(*s, "replay", {"trials"});
    trials = opt_size(*s, "replay", "trials", trials);
    if (trials == 0) fail("replay.trials", "must be positive");
  }
  const std::vector<dynattn::AdversarialRecord> archive =
      dynattn::load_archive(io_required(r, "archive"));

  dynattn::RunContext ctx(r.seed);
  const dynattn::ClassifierVictim victim{&ck.params, &ck.config, &ck.vocab,
                                         def.mode,   def.rect,   &ctx};
  OJson rec_rows = OJson::array();
  std::string csv = "index,trials,flips,any_flip\n";
  std::size_t skipped = 0, replayed = 0, any_total = 0;
  for (std::size_t i = 0; i < archive.size(); ++i) {
    const dynattn::AdversarialRecord& rec = archive[i];
    if (!rec.success) {
      ++skipped;
      continue;
    }
    const std::vector<dynattn::ReplayTrial> trs = dynattn::replay(rec, victim, trials);
    std::size_t flips = 0;
    for (const auto& t : trs) flips += t.predicted != rec.original_label ? 1u : 0u;
    const bool any = flips > 0;
    any_total += any ? 1u : 0u;
    ++replayed;
    OJson e;
    e["index"] = i;
    e["queries"] = rec.queries;
    e["trials"] = trials;
    e["flips"] = flips;
    e["any_flip"] = any;
    rec_rows.push_back(std::move(e));
    csv += std::to_string(i) + "," + std::to_string(trials) + "," + std::to_string(flips) + "," +
           (any ? "1" : "0") + "\n";
  }

  OJson j;
  j["mode"] = dynattn::mode_name(def.mode);
  j["trials"] = trials;
  j["records_total"] = archive.size();
  j["replayed"] = replayed;
  j["skipped_failures"] = skipped;
  j["any_flip"] = dynattn::fraction_json(dynattn::Fraction{any_total, replayed});
  j["records"] = std::move(rec_rows);
  const std::string report_name = io_string(r, "report", "replay_report.json");
  r.out.emit_json(report_name, j);
  r.out.emit("replay.csv", csv);
  write_manifest(r.out, "replay", r.config_bytes, r.seed, r.threads, r.started);
  std::cout << "replayed=" << replayed << " skipped=" << skipped
            << " any_flip_rate=" << csv_num(dynattn::Fraction{any_total, replayed}.value())
            << "\n";
  return 0;
}

}  // namespace
}  // namespace cli

int main(int argc, char** argv) {
  CLI::App app{"dynamic attention experiment driver"};
  app.require_subcommand(1);

  cli::Invocation inv;
  std::uint64_t seed_opt = 0;
  std::string out_dir_opt;
  std::size_t threads_opt = 0;
  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", inv.config_path, "JSON config path")->required();
    c->add_option("--seed", seed_opt, "override the config's top-level seed");
    c->add_option("--out-dir", out_dir_opt, "override io.out_dir");
    c->add_option("--threads", threads_opt, "override the config's thread count");
  };
  CLI::App* train = app.add_subcommand("train", "fit a model and save a checkpoint");
  CLI::App* attack = app.add_subcommand("attack", "run an adversarial suite and archive it");
  CLI::App* eval = app.add_subcommand("eval", "run measurement suites against a checkpoint");
  CLI::App* sweep = app.add_subcommand("sweep", "grid-search rectifier settings");
  CLI::App* replay = app.add_subcommand("replay", "replay an archive against a victim");
  for (CLI::App* c : {train, attack, eval, sweep, replay}) add_common(c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  CLI::App* cmd = app.get_subcommands().front();
  if (cmd->count("--seed") > 0) inv.seed = seed_opt;
  if (cmd->count("--out-dir") > 0) inv.out_dir = out_dir_opt;
  if (cmd->count("--threads") > 0) inv.threads = threads_opt;

  try {
    if (cmd == train) return cli::cmd_train(inv);
    if (cmd == attack) return cli::cmd_attack(inv);
    if (cmd == eval) return cli::cmd_eval(inv);
    if (cmd == sweep) return cli::cmd_sweep(inv);
    return cli::cmd_replay(inv);
  } catch (const dynattn::TrainingError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return 3;
  } catch (const dynattn::MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return 4;
  } catch (const dynattn::FormatError& e) {
    std::cerr << "artifact error: " << e.what() << "\n";
    return 4;
  } catch (const dynattn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const dynattn::ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const dynattn::TaskError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const dynattn::EvalError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
