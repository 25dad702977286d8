#pragma once

// Config schema, artifact plumbing, and manifest output for the command line
// front end. The schema is strict: unknown keys, missing required keys, and
// type mismatches all raise ConfigError carrying the offending JSON path, so
// a typo in a config never silently falls back to a default.

#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "dynattn/attacks.hpp"
#include "dynattn/checkpoint.hpp"
#include "dynattn/corpus.hpp"
#include "dynattn/errors.hpp"
#include "dynattn/eval.hpp"
#include "dynattn/model.hpp"
#include "dynattn/rectifier.hpp"
#include "dynattn/synth.hpp"
#include "dynattn/train.hpp"
#include "dynattn/vocab.hpp"
#include "dynattn/wordlists.hpp"
#include "json.hpp"

namespace cli {

using Json = nlohmann::json;
using OJson = nlohmann::ordered_json;

// --------------------------------------------------------------------------
// Path-tagged JSON access. Every accessor names the full dotted path of the
// field it rejects; that path is the contract tested by the integration
// tests, so error text stays stable.

[[noreturn]] inline void fail(const std::string& path, const std::string& what) {
  throw dynattn::ConfigError(path + ": " + what);
}

inline std::string sub(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline void require_object(const Json& j, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
}

inline void reject_unknown(const Json& obj, const std::string& path,
                           std::initializer_list<const char*> allowed) {
  require_object(obj, path);
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* a : allowed)
      if (it.key() == a) {
        known = true;
        break;
      }
    if (!known) fail(sub(path, it.key()), "unknown key");
  }
}

inline const Json* maybe(const Json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

inline const Json& need(const Json& obj, const std::string& path, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(sub(path, key), "missing required key");
  return *it;
}

inline std::string as_string(const Json& v, const std::string& path) {
  if (!v.is_string()) fail(path, "expected a string");
  return v.get<std::string>();
}

inline double as_double(const Json& v, const std::string& path) {
  if (!v.is_number()) fail(path, "expected a number");
  return v.get<double>();
}

inline std::uint64_t as_u64(const Json& v, const std::string& path) {
  if (!v.is_number_integer() || (v.is_number_integer() && v.get<std::int64_t>() < 0))
    fail(path, "expected a non-negative integer");
  return v.get<std::uint64_t>();
}

inline std::size_t as_size(const Json& v, const std::string& path) {
  return static_cast<std::size_t>(as_u64(v, path));
}

inline int as_int(const Json& v, const std::string& path) {
  if (!v.is_number_integer()) fail(path, "expected an integer");
  return v.get<int>();
}

inline bool as_bool(const Json& v, const std::string& path) {
  if (!v.is_boolean()) fail(path, "expected a boolean");
  return v.get<bool>();
}

inline std::string need_string(const Json& obj, const std::string& path, const char* key) {
  return as_string(need(obj, path, key), sub(path, key));
}

inline std::string opt_string(const Json& obj, const std::string& path, const char* key,
                              const std::string& dflt) {
  const Json* v = maybe(obj, key);
  return v ? as_string(*v, sub(path, key)) : dflt;
}

inline double opt_double(const Json& obj, const std::string& path, const char* key, double dflt) {
  const Json* v = maybe(obj, key);
  return v ? as_double(*v, sub(path, key)) : dflt;
}

inline std::uint64_t opt_u64(const Json& obj, const std::string& path, const char* key,
                             std::uint64_t dflt) {
  const Json* v = maybe(obj, key);
  return v ? as_u64(*v, sub(path, key)) : dflt;
}

inline std::size_t opt_size(const Json& obj, const std::string& path, const char* key,
                            std::size_t dflt) {
  const Json* v = maybe(obj, key);
  return v ? as_size(*v, sub(path, key)) : dflt;
}

inline int opt_int(const Json& obj, const std::string& path, const char* key, int dflt) {
  const Json* v = maybe(obj, key);
  return v ? as_int(*v, sub(path, key)) : dflt;
}

inline bool opt_bool(const Json& obj, const std::string& path, const char* key, bool dflt) {
  const Json* v = maybe(obj, key);
  return v ? as_bool(*v, sub(path, key)) : dflt;
}

// --------------------------------------------------------------------------
// Section parsers. Each consumes one config object and returns the library
// struct it configures, running the struct's own validate() so range rules
// live in exactly one place.

struct DataSpec {
  std::string source = "synth";  // synth | file
  dynattn::Task task = dynattn::Task::Classifier;
  std::size_t size = 2000;
  std::uint64_t seed = 1;
  std::size_t len_lo = 9;
  std::size_t len_hi = 14;
  std::string path;              // file source only
  std::size_t train_count = 0;   // 0 means the whole corpus
  std::size_t slice_offset = 0;  // working window for attack/eval commands
  std::size_t slice_count = 0;   // 0 means through the end
  bool poisoned = false;
  std::string trigger;
  int target_label = 0;
  double poison_rate = 0.0;
  std::uint64_t poison_seed = 0;
};

inline DataSpec parse_data(const Json& obj, const std::string& path, bool training) {
  if (training)
    reject_unknown(obj, path,
                   {"source", "task", "size", "seed", "len_lo", "len_hi", "path", "train_count",
                    "poison"});
  else
    reject_unknown(obj, path, {"source", "task", "size", "seed", "len_lo", "len_hi", "path", "slice"});

  DataSpec d;
  d.source = opt_string(obj, path, "source", "synth");
  if (d.source != "synth" && d.source != "file")
    fail(sub(path, "source"), "unknown source '" + d.source + "' (expected synth or file)");
  const std::string task = opt_string(obj, path, "task", "classifier");
  try {
    d.task = dynattn::task_from_name(task);
  } catch (const dynattn::ConfigError&) {
    fail(sub(path, "task"), "unknown task '" + task + "'");
  }
  d.size = opt_size(obj, path, "size", d.size);
  d.seed = opt_u64(obj, path, "seed", d.seed);
  d.len_lo = opt_size(obj, path, "len_lo", d.task == dynattn::Task::Seq2Seq ? 4 : 9);
  d.len_hi = opt_size(obj, path, "len_hi", d.task == dynattn::Task::Seq2Seq ? 10 : 14);
  if (d.source == "file") {
    d.path = need_string(obj, path, "path");
    if (d.task != dynattn::Task::Classifier)
      fail(sub(path, "path"), "file corpora carry classification items only");
  }
  if (training) {
    d.train_count = opt_size(obj, path, "train_count", 0);
    if (const Json* p = maybe(obj, "poison")) {
      const std::string ppath = sub(path, "poison");
      reject_unknown(*p, ppath, {"trigger", "target_label", "rate", "seed"});
      if (d.task != dynattn::Task::Classifier) fail(ppath, "poisoning applies to classifiers only");
      d.poisoned = true;
      d.trigger = need_string(*p, ppath, "trigger");
      if (d.trigger.empty()) fail(sub(ppath, "trigger"), "must be non-empty");
      d.target_label = as_int(need(*p, ppath, "target_label"), sub(ppath, "target_label"));
      d.poison_rate = as_double(need(*p, ppath, "rate"), sub(ppath, "rate"));
      if (!(d.poison_rate > 0.0 && d.poison_rate <= 1.0))
        fail(sub(ppath, "rate"), "must be in (0,1]");
      d.poison_seed = opt_u64(*p, ppath, "seed", d.seed);
    }
  } else if (const Json* s = maybe(obj, "slice")) {
    const std::string spath = sub(path, "slice");
    reject_unknown(*s, spath, {"offset", "count"});
    d.slice_offset = opt_size(*s, spath, "offset", 0);
    d.slice_count = opt_size(*s, spath, "count", 0);
  }
  return d;
}

inline dynattn::ModelConfig parse_model(const Json& obj, const std::string& path,
                                        dynattn::Task task) {
  reject_unknown(obj, path,
                 {"layers", "heads", "d_model", "d_head", "d_ff", "max_len", "classes",
                  "decoder_layers"});
  dynattn::ModelConfig cfg;
  cfg.task = task;
  cfg.layers = opt_size(obj, path, "layers", cfg.layers);
  cfg.heads = opt_size(obj, path, "heads", cfg.heads);
  cfg.d_model = opt_size(obj, path, "d_model", cfg.d_model);
  cfg.d_head = opt_size(obj, path, "d_head", cfg.d_head);
  cfg.d_ff = opt_size(obj, path, "d_ff", cfg.d_ff);
  cfg.max_len = opt_size(obj, path, "max_len", cfg.max_len);
  cfg.classes = opt_size(obj, path, "classes", cfg.classes);
  cfg.decoder_layers = opt_size(obj, path, "decoder_layers", cfg.decoder_layers);
  return cfg;  // validated once vocab size is known
}

inline dynattn::TrainConfig parse_train(const Json& obj, const std::string& path) {
  reject_unknown(obj, path, {"lr", "epochs", "batch", "dropout", "seed", "divergence_limit"});
  dynattn::TrainConfig tc;
  tc.lr = opt_double(obj, path, "lr", tc.lr);
  tc.epochs = opt_size(obj, path, "epochs", tc.epochs);
  tc.batch = opt_size(obj, path, "batch", tc.batch);
  tc.dropout = opt_double(obj, path, "dropout", tc.dropout);
  tc.seed = opt_u64(obj, path, "seed", tc.seed);
  tc.divergence_limit = opt_double(obj, path, "divergence_limit", tc.divergence_limit);
  tc.validate();
  return tc;
}

struct DefenseSpec {
  dynattn::DynamicMode mode = dynattn::DynamicMode::Static;
  dynattn::RectifierConfig rect;
};

inline DefenseSpec parse_defense(const Json& obj, const std::string& path) {
  reject_unknown(obj, path,
                 {"mode", "beta", "m_lo", "m_hi", "m_a", "m_b_lo", "m_b_hi", "dropout_rate",
                  "rectify_decoder"});
  DefenseSpec d;
  const std::string mode = opt_string(obj, path, "mode", "static");
  try {
    d.mode = dynattn::mode_from_name(mode);
  } catch (const dynattn::ConfigError&) {
    fail(sub(path, "mode"), "unknown mode '" + mode + "'");
  }
  d.rect.beta = opt_double(obj, path, "beta", d.rect.beta);
  d.rect.m_lo = opt_double(obj, path, "m_lo", d.rect.m_lo);
  d.rect.m_hi = opt_double(obj, path, "m_hi", d.rect.m_hi);
  d.rect.m_a = opt_double(obj, path, "m_a", d.rect.m_a);
  d.rect.m_b_lo = opt_double(obj, path, "m_b_lo", d.rect.m_b_lo);
  d.rect.m_b_hi = opt_double(obj, path, "m_b_hi", d.rect.m_b_hi);
  d.rect.dropout_rate = opt_double(obj, path, "dropout_rate", d.rect.dropout_rate);
  d.rect.rectify_decoder = opt_bool(obj, path, "rectify_decoder", d.rect.rectify_decoder);
  d.rect.validate();
  return d;
}

inline dynattn::AttackConfig parse_attack(const Json& obj, const std::string& path) {
  reject_unknown(obj, path,
                 {"kind", "ranking", "goal", "stop_confidence", "bleu_stop", "query_budget",
                  "max_modified_fraction", "adaptive", "overlap_threshold", "flatness_threshold"});
  dynattn::AttackConfig ac;
  const std::string kind = opt_string(obj, path, "kind", "synonym");
  try {
    ac.kind = dynattn::attack_kind_from_name(kind);
  } catch (const dynattn::ConfigError&) {
    fail(sub(path, "kind"), "unknown kind '" + kind + "'");
  }
  const std::string ranking = opt_string(obj, path, "ranking", "importance");
  if (ranking == "importance")
    ac.ranking = dynattn::RankingRule::Importance;
  else if (ranking == "pwws")
    ac.ranking = dynattn::RankingRule::Pwws;
  else
    fail(sub(path, "ranking"), "unknown ranking '" + ranking + "'");
  const std::string goal = opt_string(obj, path, "goal", "classification");
  if (goal == "classification")
    ac.goal = dynattn::AttackGoal::Classification;
  else if (goal == "generation")
    ac.goal = dynattn::AttackGoal::Generation;
  else
    fail(sub(path, "goal"), "unknown goal '" + goal + "'");
  const std::string adaptive = opt_string(obj, path, "adaptive", "none");
  if (adaptive == "none")
    ac.adaptive = dynattn::AdaptiveRule::None;
  else if (adaptive == "overlap")
    ac.adaptive = dynattn::AdaptiveRule::Overlap;
  else if (adaptive == "flatness")
    ac.adaptive = dynattn::AdaptiveRule::Flatness;
  else
    fail(sub(path, "adaptive"), "unknown adaptive rule '" + adaptive + "'");
  ac.stop_confidence = opt_double(obj, path, "stop_confidence", ac.stop_confidence);
  ac.bleu_stop = opt_double(obj, path, "bleu_stop", ac.bleu_stop);
  ac.query_budget = opt_size(obj, path, "query_budget", ac.query_budget);
  ac.max_modified_fraction =
      opt_double(obj, path, "max_modified_fraction", ac.max_modified_fraction);
  ac.overlap_threshold = opt_double(obj, path, "overlap_threshold", ac.overlap_threshold);
  ac.flatness_threshold = opt_double(obj, path, "flatness_threshold", ac.flatness_threshold);
  ac.validate();
  return ac;
}

// --------------------------------------------------------------------------
// Data materialization. Classification vocabularies include the keyword
// group rows so every substitution candidate tokenizes in-vocabulary; a
// poisoned run narrows the vocabulary source to the poisoned training feed,
// mirroring a victim that only ever saw that feed.

inline std::vector<dynattn::TextItem> materialize_classification(const DataSpec& d) {
  if (d.source == "file") return dynattn::load_corpus(d.path);
  dynattn::SynthClassConfig sc;
  sc.size = d.size;
  sc.len_lo = d.len_lo;
  sc.len_hi = d.len_hi;
  sc.seed = d.seed;
  return dynattn::synth_classification(sc);
}

inline std::vector<dynattn::ParallelItem> materialize_seq2seq(const DataSpec& d) {
  dynattn::SynthSeqConfig sc;
  sc.size = d.size;
  sc.len_lo = d.len_lo;
  sc.len_hi = d.len_hi;
  sc.seed = d.seed;
  return dynattn::synth_seq2seq(sc);
}

inline dynattn::Vocabulary classification_vocab(const std::vector<dynattn::TextItem>& items) {
  namespace wl = dynattn::wordlists_v1;
  std::vector<std::vector<std::string>> rows;
  rows.reserve(items.size() + 2 * wl::kPositiveGroups.size());
  for (const auto& t : items) rows.push_back(t.words);
  for (const auto& g : wl::kPositiveGroups) rows.emplace_back(g.begin(), g.end());
  for (const auto& g : wl::kNegativeGroups) rows.emplace_back(g.begin(), g.end());
  return dynattn::build_vocab(rows, 1);
}

inline dynattn::Vocabulary seq2seq_vocab(const std::vector<dynattn::ParallelItem>& pairs) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(2 * pairs.size());
  for (const auto& p : pairs) {
    rows.push_back(p.src);
    rows.push_back(p.ref);
  }
  return dynattn::build_vocab(rows, 1);
}

inline std::vector<dynattn::LabeledText> slice_items(const std::vector<dynattn::TextItem>& items,
                                                     const DataSpec& d, const std::string& path) {
  if (d.slice_offset > items.size()) fail(sub(path, "slice.offset"), "past the end of the corpus");
  const std::size_t avail = items.size() - d.slice_offset;
  const std::size_t count = d.slice_count == 0 ? avail : d.slice_count;
  if (count > avail) fail(sub(path, "slice.count"), "past the end of the corpus");
  std::vector<dynattn::LabeledText> out;
  out.reserve(count);
  for (std::size_t i = d.slice_offset; i < d.slice_offset + count; ++i)
    out.push_back({items[i].words, items[i].label});
  return out;
}

inline std::vector<dynattn::ParallelItem> slice_pairs(
    const std::vector<dynattn::ParallelItem>& pairs, const DataSpec& d, const std::string& path) {
  if (d.slice_offset > pairs.size()) fail(sub(path, "slice.offset"), "past the end of the corpus");
  const std::size_t avail = pairs.size() - d.slice_offset;
  const std::size_t count = d.slice_count == 0 ? avail : d.slice_count;
  if (count > avail) fail(sub(path, "slice.count"), "past the end of the corpus");
  return {pairs.begin() + static_cast<std::ptrdiff_t>(d.slice_offset),
          pairs.begin() + static_cast<std::ptrdiff_t>(d.slice_offset + count)};
}

// --------------------------------------------------------------------------
// Output plumbing. Reports and archives carry no timestamps, so a rerun with
// the same config and seed reproduces them byte for byte; wall-clock times
// live only in the manifest. The manifest is written last, temp-then-rename,
// so a manifest on disk certifies that every file it lists is complete.

inline std::uint64_t fnv1a64(const unsigned char* p, std::size_t n) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string rfc3339_utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_file_atomic(const std::filesystem::path& dest, const std::string& bytes) {
  const std::filesystem::path tmp = dest.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw dynattn::TaskError("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, dest);
}

struct RunOutput {
  std::filesystem::path out_dir;
  std::vector<std::string> names;  // relative to out_dir, manifest order

  std::filesystem::path add(const std::string& name) {
    names.push_back(name);
    return out_dir / name;
  }

  void emit(const std::string& name, const std::string& bytes) {
    const std::filesystem::path dest = add(name);
    std::ofstream out(dest, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw dynattn::TaskError("cannot write " + dest.string());
  }

  void emit_json(const std::string& name, const OJson& j) { emit(name, j.dump(2) + "\n"); }
};

inline void write_manifest(const RunOutput& run, const std::string& command,
                           const std::string& config_bytes, std::uint64_t seed,
                           std::size_t threads, const std::string& started) {
  OJson m;
  m["command"] = command;
  m["config_hash"] =
      hex64(fnv1a64(reinterpret_cast<const unsigned char*>(config_bytes.data()),
                    config_bytes.size()));
  m["seed"] = seed;
  m["threads"] = threads;
  m["versions"] = {{"manifest", 1},
                   {"checkpoint", dynattn::kCheckpointVersion},
                   {"wordlists", dynattn::wordlists_v1::kVersion}};
  m["started"] = started;
  m["finished"] = rfc3339_utc_now();
  m["outputs"] = run.names;
  write_file_atomic(run.out_dir / (command + ".manifest.json"), m.dump(2) + "\n");
}

// CSV numbers use the same shortest-round-trip rendering as the JSON
// reports, so both views of one run always agree digit for digit.
inline std::string csv_num(double v) { return OJson(v).dump(); }

}  // namespace cli
