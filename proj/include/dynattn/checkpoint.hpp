#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dynattn/errors.hpp"
#include "dynattn/model.hpp"
#include "dynattn/random.hpp"
#include "dynattn/vocab.hpp"

namespace dynattn {

// Binary model container. Doubles are stored as raw little-endian IEEE-754
// bytes, so save -> load reproduces every tensor bit for bit. A running
// FNV-1a64 over the tensor payload guards against truncation and bit rot.
inline constexpr char kCheckpointMagic[8] = {'D', 'Y', 'N', 'A', 'T', 'T', 'N', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  ModelConfig config;
  Vocabulary vocab;
};

namespace detail {

struct ByteWriter {
  std::vector<unsigned char> buf;

  void u8(std::uint8_t v) { buf.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf.insert(buf.end(), c, c + n);
  }
};

struct ByteReader {
  const unsigned char* p;
  std::size_t left;

  void need(std::size_t n) const {
    if (left < n) throw FormatError("checkpoint truncated");
  }
  std::uint8_t u8() {
    need(1);
    --left;
    return *p++;
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(*p++) << (8 * i);
    left -= 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(*p++) << (8 * i);
    left -= 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(*p++) << (8 * i);
    left -= 8;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    left -= n;
    return s;
  }
};

class ChecksumFnv {
 public:
  void feed_u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h_ ^= static_cast<unsigned char>(v >> (8 * i));
      h_ *= 0x100000001b3ULL;
    }
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

struct NamedTensor {
  std::string name;
  const std::vector<double>* data;
  std::vector<std::size_t> dims;
};

inline void collect_tensors(const ModelParams& p, std::vector<NamedTensor>& out) {
  auto mat = [&out](const std::string& name, const Matrix& m) {
    out.push_back({name, &m.data, {m.rows, m.cols}});
  };
  auto vec = [&out](const std::string& name, const std::vector<double>& v) {
    out.push_back({name, &v, {v.size()}});
  };
  mat("tok_emb", p.tok_emb);
  mat("pos_emb", p.pos_emb);
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    const auto& e = p.encoder[l];
    const std::string pre = "enc" + std::to_string(l) + ".";
    mat(pre + "wq", e.attn.wq);
    mat(pre + "wk", e.attn.wk);
    mat(pre + "wv", e.attn.wv);
    mat(pre + "wo", e.attn.wo);
    mat(pre + "w1", e.w1);
    mat(pre + "w2", e.w2);
    vec(pre + "ln1.gain", e.ln1.gain);
    vec(pre + "ln1.bias", e.ln1.bias);
    vec(pre + "ln2.gain", e.ln2.gain);
    vec(pre + "ln2.bias", e.ln2.bias);
  }
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    const auto& d = p.decoder[l];
    const std::string pre = "dec" + std::to_string(l) + ".";
    mat(pre + "self.wq", d.self_attn.wq);
    mat(pre + "self.wk", d.self_attn.wk);
    mat(pre + "self.wv", d.self_attn.wv);
    mat(pre + "self.wo", d.self_attn.wo);
    mat(pre + "cross.wq", d.cross_attn.wq);
    mat(pre + "cross.wk", d.cross_attn.wk);
    mat(pre + "cross.wv", d.cross_attn.wv);
    mat(pre + "cross.wo", d.cross_attn.wo);
    mat(pre + "w1", d.w1);
    mat(pre + "w2", d.w2);
    vec(pre + "ln1.gain", d.ln1.gain);
    vec(pre + "ln1.bias", d.ln1.bias);
    vec(pre + "ln2.gain", d.ln2.gain);
    vec(pre + "ln2.bias", d.ln2.bias);
    vec(pre + "ln3.gain", d.ln3.gain);
    vec(pre + "ln3.bias", d.ln3.bias);
  }
  mat("head", p.head);
}

struct MutableTensor {
  std::string name;
  std::vector<double>* data;
  std::vector<std::size_t> dims;
};

inline void collect_tensors_mut(ModelParams& p, std::vector<MutableTensor>& out) {
  std::vector<NamedTensor> ro;
  collect_tensors(p, ro);
  for (auto& t : ro)
    out.push_back({t.name, const_cast<std::vector<double>*>(t.data), t.dims});
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ModelParams& params,
                            const ModelConfig& cfg, const Vocabulary& vocab) {
  nlohmann::ordered_json meta;
  meta["format"] = kCheckpointVersion;
  meta["model"] = {{"layers", cfg.layers},
                   {"heads", cfg.heads},
                   {"d_model", cfg.d_model},
                   {"d_head", cfg.d_head},
                   {"d_ff", cfg.d_ff},
                   {"vocab", cfg.vocab},
                   {"max_len", cfg.max_len},
                   {"task", task_name(cfg.task)},
                   {"classes", cfg.classes},
                   {"decoder_layers", cfg.decoder_layers}};
  nlohmann::ordered_json words = nlohmann::ordered_json::array();
  for (std::size_t i = Vocabulary::kNumSpecials; i < vocab.size(); ++i)
    words.push_back(vocab.token(static_cast<TokenId>(i)));
  meta["words"] = std::move(words);
  const std::string meta_str = meta.dump();

  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u64(meta_str.size());
  w.bytes(meta_str.data(), meta_str.size());

  std::vector<detail::NamedTensor> tensors;
  detail::collect_tensors(params, tensors);
  w.u64(tensors.size());
  detail::ChecksumFnv sum;
  for (const auto& t : tensors) {
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u8(static_cast<std::uint8_t>(t.dims.size()));
    std::size_t count = 1;
    for (const auto d : t.dims) {
      w.u64(d);
      count *= d;
    }
    if (count != t.data->size()) throw FormatError("tensor size mismatch while saving");
    for (const double v : *t.data) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      w.u64(bits);
      sum.feed_u64(bits);
    }
  }
  w.u64(sum.value());

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open for write: " + tmp);
    out.write(reinterpret_cast<const char*>(w.buf.data()),
              static_cast<std::streamsize>(w.buf.size()));
    if (!out) throw FormatError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("checkpoint not found: " + path);
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  detail::ByteReader r{raw.data(), raw.size()};
  const std::string magic = r.str(sizeof kCheckpointMagic);
  if (std::memcmp(magic.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw FormatError("bad checkpoint magic in " + path);
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto meta_len = r.u64();
  const std::string meta_str = r.str(meta_len);

  Checkpoint ck;
  try {
    const auto meta = nlohmann::json::parse(meta_str);
    const auto& m = meta.at("model");
    ck.config.layers = m.at("layers").get<std::size_t>();
    ck.config.heads = m.at("heads").get<std::size_t>();
    ck.config.d_model = m.at("d_model").get<std::size_t>();
    ck.config.d_head = m.at("d_head").get<std::size_t>();
    ck.config.d_ff = m.at("d_ff").get<std::size_t>();
    ck.config.vocab = m.at("vocab").get<std::size_t>();
    ck.config.max_len = m.at("max_len").get<std::size_t>();
    ck.config.task = task_from_name(m.at("task").get<std::string>());
    ck.config.classes = m.at("classes").get<std::size_t>();
    ck.config.decoder_layers = m.at("decoder_layers").get<std::size_t>();
    ck.vocab = Vocabulary::from_words(meta.at("words").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint metadata: ") + e.what());
  }
  ck.config.validate();
  if (ck.vocab.size() != ck.config.vocab)
    throw FormatError("checkpoint vocab size disagrees with its config");

  // Materialize parameter shapes from the config, then fill in canonical
  // order; any drift in names, ranks or dims is a format error.
  RandomSource dummy(0);
  ck.params = init_params(ck.config, dummy);
  std::vector<detail::MutableTensor> tensors;
  detail::collect_tensors_mut(ck.params, tensors);
  const auto tensor_count = r.u64();
  if (tensor_count != tensors.size()) throw FormatError("unexpected tensor count in " + path);
  detail::ChecksumFnv sum;
  for (auto& t : tensors) {
    const auto name_len = r.u16();
    const std::string name = r.str(name_len);
    if (name != t.name) throw FormatError("tensor order mismatch: got " + name);
    const auto rank = r.u8();
    if (rank != t.dims.size()) throw FormatError("tensor rank mismatch in " + name);
    std::size_t count = 1;
    for (std::size_t d = 0; d < rank; ++d) {
      const auto dim = r.u64();
      if (dim != t.dims[d]) throw FormatError("tensor shape mismatch in " + name);
      count *= dim;
    }
    for (std::size_t i = 0; i < count; ++i) {
      const auto bits = r.u64();
      sum.feed_u64(bits);
      (*t.data)[i] = std::bit_cast<double>(bits);
    }
  }
  const auto stored_sum = r.u64();
  if (stored_sum != sum.value()) throw FormatError("checkpoint checksum mismatch in " + path);
  if (r.left != 0) throw FormatError("trailing bytes in " + path);
  return ck;
}

}  // namespace dynattn
