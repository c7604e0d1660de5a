#include "gloss/checkpoint.hpp"

#include <bit>
#include <cmath>

#include "gloss/tape.hpp"

namespace gloss {

namespace {

constexpr char kMagic[8] = {'G', 'L', 'S', 'G', 'C', 'K', 'P', 'T'};

// Little-endian scalar writers; the format is pinned to one byte order no
// matter what the host uses.
void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

void put_i64(std::string& out, int64_t v) { put_u64(out, static_cast<uint64_t>(v)); }
void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<uint32_t>(v)); }
void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<uint64_t>(v)); }

void put_str(std::string& out, std::string_view s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out += s;
}

struct Reader {
  std::string_view buf;
  size_t pos = 0;
  const std::string& origin;

  void need(size_t n) {
    require(pos + n <= buf.size(), Errc::corrupt_checkpoint,
            origin + ": truncated checkpoint");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  int64_t i64() { return static_cast<int64_t>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s(buf.substr(pos, n));
    pos += n;
    return s;
  }
};

}  // namespace

std::string encode_checkpoint(const Transformer<float>& model, const Tokenizer& tok,
                              const CheckpointMeta& meta) {
  require(tok.vocab_size() == model.cfg.vocab_size, Errc::shape_mismatch,
          "encode_checkpoint: tokenizer vocabulary " + std::to_string(tok.vocab_size()) +
              " does not match the model's " + std::to_string(model.cfg.vocab_size));

  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, kCheckpointVersion);

  const ModelConfig& c = model.cfg;
  put_i64(out, c.vocab_size);
  put_i64(out, c.d_model);
  put_i64(out, c.n_heads);
  put_i64(out, c.n_enc_layers);
  put_i64(out, c.n_dec_layers);
  put_i64(out, c.d_ff);
  put_i64(out, c.max_len);
  put_f64(out, c.dropout);
  put_f64(out, c.ln_eps);
  out += static_cast<char>(c.tie_embeddings ? 1 : 0);

  put_u64(out, meta.seed);
  put_i64(out, meta.epochs);
  put_u64(out, meta.corpus_hash);

  const auto chars = tok.chars();
  put_i64(out, static_cast<int64_t>(chars.size()));
  for (const std::string& ch : chars) put_str(out, ch);

  const auto params = model.params.all();
  put_i64(out, static_cast<int64_t>(params.size()));
  for (const auto* p : params) {
    put_str(out, p->name);
    put_u32(out, static_cast<uint32_t>(p->value.shape.size()));
    for (int64_t d : p->value.shape) put_i64(out, d);
    for (float x : p->value.data) put_f32(out, x);
  }

  put_u64(out, fnv1a(out.data(), out.size()));
  return out;
}

LoadedCheckpoint decode_checkpoint(std::string_view bytes, const std::string& origin) {
  Reader r{bytes, 0, origin};

  r.need(sizeof(kMagic));
  require(bytes.substr(0, sizeof(kMagic)) == std::string_view(kMagic, sizeof(kMagic)),
          Errc::corrupt_checkpoint, origin + ": not a gloss checkpoint");
  r.pos = sizeof(kMagic);

  // Version gates everything else: a future layout must not be reported as
  // corruption just because this reader cannot follow it.
  const uint32_t version = r.u32();
  require(version == kCheckpointVersion, Errc::version_mismatch,
          origin + ": checkpoint format version " + std::to_string(version) +
              ", this build reads version " + std::to_string(kCheckpointVersion));

  require(bytes.size() >= r.pos + 8, Errc::corrupt_checkpoint,
          origin + ": truncated checkpoint");
  Reader tail{bytes, bytes.size() - 8, origin};
  require(fnv1a(bytes.data(), bytes.size() - 8) == tail.u64(), Errc::corrupt_checkpoint,
          origin + ": checkpoint checksum mismatch");

  ModelConfig cfg;
  cfg.vocab_size = r.i64();
  cfg.d_model = r.i64();
  cfg.n_heads = r.i64();
  cfg.n_enc_layers = r.i64();
  cfg.n_dec_layers = r.i64();
  cfg.d_ff = r.i64();
  cfg.max_len = r.i64();
  cfg.dropout = r.f64();
  cfg.ln_eps = r.f64();
  r.need(1);
  cfg.tie_embeddings = r.buf[r.pos++] != 0;
  try {
    cfg.validate();
  } catch (const Error& e) {
    fail(Errc::corrupt_checkpoint, origin + ": invalid model header: " + e.what());
  }

  CheckpointMeta meta;
  meta.seed = r.u64();
  meta.epochs = r.i64();
  meta.corpus_hash = r.u64();

  const int64_t n_chars = r.i64();
  require(n_chars >= 0 && Tokenizer::kFirstChar + n_chars == cfg.vocab_size,
          Errc::corrupt_checkpoint,
          origin + ": vocabulary does not match the model header");
  std::vector<std::string> chars;
  chars.reserve(static_cast<size_t>(n_chars));
  for (int64_t i = 0; i < n_chars; ++i) chars.push_back(r.str());
  Tokenizer tok = Tokenizer::from_chars(chars);

  auto model = Transformer<float>::make_uninitialized(cfg);
  const auto params = model.params.all();
  const int64_t n_arrays = r.i64();
  require(n_arrays == static_cast<int64_t>(params.size()), Errc::corrupt_checkpoint,
          origin + ": " + std::to_string(n_arrays) + " parameter arrays, the model needs " +
              std::to_string(params.size()));
  for (auto* p : params) {
    const std::string name = r.str();
    require(name == p->name, Errc::corrupt_checkpoint,
            origin + ": parameter '" + name + "' where '" + p->name + "' belongs");
    const uint32_t ndim = r.u32();
    Shape shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d) shape[d] = r.i64();
    require(shape == p->value.shape, Errc::shape_mismatch,
            origin + ": parameter '" + name + "' has shape " + shape_str(shape) +
                ", the model needs " + shape_str(p->value.shape));
    for (float& x : p->value.data) {
      x = r.f32();
      require(std::isfinite(x), Errc::corrupt_checkpoint,
              origin + ": non-finite value in parameter '" + name + "'");
    }
  }

  require(r.pos == bytes.size() - 8, Errc::corrupt_checkpoint,
          origin + ": trailing bytes after the parameter arrays");

  return LoadedCheckpoint{std::move(model), std::move(tok), meta};
}

void save_checkpoint(const Transformer<float>& model, const Tokenizer& tok,
                     const CheckpointMeta& meta, const std::string& path) {
  write_file_atomic(path, encode_checkpoint(model, tok, meta));
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  LoadedCheckpoint ck = decode_checkpoint(read_file(path), path);

  // Self-test: one decoder step from a zero vector must come back finite.
  try {
    Tape<float> tape;
    Forward<float> fwd{ck.model, tape, Tokenizer::kPad, /*training=*/false, nullptr, nullptr};
    const auto v = tape.leaf(Tensor<float>::zeros({1, ck.model.cfg.d_model}));
    const auto logits = fwd.decode_from_vector(v, {Tokenizer::kBos}, 1, SelfAttnMode::causal);
    (void)tape.val(logits);
  } catch (const Error& e) {
    fail(Errc::corrupt_checkpoint, path + ": self-test forward failed: " + e.what());
  }
  return ck;
}

}  // namespace gloss
