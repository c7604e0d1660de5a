#include "gloss/model.hpp"

#include <cmath>

namespace gloss {

void ModelConfig::validate() const {
  require(vocab_size > 0, Errc::config_error, "model: vocab_size must be positive");
  require(d_model > 0 && n_heads > 0 && d_ff > 0, Errc::config_error,
          "model: dims must be positive");
  require(d_model % n_heads == 0, Errc::config_error,
          "model: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
              std::to_string(n_heads));
  require(n_enc_layers > 0 && n_dec_layers > 0, Errc::config_error,
          "model: need at least one layer per side");
  require(max_len > 1, Errc::config_error, "model: max_len too small");
  require(dropout >= 0.0 && dropout < 1.0, Errc::config_error, "model: dropout must be in [0,1)");
  require(ln_eps > 0.0, Errc::config_error, "model: ln_eps must be positive");
}

namespace {

template <typename T>
void add_attn_params(ParamSet<T>& ps, const std::string& prefix, int64_t d) {
  for (const char* w : {"wq", "wk", "wv", "wo"}) ps.add(prefix + "." + w, {d, d});
  for (const char* b : {"bq", "bk", "bv", "bo"}) ps.add(prefix + "." + b, {d});
}

template <typename T>
void add_ln_params(ParamSet<T>& ps, const std::string& prefix, int64_t d) {
  ps.add(prefix + ".g", {d});
  ps.add(prefix + ".b", {d});
}

template <typename T>
void add_ffn_params(ParamSet<T>& ps, const std::string& prefix, int64_t d, int64_t f) {
  ps.add(prefix + ".w1", {d, f});
  ps.add(prefix + ".b1", {f});
  ps.add(prefix + ".w2", {f, d});
  ps.add(prefix + ".b2", {d});
}

template <typename T>
bool init_as_normal(const Parameter<T>& p) {
  // 2-D parameters (embeddings, projection matrices) get the normal init;
  // 1-D ones are biases and layer norm vectors.
  return p.value.shape.size() == 2;
}

template <typename T>
bool is_ln_gain(const Parameter<T>& p) {
  const auto& n = p.name;
  return n.size() >= 2 && n.compare(n.size() - 2, 2, ".g") == 0 && n.find("ln") != std::string::npos;
}

}  // namespace

template <typename T>
Transformer<T> Transformer<T>::make_uninitialized(ModelConfig cfg) {
  cfg.validate();
  Transformer<T> m;
  m.cfg = cfg;
  auto& ps = m.params;
  const int64_t d = cfg.d_model, f = cfg.d_ff;

  ps.add("tok_emb", {cfg.vocab_size, d});
  ps.add("pos_enc", {cfg.max_len, d});
  ps.add("pos_dec", {cfg.max_len, d});

  for (int64_t i = 0; i < cfg.n_enc_layers; ++i) {
    const std::string p = "enc" + std::to_string(i);
    add_ln_params(ps, p + ".ln1", d);
    add_attn_params(ps, p + ".attn", d);
    add_ln_params(ps, p + ".ln2", d);
    add_ffn_params(ps, p + ".ffn", d, f);
  }
  add_ln_params(ps, "enc_ln_final", d);

  for (int64_t i = 0; i < cfg.n_dec_layers; ++i) {
    const std::string p = "dec" + std::to_string(i);
    add_ln_params(ps, p + ".ln1", d);
    add_attn_params(ps, p + ".self", d);
    add_ln_params(ps, p + ".ln2", d);
    add_attn_params(ps, p + ".cross", d);
    add_ln_params(ps, p + ".ln3", d);
    add_ffn_params(ps, p + ".ffn", d, f);
  }
  add_ln_params(ps, "dec_ln_final", d);

  if (!cfg.tie_embeddings) ps.add("out_proj", {cfg.vocab_size, d});
  return m;
}

template <typename T>
Transformer<T> Transformer<T>::make(ModelConfig cfg, Rng& rng) {
  Transformer<T> m = make_uninitialized(std::move(cfg));
  for (auto* p : m.params.all()) {
    if (init_as_normal(*p)) {
      for (auto& x : p->value.data) x = static_cast<T>(rng.trunc_normal(0.02));
    } else if (is_ln_gain(*p)) {
      std::fill(p->value.data.begin(), p->value.data.end(), T(1));
    }  // biases and ln offsets stay zero
  }
  return m;
}

template <typename T>
int64_t Transformer<T>::expected_param_count(const ModelConfig& cfg) {
  const int64_t d = cfg.d_model, f = cfg.d_ff, v = cfg.vocab_size, l = cfg.max_len;
  const int64_t attn = 4 * d * d + 4 * d;
  const int64_t ffn = d * f + f + f * d + d;
  const int64_t ln = 2 * d;
  const int64_t enc_layer = ln + attn + ln + ffn;
  const int64_t dec_layer = ln + attn + ln + attn + ln + ffn;
  int64_t total = v * d + 2 * l * d;
  total += cfg.n_enc_layers * enc_layer + ln;
  total += cfg.n_dec_layers * dec_layer + ln;
  if (!cfg.tie_embeddings) total += v * d;
  return total;
}

// --- forward pieces -----------------------------------------------------------

template <typename T>
typename Forward<T>::Id Forward<T>::linear(Id x2d, const std::string& w, const std::string& b) {
  auto wi = tape.param(model.params.at(w));
  auto bi = tape.param(model.params.at(b));
  return tape.add_rowvec(tape.matmul(x2d, wi), bi);
}

template <typename T>
typename Forward<T>::Id Forward<T>::embed_positions(const std::string& table, int64_t b,
                                                    int64_t s) {
  std::vector<int32_t> pos(static_cast<size_t>(b * s));
  for (int64_t r = 0; r < b; ++r)
    for (int64_t i = 0; i < s; ++i) pos[static_cast<size_t>(r * s + i)] = static_cast<int32_t>(i);
  return tape.embedding(tape.param(model.params.at(table)), pos);
}

template <typename T>
typename Forward<T>::Id Forward<T>::residual_dropout(Id x) {
  if (!training || model.cfg.dropout == 0.0) return x;
  require(rng != nullptr, Errc::invalid_argument, "training forward needs a dropout rng");
  return tape.dropout(x, model.cfg.dropout, *rng, true);
}

template <typename T>
typename Forward<T>::Id Forward<T>::attention(Id q_in, Id kv_in,
                                              const std::vector<uint8_t>& allow,
                                              const std::string& prefix,
                                              std::vector<Tensor<T>>* trace_sink) {
  const auto& qs = tape.val(q_in).shape;
  const auto& ks = tape.val(kv_in).shape;
  const int64_t b = qs[0], tq = qs[1], d = qs[2], tk = ks[1];
  const int64_t h = model.cfg.n_heads, dh = d / h;

  auto heads = [&](Id x, int64_t t, const char* w, const char* bias) {
    auto y = linear(tape.reshape(x, {b * t, d}), prefix + "." + w, prefix + "." + bias);
    return tape.permute(tape.reshape(y, {b, t, h, dh}), {0, 2, 1, 3});  // (B,H,T,dh)
  };
  auto q = heads(q_in, tq, "wq", "bq");
  auto k = heads(kv_in, tk, "wk", "bk");
  auto v = heads(kv_in, tk, "wv", "bv");

  auto scores = tape.scale(tape.matmul(q, k, false, true),
                           static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  scores = tape.masked_fill(scores, allow, static_cast<T>(-1e9));
  auto probs = tape.softmax_lastdim(scores);
  if (trace_sink) trace_sink->push_back(tape.val(probs));
  if (training && model.cfg.dropout > 0.0) {
    require(rng != nullptr, Errc::invalid_argument, "training forward needs a dropout rng");
    probs = tape.dropout(probs, model.cfg.dropout, *rng, true);
  }
  auto ctx = tape.matmul(probs, v);  // (B,H,Tq,dh)
  auto merged = tape.reshape(tape.permute(ctx, {0, 2, 1, 3}), {b * tq, d});
  auto out = linear(merged, prefix + ".wo", prefix + ".bo");
  return tape.reshape(out, {b, tq, d});
}

template <typename T>
typename Forward<T>::Id Forward<T>::ffn(Id x, const std::string& prefix) {
  const auto& xs = tape.val(x).shape;
  const int64_t b = xs[0], t = xs[1], d = xs[2];
  auto h = tape.relu(linear(tape.reshape(x, {b * t, d}), prefix + ".w1", prefix + ".b1"));
  auto y = linear(h, prefix + ".w2", prefix + ".b2");
  return tape.reshape(y, {b, t, d});
}

template <typename T>
typename Forward<T>::Id Forward<T>::encode(const std::vector<int32_t>& ids, int64_t b, int64_t s) {
  require(b > 0 && s > 0, Errc::invalid_argument, "encode: empty batch or sequence");
  require(static_cast<int64_t>(ids.size()) == b * s, Errc::shape_mismatch,
          "encode: ids size does not match (B,S)");
  require(s <= model.cfg.max_len, Errc::invalid_argument,
          "encode: sequence length " + std::to_string(s) + " exceeds max_len " +
              std::to_string(model.cfg.max_len));
  const int64_t d = model.cfg.d_model;

  auto tok = tape.embedding(tape.param(model.params.at("tok_emb")), ids);
  auto x = tape.reshape(tape.add(tok, embed_positions("pos_enc", b, s)), {b, s, d});
  x = residual_dropout(x);

  // Keys at pad positions are hidden from every query.
  std::vector<uint8_t> allow(static_cast<size_t>(b * s * s), 0);
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t qi = 0; qi < s; ++qi)
      for (int64_t ki = 0; ki < s; ++ki)
        allow[static_cast<size_t>((bi * s + qi) * s + ki)] =
            ids[static_cast<size_t>(bi * s + ki)] != pad_id;

  for (int64_t i = 0; i < model.cfg.n_enc_layers; ++i) {
    const std::string p = "enc" + std::to_string(i);
    auto gi = tape.param(model.params.at(p + ".ln1.g"));
    auto bi2 = tape.param(model.params.at(p + ".ln1.b"));
    auto normed = tape.layer_norm(x, gi, bi2, static_cast<T>(model.cfg.ln_eps));
    auto a = attention(normed, normed, allow, p + ".attn", trace ? &trace->enc_self : nullptr);
    x = tape.add(x, residual_dropout(a));

    auto g2 = tape.param(model.params.at(p + ".ln2.g"));
    auto b2 = tape.param(model.params.at(p + ".ln2.b"));
    auto normed2 = tape.layer_norm(x, g2, b2, static_cast<T>(model.cfg.ln_eps));
    x = tape.add(x, residual_dropout(ffn(normed2, p + ".ffn")));
  }
  auto gf = tape.param(model.params.at("enc_ln_final.g"));
  auto bf = tape.param(model.params.at("enc_ln_final.b"));
  return tape.layer_norm(x, gf, bf, static_cast<T>(model.cfg.ln_eps));
}

template <typename T>
typename Forward<T>::Id Forward<T>::pool_target(Id enc_states, const std::vector<uint8_t>& keep) {
  return tape.masked_mean_rows(enc_states, keep);
}

template <typename T>
typename Forward<T>::Id Forward<T>::decode_states(Id memory,
                                                  const std::vector<uint8_t>& mem_valid,
                                                  const std::vector<int32_t>& prefix, int64_t b,
                                                  int64_t tt, SelfAttnMode mode) {
  const auto& ms = tape.val(memory).shape;
  require(ms.size() == 3 && ms[0] == b, Errc::shape_mismatch,
          "decode: memory must be (B,S,D) matching the prefix batch");
  const int64_t s = ms[1], d = ms[2];
  require(static_cast<int64_t>(mem_valid.size()) == b * s, Errc::shape_mismatch,
          "decode: memory mask size mismatch");
  require(static_cast<int64_t>(prefix.size()) == b * tt, Errc::shape_mismatch,
          "decode: prefix size does not match (B,Tt)");
  require(tt <= model.cfg.max_len, Errc::invalid_argument,
          "decode: prefix length exceeds max_len");

  auto tok = tape.embedding(tape.param(model.params.at("tok_emb")), prefix);
  auto x = tape.reshape(tape.add(tok, embed_positions("pos_dec", b, tt)), {b, tt, d});
  x = residual_dropout(x);

  std::vector<uint8_t> self_allow(static_cast<size_t>(b * tt * tt), 0);
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t qi = 0; qi < tt; ++qi)
      for (int64_t ki = 0; ki < tt; ++ki) {
        const bool visible =
            mode == SelfAttnMode::causal ? (ki <= qi) : (ki == 0 || ki == qi);
        self_allow[static_cast<size_t>((bi * tt + qi) * tt + ki)] =
            visible && prefix[static_cast<size_t>(bi * tt + ki)] != pad_id;
      }

  std::vector<uint8_t> cross_allow(static_cast<size_t>(b * tt * s), 0);
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t qi = 0; qi < tt; ++qi)
      for (int64_t ki = 0; ki < s; ++ki)
        cross_allow[static_cast<size_t>((bi * tt + qi) * s + ki)] =
            mem_valid[static_cast<size_t>(bi * s + ki)];

  for (int64_t i = 0; i < model.cfg.n_dec_layers; ++i) {
    const std::string p = "dec" + std::to_string(i);
    auto n1 = tape.layer_norm(x, tape.param(model.params.at(p + ".ln1.g")),
                              tape.param(model.params.at(p + ".ln1.b")),
                              static_cast<T>(model.cfg.ln_eps));
    auto a = attention(n1, n1, self_allow, p + ".self", trace ? &trace->dec_self : nullptr);
    x = tape.add(x, residual_dropout(a));

    auto n2 = tape.layer_norm(x, tape.param(model.params.at(p + ".ln2.g")),
                              tape.param(model.params.at(p + ".ln2.b")),
                              static_cast<T>(model.cfg.ln_eps));
    auto c = attention(n2, memory, cross_allow, p + ".cross", trace ? &trace->dec_cross : nullptr);
    x = tape.add(x, residual_dropout(c));

    auto n3 = tape.layer_norm(x, tape.param(model.params.at(p + ".ln3.g")),
                              tape.param(model.params.at(p + ".ln3.b")),
                              static_cast<T>(model.cfg.ln_eps));
    x = tape.add(x, residual_dropout(ffn(n3, p + ".ffn")));
  }
  return tape.layer_norm(x, tape.param(model.params.at("dec_ln_final.g")),
                         tape.param(model.params.at("dec_ln_final.b")),
                         static_cast<T>(model.cfg.ln_eps));
}

template <typename T>
typename Forward<T>::Id Forward<T>::logits_from_states(Id dec_states) {
  const auto& xs = tape.val(dec_states).shape;
  const int64_t b = xs[0], t = xs[1], d = xs[2];
  auto flat = tape.reshape(dec_states, {b * t, d});
  auto& head =
      model.cfg.tie_embeddings ? model.params.at("tok_emb") : model.params.at("out_proj");
  auto logits = tape.matmul(flat, tape.param(head), false, true);  // (B*T, V)
  return tape.reshape(logits, {b, t, model.cfg.vocab_size});
}

template <typename T>
typename Forward<T>::Id Forward<T>::seq2seq_logits(const std::vector<int32_t>& src, int64_t b,
                                                   int64_t s, const std::vector<int32_t>& prefix,
                                                   int64_t tt) {
  auto mem = encode(src, b, s);
  std::vector<uint8_t> mem_valid(static_cast<size_t>(b * s));
  for (size_t i = 0; i < mem_valid.size(); ++i) mem_valid[i] = src[i] != pad_id;
  auto states = decode_states(mem, mem_valid, prefix, b, tt, SelfAttnMode::causal);
  return logits_from_states(states);
}

template <typename T>
typename Forward<T>::Id Forward<T>::bottleneck_logits(const std::vector<int32_t>& src, int64_t b,
                                                      int64_t s,
                                                      const std::vector<uint8_t>& target_keep,
                                                      const std::vector<int32_t>& prefix,
                                                      int64_t tt, SelfAttnMode mode) {
  auto enc = encode(src, b, s);
  auto pooled = pool_target(enc, target_keep);
  return decode_from_vector(pooled, prefix, tt, mode);
}

template <typename T>
typename Forward<T>::Id Forward<T>::decode_from_vector(Id vsem,
                                                       const std::vector<int32_t>& prefix,
                                                       int64_t tt, SelfAttnMode mode) {
  const auto& vs = tape.val(vsem).shape;
  require(vs.size() == 2, Errc::shape_mismatch, "decode_from_vector: expected (B,D)");
  const int64_t b = vs[0];
  auto memory = tape.reshape(vsem, {b, 1, vs[1]});
  const std::vector<uint8_t> mem_valid(static_cast<size_t>(b), 1);
  auto states = decode_states(memory, mem_valid, prefix, b, tt, mode);
  return logits_from_states(states);
}

// --- generation ----------------------------------------------------------------

template <typename T>
GenerateResult greedy_decode(Transformer<T>& model, const Tensor<T>& memory,
                             const std::vector<uint8_t>& mem_valid, int32_t bos_id, int32_t eos_id,
                             int32_t pad_id, int64_t max_new) {
  require(memory.ndim() == 3 && memory.shape[0] == 1, Errc::invalid_argument,
          "greedy_decode works on a single sequence (B=1)");
  require(max_new > 0, Errc::invalid_argument, "greedy_decode: max_new must be positive");

  GenerateResult out;
  out.ids = {bos_id};
  while (static_cast<int64_t>(out.ids.size()) - 1 < max_new) {
    Tape<T> tape;
    Forward<T> fwd{model, tape, pad_id, /*training=*/false, nullptr, nullptr};
    auto mem = tape.leaf(memory);
    auto states = fwd.decode_states(mem, mem_valid, out.ids, 1,
                                    static_cast<int64_t>(out.ids.size()), SelfAttnMode::causal);
    auto logits = fwd.logits_from_states(states);
    const auto& lv = tape.val(logits);
    const int64_t v = lv.shape[2];
    const T* row = lv.ptr() + (static_cast<int64_t>(out.ids.size()) - 1) * v;
    int32_t best = 0;
    for (int64_t i = 1; i < v; ++i)
      if (row[i] > row[best]) best = static_cast<int32_t>(i);
    out.ids.push_back(best);
    if (best == eos_id) return out;
  }
  out.hit_max = true;
  return out;
}

template <typename T>
Tensor<T> encode_and_pool(Transformer<T>& model, const std::vector<int32_t>& ids, int64_t b,
                          int64_t s, const std::vector<uint8_t>& keep, int32_t pad_id) {
  Tape<T> tape;
  Forward<T> fwd{model, tape, pad_id, /*training=*/false, nullptr, nullptr};
  auto pooled = fwd.pool_target(fwd.encode(ids, b, s), keep);
  return tape.val(pooled);
}

template struct Transformer<float>;
template struct Transformer<double>;
template struct Forward<float>;
template struct Forward<double>;
template GenerateResult greedy_decode<float>(Transformer<float>&, const Tensor<float>&,
                                             const std::vector<uint8_t>&, int32_t, int32_t,
                                             int32_t, int64_t);
template GenerateResult greedy_decode<double>(Transformer<double>&, const Tensor<double>&,
                                              const std::vector<uint8_t>&, int32_t, int32_t,
                                              int32_t, int64_t);
template Tensor<float> encode_and_pool<float>(Transformer<float>&, const std::vector<int32_t>&,
                                              int64_t, int64_t, const std::vector<uint8_t>&,
                                              int32_t);
template Tensor<double> encode_and_pool<double>(Transformer<double>&, const std::vector<int32_t>&,
                                                int64_t, int64_t, const std::vector<uint8_t>&,
                                                int32_t);

}  // namespace gloss
