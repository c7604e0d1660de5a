#pragma once
// Encoder-decoder transformer with a single-vector interface between the two
// halves. The decoder consumes an arbitrary-length memory; the definition-
// generation path pools the encoder states for the target span into one
// vector and hands the decoder a length-1 memory, so everything the gloss
// says about the word must flow through that vector.
//
// Architecture: pre-norm blocks, learned absolute positions, biased linears,
// ReLU feed-forward, optional weight tying between the token embedding and
// the output projection.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gloss/common.hpp"
#include "gloss/tape.hpp"
#include "gloss/tensor.hpp"

namespace gloss {

struct ModelConfig {
  int64_t vocab_size = 0;
  int64_t d_model = 128;
  int64_t n_heads = 4;
  int64_t n_enc_layers = 2;
  int64_t n_dec_layers = 2;
  int64_t d_ff = 256;
  int64_t max_len = 128;  // position-table length for both sides
  double dropout = 0.1;
  double ln_eps = 1e-5;
  bool tie_embeddings = true;

  void validate() const;
};

// Self-attention visibility for the decoder:
//  - causal: position i sees 0..i (training and generation),
//  - bos_and_self: position i sees only {0, i} (context-starved scoring mode).
enum class SelfAttnMode { causal, bos_and_self };

// Post-softmax attention weights captured during a forward pass (before
// attention dropout). One tensor per layer, each (B, H, Tq, Tk).
template <typename T>
struct AttnTrace {
  std::vector<Tensor<T>> enc_self;
  std::vector<Tensor<T>> dec_self;
  std::vector<Tensor<T>> dec_cross;
};

template <typename T>
struct Transformer {
  ModelConfig cfg;
  ParamSet<T> params;

  // Builds the parameter set and initializes it from `rng`: weights and
  // embeddings truncated-normal std 0.02 (clip 2 sigma), biases and layer
  // norm offsets zero, layer norm gains one.
  static Transformer make(ModelConfig cfg, Rng& rng);

  // Same parameter layout, values left at zero (checkpoint loading).
  static Transformer make_uninitialized(ModelConfig cfg);

  // Closed-form parameter count for the config; equals params.total_size().
  static int64_t expected_param_count(const ModelConfig& cfg);
};

// One forward construction over a tape. Bundles the knobs every layer needs.
// `rng` supplies dropout masks and must be non-null when training with a
// nonzero dropout rate.
template <typename T>
struct Forward {
  Transformer<T>& model;
  Tape<T>& tape;
  int32_t pad_id = 0;
  bool training = false;
  Rng* rng = nullptr;
  AttnTrace<T>* trace = nullptr;

  using Id = typename Tape<T>::Id;

  // ids are row-major (B, S), right-padded with pad_id. Returns (B, S, D).
  Id encode(const std::vector<int32_t>& ids, int64_t b, int64_t s);

  // enc_states (B, S, D); keep marks the positions to average, row-major
  // (B*S). Returns (B, D). Every batch row must keep at least one position.
  Id pool_target(Id enc_states, const std::vector<uint8_t>& keep);

  // memory (B, S, D) with a validity mask (B*S); prefix (B, Tt) decoder
  // input ids (BOS-led, right-padded). Returns decoder states (B, Tt, D).
  Id decode_states(Id memory, const std::vector<uint8_t>& mem_valid,
                   const std::vector<int32_t>& prefix, int64_t b, int64_t tt, SelfAttnMode mode);

  // (B, Tt, D) -> (B, Tt, V), tied or untied head per config.
  Id logits_from_states(Id dec_states);

  // Teacher-forced full-memory path (denoising stage): encode the source and
  // let the decoder cross-attend to every valid source state.
  Id seq2seq_logits(const std::vector<int32_t>& src, int64_t b, int64_t s,
                    const std::vector<int32_t>& prefix, int64_t tt);

  // Teacher-forced bottleneck path (definition modeling): encode, pool the
  // target span, decode from the single pooled vector. Composes the three
  // public ops above, so it is bitwise-identical to calling them separately.
  Id bottleneck_logits(const std::vector<int32_t>& src, int64_t b, int64_t s,
                       const std::vector<uint8_t>& target_keep, const std::vector<int32_t>& prefix,
                       int64_t tt, SelfAttnMode mode = SelfAttnMode::causal);

  // Decode directly from an injected semantic vector (B, D).
  Id decode_from_vector(Id vsem, const std::vector<int32_t>& prefix, int64_t tt,
                        SelfAttnMode mode = SelfAttnMode::causal);

 private:
  Id attention(Id q_in, Id kv_in, const std::vector<uint8_t>& allow, const std::string& prefix,
               std::vector<Tensor<T>>* trace_sink);
  Id ffn(Id x, const std::string& prefix);
  Id linear(Id x2d, const std::string& w, const std::string& b);
  Id embed_positions(const std::string& table, int64_t b, int64_t s);
  Id residual_dropout(Id x);
};

struct GenerateResult {
  std::vector<int32_t> ids;  // BOS ... generated, EOS included when produced
  bool hit_max = false;
};

// Greedy argmax decoding (ties break to the lowest token id) from a memory
// tensor (B=1, S, D). Generation always runs causal. max_new bounds the
// number of generated tokens after BOS.
template <typename T>
GenerateResult greedy_decode(Transformer<T>& model, const Tensor<T>& memory,
                             const std::vector<uint8_t>& mem_valid, int32_t bos_id, int32_t eos_id,
                             int32_t pad_id, int64_t max_new);

// Convenience: encode + pool on a fresh tape, returning the semantic vector
// as a plain tensor (B, D).
template <typename T>
Tensor<T> encode_and_pool(Transformer<T>& model, const std::vector<int32_t>& ids, int64_t b,
                          int64_t s, const std::vector<uint8_t>& keep, int32_t pad_id);

extern template struct Transformer<float>;
extern template struct Transformer<double>;
extern template struct Forward<float>;
extern template struct Forward<double>;
extern template GenerateResult greedy_decode<float>(Transformer<float>&, const Tensor<float>&,
                                                    const std::vector<uint8_t>&, int32_t, int32_t,
                                                    int32_t, int64_t);
extern template GenerateResult greedy_decode<double>(Transformer<double>&, const Tensor<double>&,
                                                     const std::vector<uint8_t>&, int32_t, int32_t,
                                                     int32_t, int64_t);
extern template Tensor<float> encode_and_pool<float>(Transformer<float>&,
                                                     const std::vector<int32_t>&, int64_t, int64_t,
                                                     const std::vector<uint8_t>&, int32_t);
extern template Tensor<double> encode_and_pool<double>(Transformer<double>&,
                                                       const std::vector<int32_t>&, int64_t,
                                                       int64_t, const std::vector<uint8_t>&,
                                                       int32_t);

}  // namespace gloss
