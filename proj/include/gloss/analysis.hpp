#pragma once

// Interpretability toolkit for the definition model. Everything here asks
// one question three ways: how much does the decoder's next-token belief
// lean on the semantic vector, and how much on the gloss it has emitted so
// far?
//
// For each reference token, teacher forcing yields three probabilities:
//   p_full  vector and preceding gloss both intact,
//   p_rep   vector swapped for another same-POS sense's vector,
//   p_mask  preceding gloss blinded (decoder sees only BOS and itself).
// The dependency deltas are log ratios against the full run:
//   delta_sem = -log(p_rep / p_full)   vector dependency
//   delta_ctx = -log(p_mask / p_full)  context dependency
// Log-probabilities are accumulated in 64-bit floats over the 32-bit model
// outputs, and all passes run with dropout off.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gloss/corpus.hpp"
#include "gloss/model.hpp"

namespace gloss {

// ---------------------------------------------------------------------------
// Semantic vectors and reference targets.

// Tokenized decoder target for a sense: target_text(sense) plus EOS, the
// same ids the fine-tuning stage uses as labels.
std::vector<int32_t> reference_ids(const Tokenizer& tok, const Sense& sense);

// Pooled vector (1, d_model) from one example sentence.
Tensor<float> example_vector(Transformer<float>& model, const Tokenizer& tok,
                             const Sense& sense, size_t example_idx);

// Whether a sense's vector pools every example or just the first one.
enum class VectorPooling { multi_example, first_example };

// Mean of the per-example vectors (or just the first example's vector under
// first_example pooling). Each dimension is summed in double over addends in
// a canonical sort order, so the result is bitwise identical no matter how
// the examples are ordered.
Tensor<float> sense_vector(Transformer<float>& model, const Tokenizer& tok,
                           const Sense& sense,
                           VectorPooling pooling = VectorPooling::multi_example);

// ---------------------------------------------------------------------------
// Teacher-forced probabilities.

// Log-probability of each reference token at its own position, decoding
// from the injected vector v (shape (1, d_model)). `mode` picks the decoder
// self-attention: causal for the full run, bos_and_self for the blinded one.
// Rejects out-of-vocabulary ids and references longer than the model's
// position table.
std::vector<double> token_logprobs(Transformer<float>& model, const Tensor<float>& v,
                                   const std::vector<int32_t>& reference,
                                   SelfAttnMode mode = SelfAttnMode::causal);

// exp() of the corresponding token_logprobs call. replaced_probs is the
// same computation as token_probs; the name marks which vector you hand it.
std::vector<double> token_probs(Transformer<float>& model, const Tensor<float>& v,
                                const std::vector<int32_t>& reference);
std::vector<double> masked_probs(Transformer<float>& model, const Tensor<float>& v,
                                 const std::vector<int32_t>& reference);
std::vector<double> replaced_probs(Transformer<float>& model, const Tensor<float>& v_alt,
                                   const std::vector<int32_t>& reference);

// Raw teacher-forced logits (tt, vocab) for one reference, exposed so tests
// can check the probability normalization independently.
Tensor<float> reference_logits(Transformer<float>& model, const Tensor<float>& v,
                               const std::vector<int32_t>& reference,
                               SelfAttnMode mode = SelfAttnMode::causal);

// ---------------------------------------------------------------------------
// Dependency indices.

struct TokenDependency {
  int64_t position = 0;
  int32_t token_id = 0;
  double p_full = 0.0;
  double p_rep = 0.0;
  double p_mask = 0.0;
  double delta_sem = 0.0;  // log p_full - log p_rep
  double delta_ctx = 0.0;  // log p_full - log p_mask
};

struct GlossDependency {
  std::string sense_id;
  double mean_delta_sem = 0.0;
  double mean_delta_ctx = 0.0;
  int64_t n_tokens = 0;
};

// Uniform draw of a different sense with the same lexical category from
// `pool`. Candidates are ranked by sense_id before drawing, so the result
// depends only on which senses exist and on the rng state, never on pool
// order. Errors when the pool holds no such sense.
const Sense& sample_replacement(const Sense& sense, const std::vector<Sense>& pool,
                                Rng& rng);

// Per-token probabilities and deltas for the gloss tokens of one sense.
// Teacher forcing always runs over the full reference (POS label, gloss,
// EOS), but the returned list covers the gloss codepoints only, `position`
// counted from the gloss start, so entries line up with chunk annotations.
// The replacement must share the sense's category; passing the sense itself
// is the self-replacement identity (delta_sem exactly 0 at every position).
// Vectors are multi-example means via sense_vector.
std::vector<TokenDependency> token_dependencies(Transformer<float>& model,
                                                const Tokenizer& tok, const Sense& sense,
                                                const Sense& replacement,
                                                VectorPooling pooling = VectorPooling::multi_example);

// Arithmetic means of the per-token deltas over the gloss tokens.
GlossDependency gloss_dependency(Transformer<float>& model, const Tokenizer& tok,
                                 const Sense& sense, const Sense& replacement,
                                 VectorPooling pooling = VectorPooling::multi_example);

// ---------------------------------------------------------------------------
// Aggregations.

struct PosDependencyRow {
  std::string pos;
  int64_t n_glosses = 0;
  double mean_delta_sem = 0.0;
  double se_sem = 0.0;
  double mean_delta_ctx = 0.0;
  double se_ctx = 0.0;
};

struct PosDependencyTable {
  std::vector<PosDependencyRow> rows;
  std::vector<GlossDependency> glosses;  // per-gloss values behind the rows, sense_id order
  std::vector<std::string> warnings;
};

// Gloss-level deltas aggregated per category over N, V, D, and O; proper
// names are left off the table by design. Each sense's replacement is drawn
// from Rng(seed).fork(sense_id), so rows do not depend on input order;
// senses whose category has no replacement candidate are skipped with a
// warning. Means and standard errors are over gloss-level values, summed in
// sense_id order.
PosDependencyTable pos_dependency_table(Transformer<float>& model, const Tokenizer& tok,
                                        const std::vector<Sense>& senses, uint64_t seed,
                                        VectorPooling pooling = VectorPooling::multi_example);

struct TypeDependencyRow {
  std::string semantic_type;
  int64_t n_tokens = 0;
  double mean_delta_sem = 0.0;
  double se_sem = 0.0;
  double mean_delta_ctx = 0.0;
  double se_ctx = 0.0;
};

struct ChunkDependencyOptions {
  uint64_t seed = 1;
  // Report only types covering at least this many tokens; the reference
  // analysis used 25 (a tenth of its gloss count).
  int64_t min_count = 25;
  VectorPooling pooling = VectorPooling::multi_example;
};

// Token-level deltas grouped by the semantic type of the chunk covering
// each gloss token. The POS prefix, the untyped opening chunk, and EOS
// belong to no typed chunk and are excluded. Annotations must tile the
// gloss of a known sense; violations raise an error naming the sense. Rows
// are sorted by type name.
std::vector<TypeDependencyRow> chunk_dependency(Transformer<float>& model,
                                                const Tokenizer& tok,
                                                const std::vector<SenseAnnotation>& annotations,
                                                const std::vector<Sense>& senses,
                                                const ChunkDependencyOptions& opts = {});

// ---------------------------------------------------------------------------
// Rating sheets: the multiple-choice material of the human evaluation. Each
// item shows one definition and four same-POS lemma options, exactly one of
// which is the defined word.

struct RatingItem {
  std::string sense_id;
  std::string pos;         // category display name
  std::string definition;  // gloss text shown to the rater
  bool generated = false;  // true when the text came from the model
  std::vector<std::string> options;  // 4 lemmas, shuffled
  int64_t answer = 0;                // index of the defined lemma
};

// Builds n_items items balanced as evenly as n_items allows across the
// categories present in `targets` (140 items over 4 categories is 35 each).
// Distractor lemmas are drawn uniformly from same-category senses in
// `distractor_pool`; every target needs at least 3 distinct ones. When
// `generated_definitions` maps a sense_id to a model output, that text is
// used and the item flagged generated; otherwise the reference gloss runs.
std::vector<RatingItem> make_rating_items(
    const std::vector<Sense>& targets, int64_t n_items,
    const std::vector<Sense>& distractor_pool, Rng& rng,
    const std::map<std::string, std::string>* generated_definitions = nullptr);

// ---------------------------------------------------------------------------
// Tab-separated renderings for the report files.

std::string format_token_dependencies(const Tokenizer& tok,
                                      const std::vector<TokenDependency>& deps);
std::string format_gloss_dependencies(const std::vector<GlossDependency>& deps);
std::string format_pos_dependency_table(const PosDependencyTable& table);
std::string format_type_dependency_rows(const std::vector<TypeDependencyRow>& rows);
// The sheet hides the answers; the key carries them (A..D) per item.
std::string format_rating_sheet(const std::vector<RatingItem>& items);
std::string format_rating_key(const std::vector<RatingItem>& items);

}  // namespace gloss
