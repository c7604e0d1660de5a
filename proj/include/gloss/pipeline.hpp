#pragma once
// Training-data construction and the two-stage trainer. Stage one denoises
// span-corrupted glosses with full encoder memory; stage two fine-tunes
// definition generation through the single pooled vector. Generation decodes
// greedily from that vector.

#include <cstdint>
#include <string>
#include <vector>

#include "gloss/corpus.hpp"
#include "gloss/model.hpp"

namespace gloss {

// ---------------------------------------------------------------------------
// Span corruption.

// Masked spans become sentinels in src; tgt lists each sentinel followed by
// the tokens it hid, closed by one final sentinel. No EOS here; instance
// building appends it.
struct SpanCorruption {
  std::vector<int32_t> src;
  std::vector<int32_t> tgt;
};

// Span length: Poisson(lambda = 2) clamped into [1, 4], and never longer
// than the sequence. Exposed so its distribution can be measured directly.
int64_t sample_span_len(Rng& rng, int64_t max_len);

// One span per sequence; sequences longer than 20 tokens get two disjoint
// spans. Sentinels number left to right. The input must not already contain
// sentinel ids.
SpanCorruption corrupt_spans(const std::vector<int32_t>& toks, Rng& rng);

// Inverse of corrupt_spans: re-substitutes the listed spans into src.
// Throws parse_error when tgt is not a well-formed span listing for src.
std::vector<int32_t> splice_corrupted(const std::vector<int32_t>& src,
                                      const std::vector<int32_t>& tgt);

// ---------------------------------------------------------------------------
// Instances and batches.

// One training example. src is EOS-terminated encoder input; tgt is the
// EOS-terminated reference (no BOS; the batch builder derives the decoder
// prefix). keep flags the target-span positions in src and is empty for
// denoising instances.
struct Instance {
  std::vector<int32_t> src;
  std::vector<uint8_t> keep;
  std::vector<int32_t> tgt;
};

// Reference string the fine-tuning stage decodes: raw POS label, then the
// gloss, joined by the ideographic period.
std::string target_text(const Sense& sense);

// Fine-tuning instance for one (sense, example) pair: the example sentence
// with the target word bracket-marked as source, the marked positions as
// pool flags, target_text(sense) as reference.
Instance make_finetune_instance(const Tokenizer& tok, const Sense& sense, size_t example_idx);

// Denoising instance: one fresh corruption of the sense's gloss.
Instance make_denoise_instance(const Tokenizer& tok, const Sense& sense, Rng& rng);

// Fixed-shape batch: src (b, s) right-padded, keep (b*s), decoder prefix
// (b, tt) BOS-led, labels (b*tt) with PAD marking ignored positions.
struct Batch {
  int64_t b = 0, s = 0, tt = 0;
  std::vector<int32_t> src;
  std::vector<uint8_t> keep;
  std::vector<int32_t> prefix;
  std::vector<int32_t> labels;
  bool pooled = false;  // pooled: bottleneck path; otherwise full memory
};

Batch make_batch(const std::vector<Instance>& instances, const std::vector<int64_t>& idxs,
                 bool pooled);

// Mean label cross-entropy of one batch; with backward, gradients accumulate
// into the model parameters. rng feeds dropout and may be null when the
// model's dropout rate is zero or backward is false.
double batch_loss(Transformer<float>& model, const Batch& batch, bool backward, Rng* rng);

// ---------------------------------------------------------------------------
// Training.

enum class Stage { denoise, finetune };

const char* stage_name(Stage s);

struct TrainConfig {
  int64_t batch_size = 8;
  int64_t epochs = 1;
  double lr = 1e-4;
  double weight_decay = 0.01;
  double clip_norm = 1.0;  // <= 0 disables clipping
  uint64_t seed = 1;
  double diverge_loss = 20.0;  // a non-finite or >= this batch loss aborts

  void validate() const;
};

// One optimizer update, as recorded in the training log.
struct StepRecord {
  int64_t step = 0;
  int64_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainStats {
  int64_t steps = 0;
  std::vector<double> epoch_loss;    // mean batch loss per epoch
  double final_loss = 0.0;           // last epoch's mean
  std::vector<StepRecord> step_log;  // every update, in order
};

// Runs one stage over the senses: fine-tuning visits every (sense, example)
// pair per epoch; denoising corrupts every gloss freshly per epoch. Linear
// learning-rate decay over the full stage, AdamW updates, deterministic
// shuffling per epoch from cfg.seed.
TrainStats train_stage(Transformer<float>& model, const Tokenizer& tok,
                       const std::vector<Sense>& senses, Stage stage, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Generation.

// Greedy definition for one example of a sense: encode the marked context,
// pool the target span, decode from the single vector. Returns decoded text
// (specials dropped).
std::string generate_definition(Transformer<float>& model, const Tokenizer& tok, const Sense& sense,
                                size_t example_idx, int64_t max_new);

}  // namespace gloss
