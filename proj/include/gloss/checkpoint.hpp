#pragma once
// Model checkpoints: one self-contained binary archive holding the model
// config, the tokenizer vocabulary, training provenance, and every named
// parameter array as little-endian 32-bit floats with shape metadata. The
// whole file is covered by a trailing FNV-1a checksum, so truncation and bit
// rot surface as a corrupt-checkpoint error instead of garbage weights.

#include <cstdint>
#include <string>
#include <string_view>

#include "gloss/corpus.hpp"
#include "gloss/model.hpp"

namespace gloss {

inline constexpr uint32_t kCheckpointVersion = 1;

// Training provenance, stored verbatim. No timestamps: two runs with the
// same inputs must produce byte-identical checkpoints.
struct CheckpointMeta {
  uint64_t seed = 0;         // master rng seed of the training run
  int64_t epochs = 0;        // total epochs across the stages that built it
  uint64_t corpus_hash = 0;  // fnv1a of the corpus serialization trained on
};

struct LoadedCheckpoint {
  Transformer<float> model;
  Tokenizer tok;
  CheckpointMeta meta;
};

// Pure byte-level codec. encode is deterministic: equal inputs give equal
// bytes. decode validates magic, version, checksum, header consistency, and
// the parameter inventory against a freshly built model of the stored
// config; `origin` names the source in error messages.
std::string encode_checkpoint(const Transformer<float>& model, const Tokenizer& tok,
                              const CheckpointMeta& meta);
LoadedCheckpoint decode_checkpoint(std::string_view bytes, const std::string& origin);

// File wrappers: atomic write-then-rename on save; load additionally runs a
// one-token forward self-test so a checkpoint that cannot even produce
// finite logits is rejected at the door.
void save_checkpoint(const Transformer<float>& model, const Tokenizer& tok,
                     const CheckpointMeta& meta, const std::string& path);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace gloss
