#pragma once
// Synthetic sense generator: a small constructed lexicon whose gloss
// material is a deterministic function of the lemma, so a trained model can
// in principle recover every gloss from the pooled target-word vector alone.
// Each gloss also opens with a register mark (通/特) that selects between
// two phrasings later in the template; whether that mark is itself derivable
// from the lemma is configurable, which is what separates "the vector knows
// it" from "only the preceding text knows it" in dependency analyses.

#include <array>
#include <cstdint>

#include "gloss/corpus.hpp"

namespace gloss {

struct SynthSpec {
  uint64_t seed = 1;
  int64_t n_senses = 100;

  // Relative weights for noun/verb/adverb/other among non-name senses.
  std::array<double, 4> pos_mix{0.4, 0.3, 0.15, 0.15};

  // Fraction of senses that are proper names (fixed formulaic glosses).
  double nb_fraction = 0.1;

  // derived: the register mark is a function of the lemma, so the pooled
  // vector can resolve it. random: an independent coin flip per sense, so
  // only the mark inside the gloss resolves the later phrasing choices.
  enum class RegisterMode { derived, random };
  RegisterMode register_mode = RegisterMode::derived;

  // Examples per sense are drawn uniformly from 1..max_examples distinct
  // sentence frames (at most 5 frames exist per category).
  int64_t max_examples = 5;

  void validate() const;
};

struct SynthResult {
  std::vector<Sense> senses;
  std::vector<SenseAnnotation> annotations;  // index-aligned with senses
};

SynthResult synth_corpus(const SynthSpec& spec);

// Ground-truth taxonomy over the generator's chunk types. Slot chunks carry
// lexeme-specific material (recoverable from the lemma, hence from the
// pooled vector); forced chunks are dictated by the template once the
// register mark is fixed. The "--" opener is neither.
bool is_slot_chunk_type(const std::string& type);
bool is_forced_chunk_type(const std::string& type);

// Structural acceptor for generated glosses: true iff the text matches the
// category's template exactly, including register-consistent phrasing and
// slot characters drawn from the right pools. Used to score whether model
// output for an unseen lemma is a well-formed definition.
bool synth_gloss_well_formed(PosCategory cat, const std::string& gloss);

// The generator's character pools, exposed for tests and analyses.
std::u32string_view synth_lemma_pool();
std::u32string_view synth_prop_pool();
std::u32string_view synth_entity_pool();

}  // namespace gloss
