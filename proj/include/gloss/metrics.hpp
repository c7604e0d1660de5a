#pragma once

// Automatic gloss scoring: character-level smoothed BLEU, an exact-match
// METEOR variant, and per-POS aggregation with standard errors.
//
// Both metrics operate on unicode codepoints, not words: there is no
// segmenter dependency, and the glosses in this project are short CJK
// strings where character n-grams are the natural unit.
//
// meteor_exact is deliberately NOT named "meteor": it keeps the classic
// F-mean and fragmentation penalty but matches characters exactly, with no
// stem or synonym modules (no Chinese synonym resource is shipped). Scores
// are not comparable to full METEOR implementations.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "gloss/corpus.hpp"
#include "gloss/model.hpp"

namespace gloss {

// Scoring options shared by bleu and meteor_exact.
//
// strip_affixes removes the leading POS label (a short ASCII run followed by
// the first full stop, as produced by target_text) and one trailing full
// stop before scoring, so the metrics measure the gloss body rather than
// rewarding the model for boilerplate. Both modes are useful; evaluation
// tables report which one was active.
struct ScoreOptions {
  bool strip_affixes = true;
};

// Removes a leading "<ascii label>。" prefix (label of 1..3 ASCII
// alphanumerics) and one trailing 。 if present. Strings without these
// affixes pass through unchanged.
std::string strip_gloss_affixes(std::string_view text);

// Character n-gram BLEU, orders 1..4, geometric mean with brevity penalty.
// Orders >= 2 use add-one smoothing: p_n = (matches + 1) / (total + 1), so
// short candidates do not zero out the score; order 1 is unsmoothed.
// Returns 0 when the candidate is empty after stripping. Throws
// Errc::invalid_argument when the reference is empty after stripping, since
// references come from the corpus and are validated non-empty upstream.
double bleu(std::string_view candidate, std::string_view reference,
            const ScoreOptions& opts = {});

// Exact-character METEOR variant. Let m be the maximum number of one-to-one
// character matches, P = m/|candidate|, R = m/|reference|:
//
//   F      = 10*P*R / (R + 9*P)
//   chunks = minimum over all maximum matchings of the number of runs that
//            are contiguous and in order in both strings
//   score  = F * (1 - 0.5 * (chunks/m)^3)
//
// Zero matches score 0. Identical strings of length m score 1 - 0.5/m^3
// (a single chunk), which is why even a perfect gloss never reaches 1.0.
double meteor_exact(std::string_view candidate, std::string_view reference,
                    const ScoreOptions& opts = {});

// Building blocks of meteor_exact, exposed so tests can check them against
// independent oracles without going through the final formula.
int64_t max_unigram_matches(std::u32string_view candidate,
                            std::u32string_view reference);
// Exact minimum chunk count over all maximum matchings. Requires at least
// one match. Exponential in the worst case but fast on gloss-sized inputs;
// callers feed it strings of a few dozen characters.
int64_t min_alignment_chunks(std::u32string_view candidate,
                             std::u32string_view reference);

// One row of the evaluation table: per-POS means with standard errors
// (sample sd / sqrt(n); 0 by convention when n == 1).
struct MetricRow {
  std::string pos;
  int64_t n_items = 0;
  double bleu_mean = 0.0;
  double bleu_se = 0.0;
  double meteor_mean = 0.0;
  double meteor_se = 0.0;
};

// Per-sense record kept alongside the aggregate rows so downstream tools
// can write a machine-readable file and inspect individual generations.
struct SenseScore {
  std::string sense_id;
  PosCategory category = PosCategory::other;
  std::string candidate;
  std::string reference;
  double bleu_score = 0.0;
  double meteor_score = 0.0;
};

struct EvalReport {
  std::vector<SenseScore> items;
  std::vector<MetricRow> rows;  // canonical POS order, empty POS omitted
  MetricRow overall;            // pos "ALL", item-weighted across everything
  std::vector<std::string> warnings;
};

struct EvalOptions {
  ScoreOptions score;
  int64_t max_new = 48;  // generation cap per definition
};

// Groups per-sense scores by POS category and computes means and standard
// errors, plus the overall row. Warnings record omitted empty categories,
// single-item rows, and empty candidates. Pure aggregation; no model.
EvalReport aggregate_scores(std::vector<SenseScore> items,
                            const ScoreOptions& opts = {});

// Greedy-generates one definition per sense (from its first example), scores
// it against target_text(sense), and aggregates. The reference is mutable
// because the tape machinery registers parameter views, but no weight or
// optimizer state changes: evaluation leaves the model as it found it.
EvalReport eval_by_pos(Transformer<float>& model, const Tokenizer& tok,
                       const std::vector<Sense>& senses,
                       const EvalOptions& opts = {});

// Tab-separated rendering of the aggregate rows (header, per-POS rows, ALL).
std::string format_metric_table(const EvalReport& report);

}  // namespace gloss
