#pragma once
// Sense records, the TSV corpus format, the character tokenizer, and
// deterministic train/eval splitting.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "gloss/common.hpp"

namespace gloss {

// Five-way aggregation category derived from the raw POS label. The raw
// label is kept verbatim on the record (targets embed it as written); the
// category drives grouping and reporting.
enum class PosCategory { noun, verb, adverb, proper_noun, other };

const char* pos_category_name(PosCategory c);  // "N", "V", "D", "Nb", "O"

// Nb is an exact match; otherwise prefixes N/V/D classify; any other purely
// alphabetic label is "other"; anything else is a parse error.
PosCategory pos_category_from_label(const std::string& raw);

struct ExampleSpan {
  int64_t start = 0;  // codepoint offsets into text, [start, end)
  int64_t end = 0;
  std::string text;
};

struct Sense {
  std::string sense_id;
  std::string pos;  // raw label ("VA", "Na", ...)
  PosCategory category = PosCategory::other;
  std::string lemma;
  std::string gloss;
  std::vector<ExampleSpan> examples;
};

// One record per line: sense_id TAB pos TAB lemma TAB gloss TAB examples.
// The examples field holds one or more "start,end,text" triples joined by
// U+2016 (double vertical line). Validation is strict: five fields, known
// POS shape, non-empty lemma/gloss, at least one example, spans inside the
// sentence and matching the lemma, unique sense ids. Errors carry the line
// number and sense id.
std::vector<Sense> parse_senses(std::string_view text, const std::string& origin);
std::vector<Sense> load_senses(const std::string& path);
std::string format_senses(const std::vector<Sense>& senses);

// Target-word marking inside example sentences, e.g. 她正在〈說〉話。
// parse returns the sentence with the marks removed plus the codepoint span
// the marks enclosed; format is its inverse.
struct MarkedSentence {
  std::string text;
  int64_t start = 0;
  int64_t end = 0;
};
MarkedSentence parse_marked_sentence(const std::string& s);
std::string format_marked_sentence(const std::string& text, int64_t start, int64_t end);

inline constexpr char32_t kMarkOpen = U'〈';   // 〈
inline constexpr char32_t kMarkClose = U'〉';  // 〉

// Chunk annotations segment a gloss into typed spans. Spans are codepoint
// offsets, must tile the gloss exactly (no gaps, no overlaps), and carry a
// free-form type label ("--" marks the gloss opener).
struct ChunkSpan {
  int64_t start = 0;
  int64_t end = 0;
  std::string type;
};

// Type label of the gloss opener; exactly the first chunk carries it.
inline constexpr std::string_view kUntypedChunk = "--";

struct SenseAnnotation {
  std::string sense_id;
  std::vector<ChunkSpan> chunks;
};

// One line per sense, mirroring how chunked glosses are displayed:
//
//   sense_id TAB 表/同一事件/在/後述時段 TAB --/Event/Preposition/Time
//
// Chunk texts joined by '/' in field 2, their type labels joined the same
// way in field 3, one type per text. Joining the texts must reproduce the
// sense's gloss byte-exactly; spans are recovered from the text lengths.
// parse/format validate tiling against the gloss of the matching sense.
std::vector<SenseAnnotation> parse_annotations(std::string_view text, const std::string& origin,
                                               const std::vector<Sense>& senses);
std::vector<SenseAnnotation> load_annotations(const std::string& path,
                                              const std::vector<Sense>& senses);
std::string format_annotations(const std::vector<SenseAnnotation>& annotations,
                               const std::vector<Sense>& senses);

// Renders the annotated gloss as its chunk texts, e.g. {"表同", "紅", "的",
// "程度。"}.
std::vector<std::string> chunk_strings(const std::string& gloss,
                                       const std::vector<ChunkSpan>& chunks);

// Deterministic, exact-count split: each sense is ranked by one u64 drawn
// from Rng(seed).fork(sense_id) and the lowest round(n * eval_fraction) go
// to eval. Independent of input order, stable across runs and platforms.
struct SplitResult {
  std::vector<Sense> train;
  std::vector<Sense> eval;
};
SplitResult split_senses(const std::vector<Sense>& senses, double eval_fraction, uint64_t seed);

// Character-level tokenizer. Fixed ids: PAD 0, BOS 1, EOS 2, UNK 3,
// sentinels X0..X99 at 4..103, then the span-mark brackets and corpus
// codepoints in first-seen order.
class Tokenizer {
 public:
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kBos = 1;
  static constexpr int32_t kEos = 2;
  static constexpr int32_t kUnk = 3;
  static constexpr int32_t kNumSentinels = 100;
  static constexpr int32_t kFirstChar = 4 + kNumSentinels;

  // Collects codepoints from lemma, gloss, example sentences, and the raw
  // POS label of every sense, in encounter order.
  static Tokenizer build(const std::vector<Sense>& senses);

  // Restores from the stored codepoint list (checkpoint vocab), verbatim.
  static Tokenizer from_chars(const std::vector<std::string>& utf8_chars);

  int64_t vocab_size() const { return kFirstChar + static_cast<int64_t>(chars_.size()); }

  int32_t sentinel_id(int32_t n) const;
  bool is_sentinel(int32_t id) const { return id >= 4 && id < 4 + kNumSentinels; }

  int32_t char_id(char32_t c) const;  // kUnk when unknown
  std::vector<int32_t> encode(std::string_view text) const;

  // Drops PAD/BOS/EOS; sentinels render as "<Xn>", unknown as U+FFFD.
  std::string decode(const std::vector<int32_t>& ids) const;

  std::vector<std::string> chars() const;  // utf8, in id order from kFirstChar

 private:
  std::vector<char32_t> chars_;
  std::map<char32_t, int32_t> index_;
};

}  // namespace gloss
