#include "gloss/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <tuple>
#include <unordered_map>

#include "gloss/pipeline.hpp"

namespace gloss {

namespace {

bool is_ascii_alnum(char32_t c) {
  return (c >= U'0' && c <= U'9') || (c >= U'A' && c <= U'Z') ||
         (c >= U'a' && c <= U'z');
}

constexpr char32_t kFullStop = U'。';

// Clipped n-gram precision counts for one order: how many candidate n-grams
// also occur in the reference, each reference n-gram usable once.
std::pair<int64_t, int64_t> ngram_counts(const std::u32string& cand,
                                         const std::u32string& ref, size_t n) {
  if (cand.size() < n) return {0, 0};
  std::unordered_map<std::u32string, int64_t> ref_counts;
  for (size_t i = 0; i + n <= ref.size(); ++i) ++ref_counts[ref.substr(i, n)];
  int64_t matched = 0;
  const int64_t total = static_cast<int64_t>(cand.size() - n + 1);
  for (size_t i = 0; i + n <= cand.size(); ++i) {
    auto it = ref_counts.find(cand.substr(i, n));
    if (it != ref_counts.end() && it->second > 0) {
      --it->second;
      ++matched;
    }
  }
  return {matched, total};
}

struct AlignCtx {
  std::u32string_view a, b;
  std::vector<char> used_a, used_b;
  int64_t nodes = 0;
};

// A "piece" is a common substring over currently-free positions. Chunks of
// any maximum matching decompose into such pieces, and a piece cover of the
// same total size yields a matching with at most that many chunks, so the
// minimum piece count equals the minimum chunk count.
struct Piece {
  size_t i, j;
  int64_t len;
};

// Maximal free runs with candidate start >= min_start. Shorter pieces are
// prefixes of these, so this list spans every available choice.
std::vector<Piece> free_runs(const AlignCtx& c, size_t min_start) {
  std::vector<Piece> runs;
  const size_t n = c.a.size(), m = c.b.size();
  for (size_t i = min_start; i < n; ++i) {
    if (c.used_a[i]) continue;
    for (size_t j = 0; j < m; ++j) {
      if (c.used_b[j] || c.a[i] != c.b[j]) continue;
      size_t len = 1;
      while (i + len < n && j + len < m && !c.used_a[i + len] &&
             !c.used_b[j + len] && c.a[i + len] == c.b[j + len])
        ++len;
      runs.push_back({i, j, static_cast<int64_t>(len)});
    }
  }
  return runs;
}

// Can `need` matches be covered by at most `budget` disjoint pieces whose
// candidate spans start at or after min_start? Pieces are enumerated in
// increasing candidate-start order, which visits every piece set exactly
// once (any set of disjoint spans can be listed by ascending start).
bool cover(AlignCtx& c, int64_t need, int64_t budget, size_t min_start) {
  if (need == 0) return true;
  if (budget <= 0) return false;
  // The search is exponential in principle; gloss-sized inputs never get
  // close to this valve, and an error beats a silent hang if one ever does.
  require(++c.nodes < 50'000'000, Errc::invalid_argument,
          "meteor_exact: alignment search too large");

  std::vector<Piece> runs = free_runs(c, min_start);
  if (runs.empty()) return false;
  std::sort(runs.begin(), runs.end(),
            [](const Piece& x, const Piece& y) { return x.len > y.len; });

  // Feasibility: budget pieces cover at most the budget longest runs, even
  // ignoring overlap between them, so falling short of `need` is final.
  int64_t reach = 0;
  for (size_t k = 0; k < runs.size() && k < static_cast<size_t>(budget); ++k)
    reach += runs[k].len;
  if (reach < need) return false;

  for (const Piece& r : runs) {
    const int64_t max_len = std::min(r.len, need);
    for (int64_t len = max_len; len >= 1; --len) {
      for (int64_t t = 0; t < len; ++t) {
        c.used_a[r.i + static_cast<size_t>(t)] = 1;
        c.used_b[r.j + static_cast<size_t>(t)] = 1;
      }
      const bool ok =
          cover(c, need - len, budget - 1, r.i + static_cast<size_t>(len));
      for (int64_t t = 0; t < len; ++t) {
        c.used_a[r.i + static_cast<size_t>(t)] = 0;
        c.used_b[r.j + static_cast<size_t>(t)] = 0;
      }
      if (ok) return true;
    }
  }
  return false;
}

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double se_of(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  return sd / std::sqrt(static_cast<double>(xs.size()));
}

}  // namespace

std::string strip_gloss_affixes(std::string_view text) {
  std::u32string cps = utf8_decode(text);
  const size_t stop = cps.find(kFullStop);
  if (stop != std::u32string::npos && stop >= 1 && stop <= 3) {
    bool ascii_label = true;
    for (size_t i = 0; i < stop; ++i) ascii_label &= is_ascii_alnum(cps[i]);
    if (ascii_label) cps.erase(0, stop + 1);
  }
  if (!cps.empty() && cps.back() == kFullStop) cps.pop_back();
  return utf8_encode(cps);
}

double bleu(std::string_view candidate, std::string_view reference,
            const ScoreOptions& opts) {
  const std::u32string cand = utf8_decode(
      opts.strip_affixes ? strip_gloss_affixes(candidate) : std::string(candidate));
  const std::u32string ref = utf8_decode(
      opts.strip_affixes ? strip_gloss_affixes(reference) : std::string(reference));
  require(!ref.empty(), Errc::invalid_argument, "bleu: empty reference");
  if (cand.empty()) return 0.0;

  double log_sum = 0.0;
  for (size_t n = 1; n <= 4; ++n) {
    const auto [matched, total] = ngram_counts(cand, ref, n);
    double p;
    if (n == 1) {
      if (matched == 0) return 0.0;
      p = static_cast<double>(matched) / static_cast<double>(total);
    } else {
      p = static_cast<double>(matched + 1) / static_cast<double>(total + 1);
    }
    log_sum += 0.25 * std::log(p);
  }
  const double c = static_cast<double>(cand.size());
  const double r = static_cast<double>(ref.size());
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum);
}

int64_t max_unigram_matches(std::u32string_view candidate,
                            std::u32string_view reference) {
  std::unordered_map<char32_t, int64_t> cand_counts, ref_counts;
  for (char32_t c : candidate) ++cand_counts[c];
  for (char32_t c : reference) ++ref_counts[c];
  int64_t m = 0;
  for (const auto& [c, k] : cand_counts) {
    auto it = ref_counts.find(c);
    if (it != ref_counts.end()) m += std::min(k, it->second);
  }
  return m;
}

int64_t min_alignment_chunks(std::u32string_view candidate,
                             std::u32string_view reference) {
  const int64_t m = max_unigram_matches(candidate, reference);
  require(m > 0, Errc::invalid_argument, "min_alignment_chunks: no matches");
  AlignCtx ctx{candidate, reference,
               std::vector<char>(candidate.size(), 0),
               std::vector<char>(reference.size(), 0)};
  int64_t longest = 1;
  for (const Piece& r : free_runs(ctx, 0)) longest = std::max(longest, r.len);
  for (int64_t k = (m + longest - 1) / longest; k <= m; ++k) {
    ctx.nodes = 0;
    if (cover(ctx, m, k, 0)) return k;
  }
  // Singleton pieces always cover a maximum matching, so k == m succeeds.
  return m;
}

double meteor_exact(std::string_view candidate, std::string_view reference,
                    const ScoreOptions& opts) {
  const std::u32string cand = utf8_decode(
      opts.strip_affixes ? strip_gloss_affixes(candidate) : std::string(candidate));
  const std::u32string ref = utf8_decode(
      opts.strip_affixes ? strip_gloss_affixes(reference) : std::string(reference));
  require(!ref.empty(), Errc::invalid_argument, "meteor_exact: empty reference");
  if (cand.empty()) return 0.0;

  const int64_t m = max_unigram_matches(cand, ref);
  if (m == 0) return 0.0;
  const double matches = static_cast<double>(m);
  const double precision = matches / static_cast<double>(cand.size());
  const double recall = matches / static_cast<double>(ref.size());
  const double f_mean = 10.0 * precision * recall / (recall + 9.0 * precision);
  const double chunks = static_cast<double>(min_alignment_chunks(cand, ref));
  const double frag = chunks / matches;
  return f_mean * (1.0 - 0.5 * frag * frag * frag);
}

EvalReport aggregate_scores(std::vector<SenseScore> items,
                            const ScoreOptions& opts) {
  require(!items.empty(), Errc::invalid_argument,
          "aggregate_scores: empty evaluation set");
  EvalReport rep;
  rep.items = std::move(items);

  for (const SenseScore& it : rep.items) {
    const std::string body =
        opts.strip_affixes ? strip_gloss_affixes(it.candidate) : it.candidate;
    if (body.empty())
      rep.warnings.push_back("empty candidate for sense " + it.sense_id +
                             "; scored 0");
  }

  static constexpr PosCategory kOrder[] = {
      PosCategory::noun, PosCategory::verb, PosCategory::adverb,
      PosCategory::proper_noun, PosCategory::other};
  std::vector<double> all_bleu, all_meteor;
  for (PosCategory cat : kOrder) {
    std::vector<double> bs, ms;
    for (const SenseScore& it : rep.items) {
      if (it.category != cat) continue;
      bs.push_back(it.bleu_score);
      ms.push_back(it.meteor_score);
    }
    if (bs.empty()) {
      rep.warnings.push_back(std::string("no items for POS ") +
                             pos_category_name(cat) + "; row omitted");
      continue;
    }
    MetricRow row;
    row.pos = pos_category_name(cat);
    row.n_items = static_cast<int64_t>(bs.size());
    row.bleu_mean = mean_of(bs);
    row.bleu_se = se_of(bs, row.bleu_mean);
    row.meteor_mean = mean_of(ms);
    row.meteor_se = se_of(ms, row.meteor_mean);
    if (row.n_items == 1)
      rep.warnings.push_back(std::string("single item for POS ") +
                             pos_category_name(cat) +
                             "; standard error reported as 0");
    rep.rows.push_back(row);
    all_bleu.insert(all_bleu.end(), bs.begin(), bs.end());
    all_meteor.insert(all_meteor.end(), ms.begin(), ms.end());
  }

  rep.overall.pos = "ALL";
  rep.overall.n_items = static_cast<int64_t>(all_bleu.size());
  rep.overall.bleu_mean = mean_of(all_bleu);
  rep.overall.bleu_se = se_of(all_bleu, rep.overall.bleu_mean);
  rep.overall.meteor_mean = mean_of(all_meteor);
  rep.overall.meteor_se = se_of(all_meteor, rep.overall.meteor_mean);
  if (rep.overall.n_items == 1)
    rep.warnings.push_back("single item overall; standard error reported as 0");
  return rep;
}

EvalReport eval_by_pos(Transformer<float>& model, const Tokenizer& tok,
                       const std::vector<Sense>& senses,
                       const EvalOptions& opts) {
  require(!senses.empty(), Errc::invalid_argument,
          "eval_by_pos: empty evaluation set");
  std::vector<SenseScore> items;
  items.reserve(senses.size());
  for (const Sense& s : senses) {
    SenseScore it;
    it.sense_id = s.sense_id;
    it.category = s.category;
    it.reference = target_text(s);
    it.candidate = generate_definition(model, tok, s, 0, opts.max_new);
    it.bleu_score = bleu(it.candidate, it.reference, opts.score);
    it.meteor_score = meteor_exact(it.candidate, it.reference, opts.score);
    items.push_back(std::move(it));
  }
  return aggregate_scores(std::move(items), opts.score);
}

std::string format_metric_table(const EvalReport& report) {
  std::string out = "pos\tn_items\tbleu_mean\tbleu_se\tmeteor_mean\tmeteor_se\n";
  auto emit = [&out](const MetricRow& r) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s\t%lld\t%.6f\t%.6f\t%.6f\t%.6f\n",
                  r.pos.c_str(), static_cast<long long>(r.n_items),
                  r.bleu_mean, r.bleu_se, r.meteor_mean, r.meteor_se);
    out += buf;
  };
  for (const MetricRow& r : report.rows) emit(r);
  emit(report.overall);
  return out;
}

}  // namespace gloss
