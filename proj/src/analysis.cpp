#include "gloss/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "gloss/pipeline.hpp"

namespace gloss {

namespace {

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

void append_g(std::string& out, double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", x);
  out += buf;
}

// Display form of one reference token for the per-token table.
std::string token_display(const Tokenizer& tok, int32_t id) {
  switch (id) {
    case Tokenizer::kPad: return "<pad>";
    case Tokenizer::kBos: return "<bos>";
    case Tokenizer::kEos: return "<eos>";
    default: return tok.decode({id});
  }
}

}  // namespace

std::vector<int32_t> reference_ids(const Tokenizer& tok, const Sense& sense) {
  require(!sense.gloss.empty(), Errc::invalid_argument,
          "reference_ids: empty gloss for '" + sense.sense_id + "'");
  std::vector<int32_t> ids = tok.encode(target_text(sense));
  ids.push_back(Tokenizer::kEos);
  return ids;
}

Tensor<float> example_vector(Transformer<float>& model, const Tokenizer& tok,
                             const Sense& sense, size_t example_idx) {
  const Instance inst = make_finetune_instance(tok, sense, example_idx);
  return encode_and_pool(model, inst.src, 1, static_cast<int64_t>(inst.src.size()),
                         inst.keep, Tokenizer::kPad);
}

Tensor<float> sense_vector(Transformer<float>& model, const Tokenizer& tok,
                           const Sense& sense, VectorPooling pooling) {
  require(!sense.examples.empty(), Errc::invalid_argument,
          "sense_vector: no examples for '" + sense.sense_id + "'");
  const size_t n = sense.examples.size();
  if (n == 1 || pooling == VectorPooling::first_example)
    return example_vector(model, tok, sense, 0);

  std::vector<Tensor<float>> vs;
  vs.reserve(n);
  for (size_t k = 0; k < n; ++k) vs.push_back(example_vector(model, tok, sense, k));

  // Canonical-order double summation per dimension: sorting the addends
  // first makes the mean bitwise independent of example order.
  const int64_t d = vs[0].shape[1];
  Tensor<float> out = Tensor<float>::zeros({1, d});
  std::vector<double> addends(n);
  for (int64_t j = 0; j < d; ++j) {
    for (size_t k = 0; k < n; ++k)
      addends[k] = static_cast<double>(vs[k].data[static_cast<size_t>(j)]);
    std::sort(addends.begin(), addends.end());
    double s = 0.0;
    for (double a : addends) s += a;
    out.data[static_cast<size_t>(j)] = static_cast<float>(s / static_cast<double>(n));
  }
  return out;
}

Tensor<float> reference_logits(Transformer<float>& model, const Tensor<float>& v,
                               const std::vector<int32_t>& reference, SelfAttnMode mode) {
  require(!reference.empty(), Errc::invalid_argument, "reference_logits: empty reference");
  require(v.ndim() == 2 && v.shape[0] == 1 && v.shape[1] == model.cfg.d_model,
          Errc::shape_mismatch, "reference_logits: semantic vector must be (1, d_model)");
  const int64_t tt = static_cast<int64_t>(reference.size());
  require(tt <= model.cfg.max_len, Errc::invalid_argument,
          "reference_logits: reference longer than the position table");
  for (int32_t id : reference)
    require(id >= 0 && id < model.cfg.vocab_size, Errc::invalid_argument,
            "reference_logits: id " + std::to_string(id) + " out of vocabulary");

  std::vector<int32_t> prefix;
  prefix.reserve(reference.size());
  prefix.push_back(Tokenizer::kBos);
  prefix.insert(prefix.end(), reference.begin(), reference.end() - 1);

  Tape<float> tape;
  Forward<float> fwd{model, tape, Tokenizer::kPad, /*training=*/false, nullptr, nullptr};
  const auto logits = fwd.decode_from_vector(tape.leaf(v), prefix, tt, mode);
  return Tensor<float>::from({tt, model.cfg.vocab_size}, tape.val(logits).data);
}

std::vector<double> token_logprobs(Transformer<float>& model, const Tensor<float>& v,
                                   const std::vector<int32_t>& reference, SelfAttnMode mode) {
  const Tensor<float> logits = reference_logits(model, v, reference, mode);
  const int64_t tt = logits.shape[0];
  const int64_t vocab = logits.shape[1];
  std::vector<double> out(static_cast<size_t>(tt));
  for (int64_t i = 0; i < tt; ++i) {
    const float* row = logits.data.data() + static_cast<size_t>(i * vocab);
    double mx = row[0];
    for (int64_t j = 1; j < vocab; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double lse = 0.0;
    for (int64_t j = 0; j < vocab; ++j) lse += std::exp(static_cast<double>(row[j]) - mx);
    out[static_cast<size_t>(i)] =
        static_cast<double>(row[reference[static_cast<size_t>(i)]]) - mx - std::log(lse);
  }
  return out;
}

std::vector<double> token_probs(Transformer<float>& model, const Tensor<float>& v,
                                const std::vector<int32_t>& reference) {
  auto lp = token_logprobs(model, v, reference, SelfAttnMode::causal);
  for (double& x : lp) x = std::exp(x);
  return lp;
}

std::vector<double> masked_probs(Transformer<float>& model, const Tensor<float>& v,
                                 const std::vector<int32_t>& reference) {
  auto lp = token_logprobs(model, v, reference, SelfAttnMode::bos_and_self);
  for (double& x : lp) x = std::exp(x);
  return lp;
}

std::vector<double> replaced_probs(Transformer<float>& model, const Tensor<float>& v_alt,
                                   const std::vector<int32_t>& reference) {
  return token_probs(model, v_alt, reference);
}

const Sense& sample_replacement(const Sense& sense, const std::vector<Sense>& pool,
                                Rng& rng) {
  std::vector<const Sense*> candidates;
  for (const Sense& s : pool)
    if (s.category == sense.category && s.sense_id != sense.sense_id)
      candidates.push_back(&s);
  require(!candidates.empty(), Errc::invalid_argument,
          "sample_replacement: no other sense of category " +
              std::string(pos_category_name(sense.category)) + " for '" +
              sense.sense_id + "'");
  // Draw by sense_id rank, not pool position, so the choice only depends on
  // which senses exist and on the rng state.
  std::sort(candidates.begin(), candidates.end(),
            [](const Sense* a, const Sense* b) { return a->sense_id < b->sense_id; });
  return *candidates[static_cast<size_t>(rng.below(candidates.size()))];
}

std::vector<TokenDependency> token_dependencies(Transformer<float>& model,
                                                const Tokenizer& tok, const Sense& sense,
                                                const Sense& replacement,
                                                VectorPooling pooling) {
  require(replacement.category == sense.category, Errc::invalid_argument,
          "token_dependencies: replacement '" + replacement.sense_id +
              "' is not the same lexical category as '" + sense.sense_id + "'");
  const std::vector<int32_t> ref = reference_ids(tok, sense);
  const Tensor<float> v = sense_vector(model, tok, sense, pooling);
  const Tensor<float> v_alt = sense_vector(model, tok, replacement, pooling);

  const auto lp_full = token_logprobs(model, v, ref, SelfAttnMode::causal);
  const auto lp_rep = token_logprobs(model, v_alt, ref, SelfAttnMode::causal);
  const auto lp_mask = token_logprobs(model, v, ref, SelfAttnMode::bos_and_self);

  // The reference is "<pos label>。<gloss><eos>"; report the gloss span only.
  const size_t offset = utf8_length(sense.pos) + 1;
  const size_t gloss_len = utf8_length(sense.gloss);
  std::vector<TokenDependency> out(gloss_len);
  for (size_t i = 0; i < gloss_len; ++i) {
    const size_t r = offset + i;
    TokenDependency& td = out[i];
    td.position = static_cast<int64_t>(i);
    td.token_id = ref[r];
    td.p_full = std::exp(lp_full[r]);
    td.p_rep = std::exp(lp_rep[r]);
    td.p_mask = std::exp(lp_mask[r]);
    td.delta_sem = lp_full[r] - lp_rep[r];
    td.delta_ctx = lp_full[r] - lp_mask[r];
  }
  return out;
}

GlossDependency gloss_dependency(Transformer<float>& model, const Tokenizer& tok,
                                 const Sense& sense, const Sense& replacement,
                                 VectorPooling pooling) {
  const auto deps = token_dependencies(model, tok, sense, replacement, pooling);
  GlossDependency g;
  g.sense_id = sense.sense_id;
  g.n_tokens = static_cast<int64_t>(deps.size());
  double sum_sem = 0.0, sum_ctx = 0.0;
  for (const TokenDependency& td : deps) {
    sum_sem += td.delta_sem;
    sum_ctx += td.delta_ctx;
  }
  g.mean_delta_sem = sum_sem / static_cast<double>(deps.size());
  g.mean_delta_ctx = sum_ctx / static_cast<double>(deps.size());
  return g;
}

PosDependencyTable pos_dependency_table(Transformer<float>& model, const Tokenizer& tok,
                                        const std::vector<Sense>& senses, uint64_t seed,
                                        VectorPooling pooling) {
  require(!senses.empty(), Errc::invalid_argument, "pos_dependency_table: no senses");
  PosDependencyTable table;

  // How many same-category replacement candidates each sense has.
  std::map<PosCategory, int64_t> cat_count;
  for (const Sense& s : senses) ++cat_count[s.category];

  // Accumulate in sense_id order so the table is independent of input order.
  std::vector<const Sense*> sorted;
  for (const Sense& s : senses)
    if (s.category != PosCategory::proper_noun) sorted.push_back(&s);
  std::sort(sorted.begin(), sorted.end(),
            [](const Sense* a, const Sense* b) { return a->sense_id < b->sense_id; });

  const Rng parent(seed);
  std::map<PosCategory, std::pair<std::vector<double>, std::vector<double>>> acc;
  for (const Sense* s : sorted) {
    if (cat_count[s->category] < 2) {
      table.warnings.push_back("no replacement candidate for sense " + s->sense_id +
                               "; skipped");
      continue;
    }
    Rng rng = parent.fork(s->sense_id);
    const Sense& rep = sample_replacement(*s, senses, rng);
    const GlossDependency g = gloss_dependency(model, tok, *s, rep, pooling);
    acc[s->category].first.push_back(g.mean_delta_sem);
    acc[s->category].second.push_back(g.mean_delta_ctx);
    table.glosses.push_back(g);
  }

  static constexpr PosCategory kOrder[] = {PosCategory::noun, PosCategory::verb,
                                           PosCategory::adverb, PosCategory::other};
  for (PosCategory cat : kOrder) {
    auto it = acc.find(cat);
    if (it == acc.end()) {
      table.warnings.push_back(std::string("no glosses for POS ") +
                               pos_category_name(cat) + "; row omitted");
      continue;
    }
    PosDependencyRow row;
    row.pos = pos_category_name(cat);
    row.n_glosses = static_cast<int64_t>(it->second.first.size());
    row.mean_delta_sem = mean_of(it->second.first);
    row.se_sem = se_of(it->second.first, row.mean_delta_sem);
    row.mean_delta_ctx = mean_of(it->second.second);
    row.se_ctx = se_of(it->second.second, row.mean_delta_ctx);
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::vector<TypeDependencyRow> chunk_dependency(Transformer<float>& model,
                                                const Tokenizer& tok,
                                                const std::vector<SenseAnnotation>& annotations,
                                                const std::vector<Sense>& senses,
                                                const ChunkDependencyOptions& opts) {
  require(!annotations.empty(), Errc::invalid_argument, "chunk_dependency: no annotations");
  std::map<std::string, const Sense*> by_id;
  for (const Sense& s : senses) by_id[s.sense_id] = &s;
  std::map<PosCategory, int64_t> cat_count;
  for (const Sense& s : senses) ++cat_count[s.category];

  std::vector<const SenseAnnotation*> sorted;
  for (const SenseAnnotation& a : annotations) sorted.push_back(&a);
  std::sort(sorted.begin(), sorted.end(),
            [](const SenseAnnotation* a, const SenseAnnotation* b) {
              return a->sense_id < b->sense_id;
            });

  const Rng parent(opts.seed);
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> acc;
  for (const SenseAnnotation* a : sorted) {
    auto it = by_id.find(a->sense_id);
    require(it != by_id.end(), Errc::invalid_argument,
            "chunk_dependency: annotation for unknown sense '" + a->sense_id + "'");
    const Sense& s = *it->second;
    const int64_t gloss_len = static_cast<int64_t>(utf8_length(s.gloss));
    int64_t pos = 0;
    for (const ChunkSpan& c : a->chunks) {
      require(c.start == pos && c.end > c.start, Errc::invalid_argument,
              "chunk_dependency: annotation for '" + a->sense_id +
                  "' does not cover its gloss");
      pos = c.end;
    }
    require(pos == gloss_len, Errc::invalid_argument,
            "chunk_dependency: annotation for '" + a->sense_id +
                "' does not cover its gloss");

    // Senses that cannot be given a same-category replacement contribute no
    // tokens; the aggregate is over the rest.
    if (cat_count[s.category] < 2) continue;
    Rng rng = parent.fork(s.sense_id);
    const Sense& rep = sample_replacement(s, senses, rng);

    // Dependency positions are gloss-relative, so chunk spans index directly.
    const auto deps = token_dependencies(model, tok, s, rep, opts.pooling);
    for (const ChunkSpan& c : a->chunks) {
      if (c.type == kUntypedChunk) continue;
      for (int64_t p = c.start; p < c.end; ++p) {
        const TokenDependency& td = deps[static_cast<size_t>(p)];
        acc[c.type].first.push_back(td.delta_sem);
        acc[c.type].second.push_back(td.delta_ctx);
      }
    }
  }

  std::vector<TypeDependencyRow> rows;
  for (const auto& [type, sems_ctxs] : acc) {
    const auto& [sems, ctxs] = sems_ctxs;
    if (static_cast<int64_t>(sems.size()) < opts.min_count) continue;
    TypeDependencyRow row;
    row.semantic_type = type;
    row.n_tokens = static_cast<int64_t>(sems.size());
    row.mean_delta_sem = mean_of(sems);
    row.se_sem = se_of(sems, row.mean_delta_sem);
    row.mean_delta_ctx = mean_of(ctxs);
    row.se_ctx = se_of(ctxs, row.mean_delta_ctx);
    rows.push_back(std::move(row));
  }
  return rows;  // std::map iteration already sorted by type name
}

std::vector<RatingItem> make_rating_items(
    const std::vector<Sense>& targets, int64_t n_items,
    const std::vector<Sense>& distractor_pool, Rng& rng,
    const std::map<std::string, std::string>* generated_definitions) {
  require(n_items >= 1, Errc::invalid_argument, "make_rating_items: n_items must be positive");
  require(!targets.empty(), Errc::invalid_argument, "make_rating_items: no targets");

  static constexpr PosCategory kOrder[] = {PosCategory::noun, PosCategory::verb,
                                           PosCategory::adverb, PosCategory::proper_noun,
                                           PosCategory::other};
  std::vector<PosCategory> cats;
  for (PosCategory cat : kOrder)
    for (const Sense& s : targets)
      if (s.category == cat) {
        cats.push_back(cat);
        break;
      }

  // Distinct distractor lemmas per category, in pool order.
  std::map<PosCategory, std::vector<std::string>> lemmas;
  for (const Sense& s : distractor_pool) {
    auto& v = lemmas[s.category];
    if (std::find(v.begin(), v.end(), s.lemma) == v.end()) v.push_back(s.lemma);
  }

  std::vector<RatingItem> items;
  items.reserve(static_cast<size_t>(n_items));
  const int64_t base = n_items / static_cast<int64_t>(cats.size());
  const int64_t extra = n_items % static_cast<int64_t>(cats.size());
  for (size_t ci = 0; ci < cats.size(); ++ci) {
    const PosCategory cat = cats[ci];
    const int64_t quota = base + (static_cast<int64_t>(ci) < extra ? 1 : 0);
    if (quota == 0) continue;

    std::vector<const Sense*> cat_targets;
    for (const Sense& s : targets)
      if (s.category == cat) cat_targets.push_back(&s);
    require(static_cast<int64_t>(cat_targets.size()) >= quota, Errc::invalid_argument,
            std::string("make_rating_items: need ") + std::to_string(quota) + " " +
                pos_category_name(cat) + " targets, have " +
                std::to_string(cat_targets.size()));

    // Sample targets without replacement.
    for (int64_t t = 0; t < quota; ++t) {
      const size_t j = static_cast<size_t>(t) +
                       static_cast<size_t>(rng.below(cat_targets.size() - static_cast<size_t>(t)));
      std::swap(cat_targets[static_cast<size_t>(t)], cat_targets[j]);
    }

    for (int64_t t = 0; t < quota; ++t) {
      const Sense& target = *cat_targets[static_cast<size_t>(t)];
      std::vector<std::string> candidates;
      for (const std::string& lemma : lemmas[cat])
        if (lemma != target.lemma) candidates.push_back(lemma);
      require(candidates.size() >= 3, Errc::invalid_argument,
              "make_rating_items: need 3 distractors for sense " + target.sense_id +
                  " of POS " + pos_category_name(cat) + ", have " +
                  std::to_string(candidates.size()));
      for (size_t k = 0; k < 3; ++k) {
        const size_t j = k + static_cast<size_t>(rng.below(candidates.size() - k));
        std::swap(candidates[k], candidates[j]);
      }

      RatingItem item;
      item.sense_id = target.sense_id;
      item.pos = pos_category_name(cat);
      if (generated_definitions) {
        auto g = generated_definitions->find(target.sense_id);
        if (g != generated_definitions->end()) {
          item.definition = g->second;
          item.generated = true;
        }
      }
      if (item.definition.empty()) {
        item.definition = target.gloss;
        item.generated = false;
      }
      item.options = {target.lemma, candidates[0], candidates[1], candidates[2]};
      for (size_t k = 0; k < 4; ++k) {
        const size_t j = k + static_cast<size_t>(rng.below(4 - k));
        std::swap(item.options[k], item.options[j]);
      }
      for (size_t k = 0; k < 4; ++k)
        if (item.options[k] == target.lemma) item.answer = static_cast<int64_t>(k);
      items.push_back(std::move(item));
    }
  }
  return items;
}

std::string format_token_dependencies(const Tokenizer& tok,
                                      const std::vector<TokenDependency>& deps) {
  std::string out = "position\ttoken\tp_full\tp_rep\tp_mask\tdelta_sem\tdelta_ctx\n";
  for (const TokenDependency& td : deps) {
    out += std::to_string(td.position);
    out += '\t';
    out += token_display(tok, td.token_id);
    for (double x : {td.p_full, td.p_rep, td.p_mask, td.delta_sem, td.delta_ctx}) {
      out += '\t';
      append_g(out, x);
    }
    out += '\n';
  }
  return out;
}

std::string format_gloss_dependencies(const std::vector<GlossDependency>& deps) {
  std::string out = "sense_id\tn_tokens\tmean_delta_sem\tmean_delta_ctx\n";
  for (const GlossDependency& g : deps) {
    out += g.sense_id;
    out += '\t';
    out += std::to_string(g.n_tokens);
    out += '\t';
    append_g(out, g.mean_delta_sem);
    out += '\t';
    append_g(out, g.mean_delta_ctx);
    out += '\n';
  }
  return out;
}

std::string format_pos_dependency_table(const PosDependencyTable& table) {
  std::string out = "pos\tn_glosses\tmean_delta_sem\tse_sem\tmean_delta_ctx\tse_ctx\n";
  for (const PosDependencyRow& r : table.rows) {
    out += r.pos;
    out += '\t';
    out += std::to_string(r.n_glosses);
    for (double x : {r.mean_delta_sem, r.se_sem, r.mean_delta_ctx, r.se_ctx}) {
      out += '\t';
      append_g(out, x);
    }
    out += '\n';
  }
  return out;
}

std::string format_type_dependency_rows(const std::vector<TypeDependencyRow>& rows) {
  std::string out = "semantic_type\tn_tokens\tmean_delta_sem\tse_sem\tmean_delta_ctx\tse_ctx\n";
  for (const TypeDependencyRow& r : rows) {
    out += r.semantic_type;
    out += '\t';
    out += std::to_string(r.n_tokens);
    for (double x : {r.mean_delta_sem, r.se_sem, r.mean_delta_ctx, r.se_ctx}) {
      out += '\t';
      append_g(out, x);
    }
    out += '\n';
  }
  return out;
}

std::string format_rating_sheet(const std::vector<RatingItem>& items) {
  std::string out = "item\tdefinition\tA\tB\tC\tD\tsource\n";
  for (size_t i = 0; i < items.size(); ++i) {
    const RatingItem& it = items[i];
    out += std::to_string(i + 1);
    out += '\t';
    out += it.definition;
    for (const std::string& opt : it.options) {
      out += '\t';
      out += opt;
    }
    out += '\t';
    out += it.generated ? "generated" : "reference";
    out += '\n';
  }
  return out;
}

std::string format_rating_key(const std::vector<RatingItem>& items) {
  std::string out = "item\tanswer\tsense_id\n";
  for (size_t i = 0; i < items.size(); ++i) {
    out += std::to_string(i + 1);
    out += '\t';
    out += static_cast<char>('A' + items[i].answer);
    out += '\t';
    out += items[i].sense_id;
    out += '\n';
  }
  return out;
}

}  // namespace gloss
