// glossgen: the operator surface of the pipeline. One subcommand per stage:
//
//   synth      build a synthetic sense corpus (optionally split train/eval)
//   denoise    stage-1 training: reconstruct corrupted glosses, full memory
//   finetune   stage-2 training: generate glosses through the pooled vector
//   generate   one definition for a bracket-marked sentence
//   eval       generate and score definitions for a whole corpus
//   deps       per-POS semantic/contextual dependency table
//   chunks     dependency table grouped by annotated chunk type
//   ratings    multiple-choice rating sheets for human evaluation
//
// Every run writes machine-readable files plus a manifest.json naming the
// command, the resolved kernel backend, the effective configuration, and an
// FNV-1a hash of every input and output file. Manifests carry no paths or
// timestamps, so two runs with equal inputs produce byte-identical output
// trees wherever they land. stdout is a short human summary; errors are one
// "<class>: <detail>" line on stderr (exit 1), usage problems exit 2.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "CLI11.hpp"
#include "gloss/analysis.hpp"
#include "gloss/checkpoint.hpp"
#include "gloss/common.hpp"
#include "gloss/corpus.hpp"
#include "gloss/kernels.hpp"
#include "gloss/metrics.hpp"
#include "gloss/model.hpp"
#include "gloss/pipeline.hpp"
#include "gloss/synth.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace gloss;

namespace {

// ---------------------------------------------------------------------------
// Run configuration. One struct covers every subcommand; the config file
// fills it by section, then command-line flags overwrite single fields.

struct RunConfig {
  ModelConfig model;       // vocab_size stays 0 here; the corpus decides it
  TrainConfig denoise;     // stage defaults below mirror the two-stage recipe
  TrainConfig finetune;
  SynthSpec synth;
  double synth_split = 0.0;  // fraction of synth senses held out for eval
  uint64_t split_seed = 1;
  int64_t eval_max_new = 48;
  uint64_t deps_seed = 1;
  VectorPooling deps_pooling = VectorPooling::multi_example;
  ChunkDependencyOptions chunks;
  int64_t ratings_n = 140;
  uint64_t ratings_seed = 1;

  RunConfig() {
    denoise.epochs = 3;
    finetune.epochs = 10;
  }
};

// ---------------------------------------------------------------------------
// Config file: "# comment", "[section]", "key = value". Unknown sections and
// keys are errors, not warnings; a config that silently does nothing is how
// runs stop being reproducible.

std::string trim(std::string_view s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

int64_t to_i64(const std::string& v, const std::string& where) {
  size_t used = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (used != v.size())
    fail(Errc::config_error, where + ": expected an integer, got '" + v + "'");
  return x;
}

uint64_t to_u64(const std::string& v, const std::string& where) {
  size_t used = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (used != v.size() || v.find('-') != std::string::npos)
    fail(Errc::config_error, where + ": expected a non-negative integer, got '" + v + "'");
  return x;
}

double to_f64(const std::string& v, const std::string& where) {
  size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (used != v.size())
    fail(Errc::config_error, where + ": expected a number, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& v, const std::string& where) {
  if (v == "true") return true;
  if (v == "false") return false;
  fail(Errc::config_error, where + ": expected true or false, got '" + v + "'");
}

VectorPooling to_pooling(const std::string& v, const std::string& where) {
  if (v == "multi_example") return VectorPooling::multi_example;
  if (v == "first_example") return VectorPooling::first_example;
  fail(Errc::config_error,
       where + ": expected multi_example or first_example, got '" + v + "'");
}

const char* pooling_name(VectorPooling p) {
  return p == VectorPooling::multi_example ? "multi_example" : "first_example";
}

void apply_model_key(ModelConfig& m, const std::string& key, const std::string& v,
                     const std::string& where) {
  if (key == "d_model") m.d_model = to_i64(v, where);
  else if (key == "n_heads") m.n_heads = to_i64(v, where);
  else if (key == "n_enc_layers") m.n_enc_layers = to_i64(v, where);
  else if (key == "n_dec_layers") m.n_dec_layers = to_i64(v, where);
  else if (key == "d_ff") m.d_ff = to_i64(v, where);
  else if (key == "max_len") m.max_len = to_i64(v, where);
  else if (key == "dropout") m.dropout = to_f64(v, where);
  else if (key == "ln_eps") m.ln_eps = to_f64(v, where);
  else if (key == "tie_embeddings") m.tie_embeddings = to_bool(v, where);
  else fail(Errc::config_error, where + ": unknown key '" + key + "' in [model]");
}

void apply_train_key(TrainConfig& t, const std::string& sec, const std::string& key,
                     const std::string& v, const std::string& where) {
  if (key == "batch_size") t.batch_size = to_i64(v, where);
  else if (key == "epochs") t.epochs = to_i64(v, where);
  else if (key == "lr") t.lr = to_f64(v, where);
  else if (key == "weight_decay") t.weight_decay = to_f64(v, where);
  else if (key == "clip_norm") t.clip_norm = to_f64(v, where);
  else if (key == "seed") t.seed = to_u64(v, where);
  else if (key == "diverge_loss") t.diverge_loss = to_f64(v, where);
  else fail(Errc::config_error, where + ": unknown key '" + key + "' in [" + sec + "]");
}

void apply_config_key(RunConfig& cfg, const std::string& sec, const std::string& key,
                      const std::string& v, const std::string& where) {
  auto unknown = [&]() {
    fail(Errc::config_error, where + ": unknown key '" + key + "' in [" + sec + "]");
  };
  if (sec == "model") {
    apply_model_key(cfg.model, key, v, where);
  } else if (sec == "denoise" || sec == "finetune") {
    apply_train_key(sec == "denoise" ? cfg.denoise : cfg.finetune, sec, key, v, where);
  } else if (sec == "synth") {
    if (key == "seed") cfg.synth.seed = to_u64(v, where);
    else if (key == "n_senses") cfg.synth.n_senses = to_i64(v, where);
    else if (key == "nb_fraction") cfg.synth.nb_fraction = to_f64(v, where);
    else if (key == "max_examples") cfg.synth.max_examples = to_i64(v, where);
    else if (key == "register") {
      if (v == "derived") cfg.synth.register_mode = SynthSpec::RegisterMode::derived;
      else if (v == "random") cfg.synth.register_mode = SynthSpec::RegisterMode::random;
      else fail(Errc::config_error, where + ": expected derived or random, got '" + v + "'");
    } else if (key == "pos_mix") {
      const auto parts = split(v, ',');
      if (parts.size() != 4)
        fail(Errc::config_error, where + ": pos_mix needs 4 comma-separated weights");
      for (size_t i = 0; i < 4; ++i) cfg.synth.pos_mix[i] = to_f64(trim(parts[i]), where);
    } else if (key == "split") cfg.synth_split = to_f64(v, where);
    else if (key == "split_seed") cfg.split_seed = to_u64(v, where);
    else unknown();
  } else if (sec == "eval") {
    if (key == "max_new") cfg.eval_max_new = to_i64(v, where);
    else unknown();
  } else if (sec == "deps") {
    if (key == "seed") cfg.deps_seed = to_u64(v, where);
    else if (key == "pooling") cfg.deps_pooling = to_pooling(v, where);
    else unknown();
  } else if (sec == "chunks") {
    if (key == "seed") cfg.chunks.seed = to_u64(v, where);
    else if (key == "min_count") cfg.chunks.min_count = to_i64(v, where);
    else if (key == "pooling") cfg.chunks.pooling = to_pooling(v, where);
    else unknown();
  } else if (sec == "ratings") {
    if (key == "n_items") cfg.ratings_n = to_i64(v, where);
    else if (key == "seed") cfg.ratings_seed = to_u64(v, where);
    else unknown();
  } else {
    fail(Errc::config_error, where + ": unknown section [" + sec + "]");
  }
}

RunConfig parse_run_config(std::string_view text, const std::string& origin) {
  RunConfig cfg;
  std::string section;
  int64_t line_no = 0;
  for (const std::string& raw : split_lines(text)) {
    ++line_no;
    std::string line = raw;
    if (const size_t hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      require(line.back() == ']', Errc::config_error, where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      require(!section.empty(), Errc::config_error, where + ": empty section name");
      continue;
    }
    const size_t eq = line.find('=');
    require(eq != std::string::npos, Errc::config_error, where + ": expected key = value");
    require(!section.empty(), Errc::config_error, where + ": key before any [section]");
    apply_config_key(cfg, section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where);
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  return path.empty() ? RunConfig{} : parse_run_config(read_file(path), path);
}

// Effective configuration as flat "section.key" entries; this is what the
// manifest records. vocab_size is derived from data, never configured, so
// it is deliberately absent.
json flatten_config(const RunConfig& cfg) {
  json j;
  j["model.d_model"] = cfg.model.d_model;
  j["model.n_heads"] = cfg.model.n_heads;
  j["model.n_enc_layers"] = cfg.model.n_enc_layers;
  j["model.n_dec_layers"] = cfg.model.n_dec_layers;
  j["model.d_ff"] = cfg.model.d_ff;
  j["model.max_len"] = cfg.model.max_len;
  j["model.dropout"] = cfg.model.dropout;
  j["model.ln_eps"] = cfg.model.ln_eps;
  j["model.tie_embeddings"] = cfg.model.tie_embeddings;
  const auto put_train = [&j](const char* sec, const TrainConfig& t) {
    const std::string p = sec;
    j[p + ".batch_size"] = t.batch_size;
    j[p + ".epochs"] = t.epochs;
    j[p + ".lr"] = t.lr;
    j[p + ".weight_decay"] = t.weight_decay;
    j[p + ".clip_norm"] = t.clip_norm;
    j[p + ".seed"] = t.seed;
    j[p + ".diverge_loss"] = t.diverge_loss;
  };
  put_train("denoise", cfg.denoise);
  put_train("finetune", cfg.finetune);
  j["synth.seed"] = cfg.synth.seed;
  j["synth.n_senses"] = cfg.synth.n_senses;
  j["synth.pos_mix"] = cfg.synth.pos_mix;
  j["synth.nb_fraction"] = cfg.synth.nb_fraction;
  j["synth.register"] =
      cfg.synth.register_mode == SynthSpec::RegisterMode::derived ? "derived" : "random";
  j["synth.max_examples"] = cfg.synth.max_examples;
  j["synth.split"] = cfg.synth_split;
  j["synth.split_seed"] = cfg.split_seed;
  j["eval.max_new"] = cfg.eval_max_new;
  j["deps.seed"] = cfg.deps_seed;
  j["deps.pooling"] = pooling_name(cfg.deps_pooling);
  j["chunks.seed"] = cfg.chunks.seed;
  j["chunks.min_count"] = cfg.chunks.min_count;
  j["chunks.pooling"] = pooling_name(cfg.chunks.pooling);
  j["ratings.n_items"] = cfg.ratings_n;
  j["ratings.seed"] = cfg.ratings_seed;
  return j;
}

// ---------------------------------------------------------------------------
// Output plumbing.

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

json new_manifest(const std::string& command, const RunConfig& cfg) {
  json m;
  m["command"] = command;
  m["backend"] = std::string(kern::backend_name(kern::active_backend()));
  m["config"] = flatten_config(cfg);
  m["args"] = json::object();
  m["inputs"] = json::object();
  m["outputs"] = json::object();
  return m;
}

void note_input(json& m, const std::string& role, const std::string& path) {
  m["inputs"][role] = to_hex(hash_file(path));
}

void write_output(const fs::path& dir, const std::string& name, std::string_view content,
                  json& m) {
  const std::string path = (dir / name).string();
  write_file_atomic(path, content);
  m["outputs"][name] = to_hex(hash_file(path));
}

void finish_run(const fs::path& dir, const json& m) {
  write_file_atomic((dir / "manifest.json").string(), m.dump(2) + "\n");
}

fs::path make_out_dir(const std::string& out) {
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, Errc::io_error, "cannot create output directory " + out + ": " + ec.message());
  return dir;
}

std::string format_train_log(const TrainStats& stats) {
  std::string out = "step\tepoch\tlr\tloss\n";
  for (const StepRecord& r : stats.step_log) {
    out += std::to_string(r.step);
    out += '\t';
    out += std::to_string(r.epoch);
    out += '\t';
    out += num(r.lr);
    out += '\t';
    out += num(r.loss);
    out += '\n';
  }
  return out;
}

std::string format_sense_scores(const EvalReport& rep) {
  std::string out = "sense_id\tpos\tbleu\tmeteor\tcandidate\treference\n";
  for (const SenseScore& it : rep.items) {
    out += it.sense_id;
    out += '\t';
    out += pos_category_name(it.category);
    out += '\t';
    out += num(it.bleu_score);
    out += '\t';
    out += num(it.meteor_score);
    out += '\t';
    out += it.candidate;
    out += '\t';
    out += it.reference;
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands.

int run_synth(const RunConfig& cfg, const std::string& out) {
  const SynthResult res = synth_corpus(cfg.synth);
  const fs::path dir = make_out_dir(out);
  json m = new_manifest("synth", cfg);
  write_output(dir, "senses.tsv", format_senses(res.senses), m);
  write_output(dir, "annotations.tsv", format_annotations(res.annotations, res.senses), m);
  std::cout << "synth: " << res.senses.size() << " senses -> " << out << "\n";
  if (cfg.synth_split > 0.0) {
    const SplitResult sp = split_senses(res.senses, cfg.synth_split, cfg.split_seed);
    write_output(dir, "train.tsv", format_senses(sp.train), m);
    write_output(dir, "eval.tsv", format_senses(sp.eval), m);
    std::cout << "split: " << sp.train.size() << " train / " << sp.eval.size() << " eval\n";
  }
  finish_run(dir, m);
  return 0;
}

// Both training stages. Fresh runs build the tokenizer from the corpus and
// draw initial weights from the stage seed; --init resumes from a checkpoint
// instead, whose header then fixes the architecture and vocabulary.
int run_train(const RunConfig& cfg, Stage stage, const std::string& corpus_path,
              const std::string& out, const std::string& init_path) {
  const TrainConfig& tc = stage == Stage::denoise ? cfg.denoise : cfg.finetune;
  const std::vector<Sense> senses = load_senses(corpus_path);

  auto fresh = [&]() -> LoadedCheckpoint {
    const Tokenizer tok = Tokenizer::build(senses);
    ModelConfig mc = cfg.model;
    mc.vocab_size = tok.vocab_size();
    Rng init = Rng(tc.seed).fork("init");
    return {Transformer<float>::make(mc, init), tok, CheckpointMeta{}};
  };
  LoadedCheckpoint ck = init_path.empty() ? fresh() : load_checkpoint(init_path);

  if (!init_path.empty()) {
    // The checkpoint's vocabulary is frozen; a corpus it cannot spell would
    // train on unknown-character noise, so reject it up front.
    auto oov = [&](std::string_view text) {
      for (int32_t id : ck.tok.encode(text))
        if (id == Tokenizer::kUnk) return true;
      return false;
    };
    for (const Sense& s : senses) {
      bool bad = oov(s.lemma) || oov(s.gloss) || oov(s.pos);
      for (const ExampleSpan& e : s.examples) bad = bad || oov(e.text);
      require(!bad, Errc::config_error,
              "corpus contains characters outside the checkpoint vocabulary (sense " +
                  s.sense_id + ")");
    }
  }

  const TrainStats stats = train_stage(ck.model, ck.tok, senses, stage, tc);
  ck.meta.seed = tc.seed;
  ck.meta.epochs += tc.epochs;
  ck.meta.corpus_hash = hash_file(corpus_path);

  const fs::path dir = make_out_dir(out);
  json m = new_manifest(stage_name(stage), cfg);
  note_input(m, "corpus", corpus_path);
  if (!init_path.empty()) note_input(m, "init", init_path);
  save_checkpoint(ck.model, ck.tok, ck.meta, (dir / "model.ckpt").string());
  m["outputs"]["model.ckpt"] = to_hex(hash_file((dir / "model.ckpt").string()));
  write_output(dir, "train_log.tsv", format_train_log(stats), m);
  finish_run(dir, m);
  std::cout << stage_name(stage) << ": " << stats.steps << " steps over " << tc.epochs
            << " epochs, final loss " << num(stats.final_loss) << "\n";
  return 0;
}

int run_generate(const RunConfig& cfg, const std::string& ckpt_path,
                 const std::string& sentence, const std::string& out, int64_t max_new) {
  // Validate the sentence before touching the checkpoint: a missing mark
  // should not cost a model load to diagnose.
  const MarkedSentence ms = parse_marked_sentence(sentence);
  LoadedCheckpoint ck = load_checkpoint(ckpt_path);

  // The marked sentence becomes a one-example sense with no reference side.
  Sense sense;
  sense.sense_id = "input";
  const std::u32string text32 = utf8_decode(ms.text);
  sense.lemma = utf8_encode(text32.substr(static_cast<size_t>(ms.start),
                                          static_cast<size_t>(ms.end - ms.start)));
  sense.examples.push_back({ms.start, ms.end, ms.text});

  const std::string definition = generate_definition(ck.model, ck.tok, sense, 0, max_new);
  std::cout << definition << "\n";

  const fs::path dir = make_out_dir(out);
  json m = new_manifest("generate", cfg);
  note_input(m, "checkpoint", ckpt_path);
  m["args"]["sentence"] = sentence;
  m["args"]["max_new"] = max_new;
  write_output(dir, "generation.txt", definition + "\n", m);
  finish_run(dir, m);
  return 0;
}

int run_eval(const RunConfig& cfg, const std::string& ckpt_path,
             const std::string& corpus_path, const std::string& out) {
  LoadedCheckpoint ck = load_checkpoint(ckpt_path);
  const std::vector<Sense> senses = load_senses(corpus_path);

  EvalOptions eo;
  eo.max_new = cfg.eval_max_new;
  const EvalReport rep = eval_by_pos(ck.model, ck.tok, senses, eo);

  // Second table over the raw strings (POS label and period kept), rescored
  // from the same generations rather than decoding twice.
  const ScoreOptions raw_opts{/*strip_affixes=*/false};
  std::vector<SenseScore> raw_items = rep.items;
  for (SenseScore& it : raw_items) {
    it.bleu_score = bleu(it.candidate, it.reference, raw_opts);
    it.meteor_score = meteor_exact(it.candidate, it.reference, raw_opts);
  }
  const EvalReport raw = aggregate_scores(std::move(raw_items), raw_opts);

  const fs::path dir = make_out_dir(out);
  json m = new_manifest("eval", cfg);
  note_input(m, "checkpoint", ckpt_path);
  note_input(m, "corpus", corpus_path);
  write_output(dir, "metrics.tsv", format_metric_table(rep), m);
  write_output(dir, "metrics_raw.tsv", format_metric_table(raw), m);
  write_output(dir, "scores.tsv", format_sense_scores(rep), m);
  m["warnings"] = rep.warnings;
  finish_run(dir, m);

  std::cout << "eval: " << rep.overall.n_items << " senses, bleu " << num(rep.overall.bleu_mean)
            << " meteor " << num(rep.overall.meteor_mean) << " (gloss body), bleu "
            << num(raw.overall.bleu_mean) << " meteor " << num(raw.overall.meteor_mean)
            << " (raw)\n";
  for (const std::string& w : rep.warnings) std::cout << "warning: " << w << "\n";
  return 0;
}

int run_deps(const RunConfig& cfg, const std::string& ckpt_path,
             const std::string& corpus_path, const std::string& out) {
  LoadedCheckpoint ck = load_checkpoint(ckpt_path);
  const std::vector<Sense> senses = load_senses(corpus_path);
  const PosDependencyTable table =
      pos_dependency_table(ck.model, ck.tok, senses, cfg.deps_seed, cfg.deps_pooling);

  const fs::path dir = make_out_dir(out);
  json m = new_manifest("deps", cfg);
  note_input(m, "checkpoint", ckpt_path);
  note_input(m, "corpus", corpus_path);
  write_output(dir, "pos_deps.tsv", format_pos_dependency_table(table), m);
  write_output(dir, "gloss_deps.tsv", format_gloss_dependencies(table.glosses), m);
  m["warnings"] = table.warnings;
  finish_run(dir, m);

  std::cout << "deps: " << table.rows.size() << " POS rows over " << table.glosses.size()
            << " glosses, " << table.warnings.size() << " warnings\n";
  for (const std::string& w : table.warnings) std::cout << "warning: " << w << "\n";
  return 0;
}

int run_chunks(const RunConfig& cfg, const std::string& ckpt_path,
               const std::string& corpus_path, const std::string& annotations_path,
               const std::string& out) {
  LoadedCheckpoint ck = load_checkpoint(ckpt_path);
  const std::vector<Sense> senses = load_senses(corpus_path);
  const std::vector<SenseAnnotation> annotations = load_annotations(annotations_path, senses);
  const auto rows = chunk_dependency(ck.model, ck.tok, annotations, senses, cfg.chunks);

  const fs::path dir = make_out_dir(out);
  json m = new_manifest("chunks", cfg);
  note_input(m, "checkpoint", ckpt_path);
  note_input(m, "corpus", corpus_path);
  note_input(m, "annotations", annotations_path);
  write_output(dir, "chunk_deps.tsv", format_type_dependency_rows(rows), m);
  finish_run(dir, m);

  std::cout << "chunks: " << rows.size() << " types with at least " << cfg.chunks.min_count
            << " tokens\n";
  return 0;
}

int run_ratings(const RunConfig& cfg, const std::string& corpus_path,
                const std::string& pool_path, const std::string& generated_path,
                const std::string& out) {
  const std::vector<Sense> targets = load_senses(corpus_path);
  const std::vector<Sense> pool =
      pool_path.empty() ? targets : load_senses(pool_path);

  // Optional model outputs: "sense_id TAB definition" per line.
  std::map<std::string, std::string> generated;
  if (!generated_path.empty()) {
    const std::string text = read_file(generated_path);
    int64_t line_no = 0;
    for (const std::string& line : split_lines(text)) {
      ++line_no;
      if (line.empty()) continue;
      const size_t tab = line.find('\t');
      require(tab != std::string::npos, Errc::parse_error,
              generated_path + ":" + std::to_string(line_no) +
                  ": expected sense_id TAB definition");
      generated[line.substr(0, tab)] = line.substr(tab + 1);
    }
  }

  Rng rng(cfg.ratings_seed);
  const std::vector<RatingItem> items = make_rating_items(
      targets, cfg.ratings_n, pool, rng, generated_path.empty() ? nullptr : &generated);

  const fs::path dir = make_out_dir(out);
  json m = new_manifest("ratings", cfg);
  note_input(m, "corpus", corpus_path);
  if (!pool_path.empty()) note_input(m, "pool", pool_path);
  if (!generated_path.empty()) note_input(m, "generated", generated_path);
  write_output(dir, "sheet.tsv", format_rating_sheet(items), m);
  write_output(dir, "key.tsv", format_rating_key(items), m);
  finish_run(dir, m);

  int64_t n_generated = 0;
  for (const RatingItem& it : items) n_generated += it.generated ? 1 : 0;
  std::cout << "ratings: " << items.size() << " items (" << n_generated << " generated)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Flag plumbing. Flags overwrite config fields only when actually given, so
// the precedence is: built-in default < config file < flag.

struct TrainFlags {
  std::string corpus, out, init;
  int64_t batch = 0, epochs = 0;
  double lr = 0;
  uint64_t seed = 0;
  int64_t d_model = 0, n_heads = 0, enc_layers = 0, dec_layers = 0, d_ff = 0, max_len = 0;
  double dropout = 0;
};

void add_train_flags(CLI::App* sub, TrainFlags& f, bool warm_start) {
  sub->add_option("--corpus", f.corpus, "sense corpus TSV")->required();
  sub->add_option("--out", f.out, "output directory")->required();
  if (warm_start)
    sub->add_option("--init", f.init, "checkpoint to resume from (fixes the architecture)");
  sub->add_option("--batch", f.batch, "batch size");
  sub->add_option("--epochs", f.epochs, "training epochs");
  sub->add_option("--lr", f.lr, "peak learning rate (decays linearly to 0)");
  sub->add_option("--seed", f.seed, "training rng seed");
  sub->add_option("--d-model", f.d_model, "model width");
  sub->add_option("--n-heads", f.n_heads, "attention heads");
  sub->add_option("--enc-layers", f.enc_layers, "encoder layers");
  sub->add_option("--dec-layers", f.dec_layers, "decoder layers");
  sub->add_option("--d-ff", f.d_ff, "feed-forward width");
  sub->add_option("--max-len", f.max_len, "position table length");
  sub->add_option("--dropout", f.dropout, "dropout rate");
}

void merge_train_flags(CLI::App* sub, const TrainFlags& f, TrainConfig& tc, ModelConfig& mc) {
  if (sub->count("--batch")) tc.batch_size = f.batch;
  if (sub->count("--epochs")) tc.epochs = f.epochs;
  if (sub->count("--lr")) tc.lr = f.lr;
  if (sub->count("--seed")) tc.seed = f.seed;
  if (sub->count("--d-model")) mc.d_model = f.d_model;
  if (sub->count("--n-heads")) mc.n_heads = f.n_heads;
  if (sub->count("--enc-layers")) mc.n_enc_layers = f.enc_layers;
  if (sub->count("--dec-layers")) mc.n_dec_layers = f.dec_layers;
  if (sub->count("--d-ff")) mc.d_ff = f.d_ff;
  if (sub->count("--max-len")) mc.max_len = f.max_len;
  if (sub->count("--dropout")) mc.dropout = f.dropout;
  if (!f.init.empty()) {
    static constexpr const char* kModelFlags[] = {"--d-model",    "--n-heads", "--enc-layers",
                                                  "--dec-layers", "--d-ff",    "--max-len",
                                                  "--dropout"};
    for (const char* name : kModelFlags)
      require(sub->count(name) == 0, Errc::config_error,
              std::string(name) + " cannot be combined with --init; the checkpoint fixes "
                                  "the architecture");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"definition-modeling pipeline: corpus synthesis, two-stage training, "
               "generation, scoring, and dependency analysis"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string simd = "auto";
  app.add_option("--config", config_path, "run configuration file");
  app.add_option("--simd", simd, "kernel backend: auto, scalar, or avx2")
      ->check(CLI::IsMember({"auto", "scalar", "avx2"}));

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic sense corpus");
  std::string synth_out;
  uint64_t synth_seed = 0, synth_split_seed = 0;
  int64_t synth_n = 0, synth_max_examples = 0;
  double synth_split = 0;
  std::string synth_register;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_seed, "corpus rng seed");
  synth->add_option("--n", synth_n, "number of senses");
  synth->add_option("--register", synth_register, "register mark source: derived or random")
      ->check(CLI::IsMember({"derived", "random"}));
  synth->add_option("--max-examples", synth_max_examples, "examples per sense, at most");
  synth->add_option("--split", synth_split, "held-out eval fraction (also writes train/eval)");
  synth->add_option("--split-seed", synth_split_seed, "split rng seed");

  // denoise / finetune
  auto* denoise = app.add_subcommand("denoise", "stage-1 training on corrupted glosses");
  TrainFlags denoise_f;
  add_train_flags(denoise, denoise_f, /*warm_start=*/false);
  auto* finetune = app.add_subcommand("finetune", "stage-2 training through the pooled vector");
  TrainFlags finetune_f;
  add_train_flags(finetune, finetune_f, /*warm_start=*/true);

  // generate
  auto* generate = app.add_subcommand("generate", "define the marked word in a sentence");
  std::string gen_ckpt, gen_sentence, gen_out;
  int64_t gen_max_new = 0;
  generate->add_option("--ckpt", gen_ckpt, "model checkpoint")->required();
  generate->add_option("--sentence", gen_sentence, "sentence with the target word in 〈〉")
      ->required();
  generate->add_option("--out", gen_out, "output directory")->required();
  generate->add_option("--max-new", gen_max_new, "generation length cap");

  // eval
  auto* eval = app.add_subcommand("eval", "generate and score definitions for a corpus");
  std::string eval_ckpt, eval_corpus, eval_out;
  int64_t eval_max_new = 0;
  eval->add_option("--ckpt", eval_ckpt, "model checkpoint")->required();
  eval->add_option("--corpus", eval_corpus, "sense corpus TSV")->required();
  eval->add_option("--out", eval_out, "output directory")->required();
  eval->add_option("--max-new", eval_max_new, "generation length cap");

  // deps
  auto* deps = app.add_subcommand("deps", "per-POS dependency table");
  std::string deps_ckpt, deps_corpus, deps_out, deps_pooling;
  uint64_t deps_seed = 0;
  deps->add_option("--ckpt", deps_ckpt, "model checkpoint")->required();
  deps->add_option("--corpus", deps_corpus, "sense corpus TSV")->required();
  deps->add_option("--out", deps_out, "output directory")->required();
  deps->add_option("--seed", deps_seed, "replacement sampling seed");
  deps->add_option("--pooling", deps_pooling, "sense vector pooling")
      ->check(CLI::IsMember({"multi_example", "first_example"}));

  // chunks
  auto* chunks = app.add_subcommand("chunks", "dependency table by annotated chunk type");
  std::string chunks_ckpt, chunks_corpus, chunks_annotations, chunks_out, chunks_pooling;
  uint64_t chunks_seed = 0;
  int64_t chunks_min_count = 0;
  chunks->add_option("--ckpt", chunks_ckpt, "model checkpoint")->required();
  chunks->add_option("--corpus", chunks_corpus, "sense corpus TSV")->required();
  chunks->add_option("--annotations", chunks_annotations, "chunk annotations TSV")->required();
  chunks->add_option("--out", chunks_out, "output directory")->required();
  chunks->add_option("--seed", chunks_seed, "replacement sampling seed");
  chunks->add_option("--min-count", chunks_min_count, "smallest reportable type, in tokens");
  chunks->add_option("--pooling", chunks_pooling, "sense vector pooling")
      ->check(CLI::IsMember({"multi_example", "first_example"}));

  // ratings
  auto* ratings = app.add_subcommand("ratings", "multiple-choice rating sheets");
  std::string ratings_corpus, ratings_pool, ratings_generated, ratings_out;
  int64_t ratings_n = 0;
  uint64_t ratings_seed = 0;
  ratings->add_option("--corpus", ratings_corpus, "target senses TSV")->required();
  ratings->add_option("--out", ratings_out, "output directory")->required();
  ratings->add_option("--n", ratings_n, "number of items");
  ratings->add_option("--seed", ratings_seed, "item sampling seed");
  ratings->add_option("--pool", ratings_pool, "distractor senses TSV (default: --corpus)");
  ratings->add_option("--generated", ratings_generated,
                      "model definitions, one sense_id TAB definition per line");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::cerr << "usage_error: " << e.what() << "\n";
    return 2;
  }

  try {
    RunConfig cfg = load_run_config(config_path);
    if (simd == "scalar") kern::force_backend(kern::Backend::scalar);
    if (simd == "avx2") kern::force_backend(kern::Backend::avx2);

    if (synth->parsed()) {
      if (synth->count("--seed")) cfg.synth.seed = synth_seed;
      if (synth->count("--n")) cfg.synth.n_senses = synth_n;
      if (synth->count("--register"))
        cfg.synth.register_mode = synth_register == "derived"
                                      ? SynthSpec::RegisterMode::derived
                                      : SynthSpec::RegisterMode::random;
      if (synth->count("--max-examples")) cfg.synth.max_examples = synth_max_examples;
      if (synth->count("--split")) cfg.synth_split = synth_split;
      if (synth->count("--split-seed")) cfg.split_seed = synth_split_seed;
      return run_synth(cfg, synth_out);
    }
    if (denoise->parsed()) {
      merge_train_flags(denoise, denoise_f, cfg.denoise, cfg.model);
      return run_train(cfg, Stage::denoise, denoise_f.corpus, denoise_f.out, "");
    }
    if (finetune->parsed()) {
      merge_train_flags(finetune, finetune_f, cfg.finetune, cfg.model);
      return run_train(cfg, Stage::finetune, finetune_f.corpus, finetune_f.out,
                       finetune_f.init);
    }
    if (generate->parsed()) {
      if (generate->count("--max-new")) cfg.eval_max_new = gen_max_new;
      return run_generate(cfg, gen_ckpt, gen_sentence, gen_out, cfg.eval_max_new);
    }
    if (eval->parsed()) {
      if (eval->count("--max-new")) cfg.eval_max_new = eval_max_new;
      return run_eval(cfg, eval_ckpt, eval_corpus, eval_out);
    }
    if (deps->parsed()) {
      if (deps->count("--seed")) cfg.deps_seed = deps_seed;
      if (deps->count("--pooling")) cfg.deps_pooling = to_pooling(deps_pooling, "--pooling");
      return run_deps(cfg, deps_ckpt, deps_corpus, deps_out);
    }
    if (chunks->parsed()) {
      if (chunks->count("--seed")) cfg.chunks.seed = chunks_seed;
      if (chunks->count("--min-count")) cfg.chunks.min_count = chunks_min_count;
      if (chunks->count("--pooling"))
        cfg.chunks.pooling = to_pooling(chunks_pooling, "--pooling");
      return run_chunks(cfg, chunks_ckpt, chunks_corpus, chunks_annotations, chunks_out);
    }
    if (ratings->parsed()) {
      if (ratings->count("--n")) cfg.ratings_n = ratings_n;
      if (ratings->count("--seed")) cfg.ratings_seed = ratings_seed;
      return run_ratings(cfg, ratings_corpus, ratings_pool, ratings_generated, ratings_out);
    }
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal_error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
