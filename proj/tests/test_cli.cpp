// End-to-end tests of the glossgen binary. Every subcommand runs as a real
// process (path from GLOSSGEN_BIN); outputs are byte-compared across runs
// and, where a table has a library-side constructor, against the same
// computation done in-process. The test binary links the same core library,
// so those comparisons are exact.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "gloss/analysis.hpp"
#include "gloss/checkpoint.hpp"
#include "gloss/corpus.hpp"
#include "gloss/kernels.hpp"
#include "gloss/pipeline.hpp"
#include "json.hpp"
#include "testutil.hpp"

using namespace gloss;
using doctest::Contains;
using json = nlohmann::json;
namespace fs = std::filesystem;
using testutil::TempDir;

namespace {

struct BackendGuard {
  ~BackendGuard() { kern::reset_backend(); }
};

std::string cli_bin() {
  const char* bin = std::getenv("GLOSSGEN_BIN");
  if (!bin || !*bin) fail(Errc::io_error, "GLOSSGEN_BIN is not set; run through ctest");
  return bin;
}

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

// Runs the binary with the given argument string, capturing both streams.
RunResult run_cli(const TempDir& tmp, const std::string& args) {
  static int call = 0;
  const std::string out_path = tmp.file("cli_out_" + std::to_string(call));
  const std::string err_path = tmp.file("cli_err_" + std::to_string(call));
  ++call;
  const std::string cmd =
      "'" + cli_bin() + "' " + args + " >'" + out_path + "' 2>'" + err_path + "'";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = (status >= 0 && WIFEXITED(status)) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out_path);
  r.err = read_file(err_path);
  return r;
}

RunResult run_ok(const TempDir& tmp, const std::string& args) {
  const RunResult r = run_cli(tmp, args);
  INFO("args: ", args, "\nstdout: ", r.out, "\nstderr: ", r.err);
  REQUIRE(r.code == 0);
  CHECK(r.err.empty());
  return r;
}

bool same_bytes(const std::string& a, const std::string& b) {
  return read_file(a) == read_file(b);
}

json load_manifest(const std::string& dir) {
  return json::parse(read_file(dir + "/manifest.json"));
}

// stderr contract: exactly one line, "<class>: <detail>".
void check_error_line(const RunResult& r, int code, const std::string& needle) {
  INFO("stderr: ", r.err);
  CHECK(r.code == code);
  CHECK(r.err.find(needle) != std::string::npos);
  REQUIRE(!r.err.empty());
  CHECK(r.err.back() == '\n');
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
}

}  // namespace

TEST_CASE("synth runs are byte-identical and library-parseable") {
  TempDir tmp("glosscli-synth");
  const std::string a = tmp.file("a"), b = tmp.file("b"), c = tmp.file("c");

  const RunResult r1 = run_ok(tmp, "synth --out " + a + " --seed 7 --n 30 --max-examples 3");
  CHECK(r1.out == "synth: 30 senses -> " + a + "\n");
  run_ok(tmp, "synth --out " + b + " --seed 7 --n 30 --max-examples 3");
  for (const char* f : {"senses.tsv", "annotations.tsv", "manifest.json"})
    CHECK(same_bytes(a + "/" + f, b + "/" + f));

  // A different seed is a different corpus.
  run_ok(tmp, "synth --out " + c + " --seed 8 --n 30 --max-examples 3");
  CHECK(!same_bytes(a + "/senses.tsv", c + "/senses.tsv"));

  // The files parse back through the library loaders.
  const std::vector<Sense> senses = load_senses(a + "/senses.tsv");
  REQUIRE(senses.size() == 30);
  const auto annotations = load_annotations(a + "/annotations.tsv", senses);
  CHECK(annotations.size() == 30);

  // Manifest: correct command, output hashes for every file, and no paths
  // (runs into different directories must stay byte-identical).
  const json m = load_manifest(a);
  CHECK(m.at("command") == "synth");
  CHECK(m.at("config").at("synth.seed") == 7);
  CHECK(m.at("config").at("synth.n_senses") == 30);
  CHECK(m.at("inputs").empty());
  CHECK(m.at("outputs").contains("senses.tsv"));
  CHECK(m.at("outputs").at("senses.tsv") == to_hex(hash_file(a + "/senses.tsv")));
  CHECK(read_file(a + "/manifest.json").find(tmp.path()) == std::string::npos);

  // Split mode writes an exact-count partition alongside the full corpus.
  const std::string d = tmp.file("d");
  const RunResult r4 =
      run_ok(tmp, "synth --out " + d + " --seed 7 --n 30 --max-examples 3 --split 0.2");
  CHECK(r4.out.find("split: 24 train / 6 eval\n") != std::string::npos);
  CHECK(same_bytes(a + "/senses.tsv", d + "/senses.tsv"));
  const auto train = load_senses(d + "/train.tsv");
  const auto eval = load_senses(d + "/eval.tsv");
  REQUIRE(train.size() == 24);
  REQUIRE(eval.size() == 6);
  std::vector<std::string> ids;
  for (const Sense& s : train) ids.push_back(s.sense_id);
  for (const Sense& s : eval) ids.push_back(s.sense_id);
  std::sort(ids.begin(), ids.end());
  std::vector<std::string> all_ids;
  for (const Sense& s : senses) all_ids.push_back(s.sense_id);
  std::sort(all_ids.begin(), all_ids.end());
  CHECK(ids == all_ids);
}

TEST_CASE("the full pipeline runs through the binary") {
  BackendGuard guard;
  kern::force_backend(kern::Backend::scalar);  // in-process mirror of --simd scalar

  TempDir tmp("glosscli-pipe");
  const std::string corpus = tmp.file("corpus");
  run_ok(tmp, "synth --out " + corpus + " --seed 33 --n 4 --max-examples 3");
  const std::string senses_tsv = corpus + "/senses.tsv";
  const std::vector<Sense> senses = load_senses(senses_tsv);
  REQUIRE(senses.size() == 4);

  const std::string tiny_model =
      "--d-model 32 --d-ff 64 --n-heads 2 --max-len 32 --dropout 0";

  // Stage 1. The log has one row per optimizer step and the checkpoint
  // carries the training provenance.
  const std::string dn = tmp.file("dn");
  run_ok(tmp, "--simd scalar denoise --corpus " + senses_tsv + " --out " + dn +
                  " --epochs 5 --lr 2e-3 --batch 4 --seed 10 " + tiny_model);
  {
    const auto log = split_lines(read_file(dn + "/train_log.tsv"));
    REQUIRE(log.size() == 6);  // header + 5 epochs x 1 batch of 4
    CHECK(log[0] == "step\tepoch\tlr\tloss");
    const LoadedCheckpoint ck = load_checkpoint(dn + "/model.ckpt");
    CHECK(ck.meta.seed == 10);
    CHECK(ck.meta.epochs == 5);
    CHECK(ck.meta.corpus_hash == hash_file(senses_tsv));
    CHECK(ck.model.cfg.d_model == 32);
    const json m = load_manifest(dn);
    CHECK(m.at("command") == "denoise");
    CHECK(m.at("inputs").at("corpus") == to_hex(hash_file(senses_tsv)));
  }

  // Warm start: the checkpoint fixes the architecture, epochs accumulate.
  const std::string warm = tmp.file("warm");
  run_ok(tmp, "--simd scalar finetune --corpus " + senses_tsv + " --out " + warm +
                  " --init " + dn + "/model.ckpt --epochs 3 --lr 1e-3 --batch 4 --seed 12");
  {
    const LoadedCheckpoint ck = load_checkpoint(warm + "/model.ckpt");
    CHECK(ck.meta.seed == 12);
    CHECK(ck.meta.epochs == 8);
    CHECK(ck.model.cfg.d_model == 32);
    CHECK(load_manifest(warm).at("inputs").contains("init"));
  }

  // Architecture flags cannot fight the checkpoint header.
  check_error_line(run_cli(tmp, "--simd scalar finetune --corpus " + senses_tsv + " --out " +
                                    tmp.file("bad") + " --init " + dn +
                                    "/model.ckpt --d-model 64"),
                   1, "config_error: --d-model cannot be combined with --init");

  // A corpus the checkpoint cannot spell is rejected before training.
  {
    std::vector<Sense> alien = senses;
    alien[0].gloss = "指龘的事。";
    const std::string alien_tsv = tmp.file("alien.tsv");
    write_file_atomic(alien_tsv, format_senses(alien));
    check_error_line(run_cli(tmp, "--simd scalar finetune --corpus " + alien_tsv + " --out " +
                                      tmp.file("bad2") + " --init " + dn + "/model.ckpt"),
                     1, "config_error: corpus contains characters outside the checkpoint "
                        "vocabulary (sense syn00000)");
  }

  // Stage 2 from scratch, long enough to memorize four senses.
  const std::string ft = tmp.file("ft");
  run_ok(tmp, "--simd scalar finetune --corpus " + senses_tsv + " --out " + ft +
                  " --epochs 200 --lr 3e-3 --batch 8 --seed 11 " + tiny_model);
  const std::string ckpt = ft + "/model.ckpt";
  {
    const auto log = split_lines(read_file(ft + "/train_log.tsv"));
    REQUIRE(log.size() == 201);  // 200 epochs x 1 batch of 8 pairs
    const auto last = split(log.back(), '\t');
    REQUIRE(last.size() == 4);
    CHECK(std::stod(last[3]) < 0.5);  // final batch loss after memorization
  }

  // Scoring: a memorized model reproduces its references.
  const std::string ev = tmp.file("ev");
  const RunResult re = run_ok(tmp, "--simd scalar eval --ckpt " + ckpt + " --corpus " +
                                       senses_tsv + " --out " + ev);
  CHECK(re.out.find("eval: 4 senses") != std::string::npos);
  {
    const auto lines = split_lines(read_file(ev + "/metrics.tsv"));
    REQUIRE(lines.size() >= 2);
    CHECK(lines[0] == "pos\tn_items\tbleu_mean\tbleu_se\tmeteor_mean\tmeteor_se");
    const auto all_row = split(lines.back(), '\t');
    REQUIRE(all_row.size() == 6);
    CHECK(all_row[0] == "ALL");
    CHECK(std::stod(all_row[2]) >= 0.95);  // overall BLEU on the training set
    CHECK(split_lines(read_file(ev + "/scores.tsv")).size() == 5);
    CHECK(fs::exists(ev + "/metrics_raw.tsv"));
  }

  // Evaluation is deterministic, byte for byte, manifest included.
  const std::string ev2 = tmp.file("ev2");
  run_ok(tmp, "--simd scalar eval --ckpt " + ckpt + " --corpus " + senses_tsv + " --out " + ev2);
  for (const char* f : {"metrics.tsv", "metrics_raw.tsv", "scores.tsv", "manifest.json"})
    CHECK(same_bytes(ev + "/" + f, ev2 + "/" + f));

  // Generation: the marked corpus sentence comes back as its reference
  // definition, POS label first, closed by the full-width period.
  const ExampleSpan& ex = senses[0].examples[0];
  const std::string marked = format_marked_sentence(ex.text, ex.start, ex.end);
  const std::string gen = tmp.file("gen");
  const RunResult rg = run_ok(tmp, "--simd scalar generate --ckpt " + ckpt + " --sentence '" +
                                       marked + "' --out " + gen);
  CHECK(rg.out == target_text(senses[0]) + "\n");
  CHECK(rg.out.rfind(senses[0].pos + "。", 0) == 0);
  CHECK(rg.out.find("。\n") == rg.out.size() - 4);
  CHECK(read_file(gen + "/generation.txt") == rg.out);
  {
    const json m = load_manifest(gen);
    CHECK(m.at("args").at("sentence") == marked);
    CHECK(m.at("inputs").contains("checkpoint"));
  }

  // A sentence without the mark fails before the checkpoint is even read.
  check_error_line(run_cli(tmp, "generate --ckpt " + tmp.file("nonexistent.ckpt") +
                                    " --sentence '沒有標記的句子。' --out " + tmp.file("g2")),
                   1, "parse_error");

  // Dependency tables: the binary's files equal the library's formatting of
  // the same computation, under the same backend.
  LoadedCheckpoint ck = load_checkpoint(ckpt);
  const std::string dp = tmp.file("dp");
  run_ok(tmp, "--simd scalar deps --ckpt " + ckpt + " --corpus " + senses_tsv + " --out " + dp +
                  " --seed 3");
  {
    const PosDependencyTable table = pos_dependency_table(ck.model, ck.tok, senses, 3);
    CHECK(read_file(dp + "/pos_deps.tsv") == format_pos_dependency_table(table));
    CHECK(read_file(dp + "/gloss_deps.tsv") == format_gloss_dependencies(table.glosses));
    const json m = load_manifest(dp);
    CHECK(m.at("warnings") == json(table.warnings));
  }

  const std::string chdir = tmp.file("ch");
  run_ok(tmp, "--simd scalar chunks --ckpt " + ckpt + " --corpus " + senses_tsv +
                  " --annotations " + corpus + "/annotations.tsv --out " + chdir +
                  " --seed 5 --min-count 1");
  {
    const auto annotations = load_annotations(corpus + "/annotations.tsv", senses);
    ChunkDependencyOptions opts;
    opts.seed = 5;
    opts.min_count = 1;
    const auto rows = chunk_dependency(ck.model, ck.tok, annotations, senses, opts);
    CHECK(read_file(chdir + "/chunk_deps.tsv") == format_type_dependency_rows(rows));
  }
}

TEST_CASE("rating sheets from the binary match the library") {
  TempDir tmp("glosscli-ratings");
  const std::string corpus = tmp.file("corpus");
  run_ok(tmp, "synth --out " + corpus + " --seed 71 --n 200");
  const std::vector<Sense> senses = load_senses(corpus + "/senses.tsv");

  const std::string rt = tmp.file("rt");
  const RunResult r = run_ok(tmp, "ratings --corpus " + corpus + "/senses.tsv --out " + rt +
                                      " --n 12 --seed 3");
  CHECK(r.out == "ratings: 12 items (0 generated)\n");
  {
    Rng rng(3);
    const auto items = make_rating_items(senses, 12, senses, rng, nullptr);
    CHECK(read_file(rt + "/sheet.tsv") == format_rating_sheet(items));
    CHECK(read_file(rt + "/key.tsv") == format_rating_key(items));
  }

  // Model outputs swap in as the displayed definitions, flagged as such.
  std::map<std::string, std::string> generated;
  std::string gen_file;
  for (const Sense& s : senses) generated[s.sense_id] = "假的定義。";
  for (const auto& [id, text] : generated) gen_file += id + "\t" + text + "\n";
  const std::string gen_path = tmp.file("gen.tsv");
  write_file_atomic(gen_path, gen_file);
  const std::string rtg = tmp.file("rtg");
  const RunResult rg = run_ok(tmp, "ratings --corpus " + corpus + "/senses.tsv --out " + rtg +
                                       " --n 12 --seed 3 --generated " + gen_path);
  CHECK(rg.out == "ratings: 12 items (12 generated)\n");
  {
    Rng rng(3);
    const auto items = make_rating_items(senses, 12, senses, rng, &generated);
    CHECK(read_file(rtg + "/sheet.tsv") == format_rating_sheet(items));
    CHECK(load_manifest(rtg).at("inputs").contains("generated"));
  }

  // Too few same-category distractors is an error, not a short sheet.
  const std::string small = tmp.file("small");
  run_ok(tmp, "synth --out " + small + " --seed 33 --n 4");
  check_error_line(run_cli(tmp, "ratings --corpus " + small + "/senses.tsv --out " +
                                    tmp.file("rtx") + " --n 4 --seed 3"),
                   1, "need 3 distractors");
}

TEST_CASE("config file fills defaults and flags override it") {
  TempDir tmp("glosscli-config");
  const std::string ini = tmp.file("run.ini");
  write_file_atomic(ini,
                    "# synth block plus one model knob to show up in the manifest\n"
                    "[synth]\n"
                    "seed = 9\n"
                    "n_senses = 6\n"
                    "max_examples = 2\n"
                    "\n"
                    "[model]\n"
                    "d_model = 96\n");

  const std::string a = tmp.file("a");
  run_ok(tmp, "--config " + ini + " synth --out " + a);
  CHECK(load_senses(a + "/senses.tsv").size() == 6);
  {
    const json m = load_manifest(a);
    CHECK(m.at("config").at("synth.seed") == 9);
    CHECK(m.at("config").at("model.d_model") == 96);
  }

  // The flag wins over the file; the resulting corpus equals a config-free
  // run with the same effective values.
  const std::string b = tmp.file("b"), c = tmp.file("c");
  run_ok(tmp, "--config " + ini + " synth --out " + b + " --seed 10");
  CHECK(load_manifest(b).at("config").at("synth.seed") == 10);
  CHECK(!same_bytes(a + "/senses.tsv", b + "/senses.tsv"));
  run_ok(tmp, "synth --out " + c + " --seed 10 --n 6 --max-examples 2");
  CHECK(same_bytes(b + "/senses.tsv", c + "/senses.tsv"));
  CHECK(same_bytes(b + "/annotations.tsv", c + "/annotations.tsv"));

  // Malformed configs die with the file, line, and offence named.
  const auto bad = [&](const std::string& body, const std::string& needle) {
    const std::string path = tmp.file("bad.ini");
    write_file_atomic(path, body);
    const std::string out = tmp.file("never");
    check_error_line(run_cli(tmp, "--config " + path + " synth --out " + out), 1, needle);
    CHECK(!fs::exists(out));
  };
  bad("[synth]\nbogus = 1\n", "config_error: " + tmp.file("bad.ini") +
                                  ":2: unknown key 'bogus' in [synth]");
  bad("[nope]\nx = 1\n", ":2: unknown section [nope]");
  bad("[synth]\nn_senses = soon\n", ":2: expected an integer, got 'soon'");
  bad("[synth]\npos_mix = 1,2,3\n", "pos_mix needs 4 comma-separated weights");
  bad("[synth]\nseed = -4\n", "expected a non-negative integer");
  bad("seed = 4\n", ":1: key before any [section]");
  bad("[synth\nseed = 4\n", ":1: unterminated section header");
  bad("[synth]\nregister = loud\n", "expected derived or random");
}

TEST_CASE("usage problems exit 2 and help exits 0") {
  TempDir tmp("glosscli-usage");

  RunResult r = run_cli(tmp, "");
  CHECK(r.code == 2);
  CHECK(r.err.rfind("usage_error: ", 0) == 0);

  r = run_cli(tmp, "synth");
  CHECK(r.code == 2);
  CHECK(r.err.find("--out") != std::string::npos);

  r = run_cli(tmp, "--simd turbo synth --out " + tmp.file("x"));
  CHECK(r.code == 2);
  CHECK(r.err.rfind("usage_error: ", 0) == 0);

  r = run_cli(tmp, "--help");
  CHECK(r.code == 0);
  for (const char* name : {"synth", "denoise", "finetune", "generate", "eval", "deps",
                           "chunks", "ratings"})
    CHECK(r.out.find(name) != std::string::npos);

  // Library failures keep the one-line class-prefixed shape.
  check_error_line(run_cli(tmp, "eval --ckpt " + tmp.file("missing.ckpt") + " --corpus " +
                                    tmp.file("missing.tsv") + " --out " + tmp.file("y")),
                   1, "io_error: ");
}
