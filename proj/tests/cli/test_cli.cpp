// End-to-end tests that drive the installed CLI binary as a subprocess.
// PIXELLM_CLI_PATH is injected by CMake as the built executable path.

#include <sys/wait.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "pixellm/manifest.hpp"
#include "pixellm/util.hpp"
#include "test_support.hpp"

using namespace pixellm;
namespace fs = std::filesystem;

namespace {

std::string shq(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  out += "'";
  return out;
}

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string read_or_empty(const std::string& path) {
  if (!fs::exists(path)) return "";
  return read_file(path);
}

// Runs the CLI with cwd set to `dir`, capturing exit code and both streams.
CliResult run_cli(const std::string& dir,
                  const std::vector<std::string>& args) {
  std::string out_f = dir + "/.stdout";
  std::string err_f = dir + "/.stderr";
  std::string cmd = "cd " + shq(dir) + " && " + shq(PIXELLM_CLI_PATH);
  for (const auto& a : args) cmd += " " + shq(a);
  cmd += " > " + shq(out_f) + " 2> " + shq(err_f);
  int rc = std::system(cmd.c_str());
  CliResult r;
  if (rc != -1 && WIFEXITED(rc)) r.code = WEXITSTATUS(rc);
  r.out = read_or_empty(out_f);
  r.err = read_or_empty(err_f);
  return r;
}

void write_tiny_corpus(const std::string& path) {
  std::string text;
  const char* lines[] = {
      "the cat sat on the mat",
      "a dog ran in the park",
      "the bird flew over the tree",
      "a fish swam in the lake",
      "the sun rose over the hill",
      "a child played near the door",
      "the cook made bread and soup",
      "a farmer fed the old horse",
      "the rain fell on the roof",
      "a boat sailed across the bay",
      "the moon shone on the field",
      "a fox hid under the fence",
  };
  for (const char* l : lines) {
    text += l;
    text += '\n';
  }
  write_file(path, text);
}

// CSV rows keyed by (model, noise_p string) -> ppl field.
std::string csv_field(const std::string& csv, const std::string& model,
                      const std::string& p, int field) {
  for (const auto& line : split(csv, '\n')) {
    std::vector<std::string> cols = split(line, ',');
    if (cols.size() > static_cast<size_t>(field) && cols[0] == model &&
        cols[2] == p) {
      return cols[static_cast<size_t>(field)];
    }
  }
  return "";
}

std::vector<std::string> model_opts() {
  return {"--set", "hidden_size=16",     "--set", "num_layers=1",
          "--set", "num_heads=2",        "--set", "intermediate_size=32",
          "--set", "max_positions=32"};
}

std::vector<std::string> cat(std::vector<std::string> a,
                             const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Shared pipeline artifacts built once: tokenizer, atlas, one pixel and one
// token checkpoint over the tiny corpus.
struct Pipeline {
  testsup::TempDir dir{"cli-pipe"};
  std::string corpus;
  std::string tokenizer;
  std::string atlas;
  std::string pm;
  std::string lm;

  Pipeline() {
    const std::string d = dir.str();
    corpus = dir.file("tiny.txt");
    tokenizer = dir.file("tok.txt");
    atlas = dir.file("atlas.bin");
    pm = dir.file("pm.ckpt");
    lm = dir.file("lm.ckpt");
    write_tiny_corpus(corpus);

    CliResult r = run_cli(d, {"tokenizer-train", "--corpus", "tiny.txt",
                              "--vocab-size", "280", "--out", "tok.txt"});
    REQUIRE(r.code == 0);
    r = run_cli(d, {"atlas-build", "--vocab", "tok.txt", "--out", "atlas.bin"});
    REQUIRE(r.code == 0);

    std::vector<std::string> train = {
        "pretrain",    "--corpus", "tiny.txt", "--tokenizer", "tok.txt",
        "--steps",     "3",        "--batch-size", "2",       "--seq-len",
        "16",          "--seed",   "9"};
    r = run_cli(d, cat(cat(train, model_opts()),
                       {"--mode", "pixel", "--atlas", "atlas.bin", "--out",
                        "pm.ckpt"}));
    REQUIRE(r.code == 0);
    r = run_cli(d, cat(cat(train, model_opts()),
                       {"--mode", "token", "--out", "lm.ckpt"}));
    REQUIRE(r.code == 0);
  }
};

Pipeline& pipeline() {
  static Pipeline p;
  return p;
}

}  // namespace

TEST_CASE("version flag prints the tool version and exits zero") {
  testsup::TempDir tmp("cli");
  CliResult r = run_cli(tmp.str(), {"--version"});
  CHECK(r.code == 0);
  CHECK(r.out.find("1.0.0") != std::string::npos);
}

TEST_CASE("missing subcommand and unknown flags exit with usage errors") {
  testsup::TempDir tmp("cli");

  CliResult r = run_cli(tmp.str(), {});
  CHECK(r.code == 2);
  CHECK(r.err.find("error:") != std::string::npos);

  r = run_cli(tmp.str(), {"render", "--text", "hi", "--out", "x.pgm",
                           "--frobnicate"});
  CHECK(r.code == 2);
  CHECK(r.err.find("error:") != std::string::npos);
  CHECK(r.err.find("--help") != std::string::npos);

  r = run_cli(tmp.str(), {"frobnicate"});
  CHECK(r.code == 2);
}

TEST_CASE("render writes a valid PGM plus a manifest that reproduces") {
  testsup::TempDir a("cli-a");
  testsup::TempDir b("cli-b");
  std::vector<std::string> args = {"render", "--text", "hello", "--out",
                                   "word.pgm", "--seed", "4"};

  CliResult ra = run_cli(a.str(), args);
  REQUIRE(ra.code == 0);
  CHECK(ra.out.find("image: 50x20") != std::string::npos);

  std::string img = read_file(a.str() + "/word.pgm");
  const std::string header = "P5\n50 20\n255\n";
  REQUIRE(img.size() == header.size() + 20 * 50);
  CHECK(img.compare(0, header.size(), header) == 0);

  RunManifest ma = RunManifest::read(a.str() + "/word.pgm.manifest.json");
  CHECK(ma.command == "render");
  CHECK(ma.seed == 4);
  CHECK(ma.config.at("text") == "hello");
  CHECK(ma.tool_version == "1.0.0");

  // Same invocation elsewhere: identical bytes, identical repro key.
  CliResult rb = run_cli(b.str(), args);
  REQUIRE(rb.code == 0);
  CHECK(read_file(b.str() + "/word.pgm") == img);
  RunManifest mb = RunManifest::read(b.str() + "/word.pgm.manifest.json");
  CHECK(mb.repro_key() == ma.repro_key());
}

TEST_CASE("render emits PNG when the extension asks for it") {
  testsup::TempDir tmp("cli");
  CliResult r = run_cli(tmp.str(), {"render", "--text", "png please",
                                     "--out", "word.png"});
  REQUIRE(r.code == 0);
  std::string img = read_file(tmp.str() + "/word.png");
  const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  REQUIRE(img.size() > 8);
  CHECK(std::memcmp(img.data(), sig, 8) == 0);
}

TEST_CASE("pretrain produces checkpoint, loss curve, and manifest") {
  Pipeline& pl = pipeline();
  CHECK(fs::exists(pl.pm));
  CHECK(fs::exists(pl.lm));

  std::string curve = read_file(pl.pm + ".loss.csv");
  std::vector<std::string> lines = split(curve, '\n');
  REQUIRE(lines.size() >= 4);  // header + 3 steps (+ trailing empty)
  CHECK(lines[0] == "step,loss");
  CHECK(lines[1].rfind("1,", 0) == 0);
  CHECK(lines[3].rfind("3,", 0) == 0);

  RunManifest m = RunManifest::read(pl.pm + ".manifest.json");
  CHECK(m.command == "pretrain");
  CHECK(m.config.at("hidden_size") == "16");
  CHECK(m.config.at("steps") == "3");
  CHECK(m.config.at("embedding_mode") == "pixel");
  CHECK(m.input_digests.count(pl.corpus) + m.input_digests.count("tiny.txt") ==
        1);
}

TEST_CASE("pretrain in pixel mode refuses to run without an atlas") {
  Pipeline& pl = pipeline();
  CliResult r = run_cli(pl.dir.str(),
                        cat({"pretrain", "--corpus", "tiny.txt", "--tokenizer",
                             "tok.txt", "--steps", "1", "--mode", "pixel",
                             "--out", "none.ckpt"},
                            model_opts()));
  CHECK(r.code == 1);
  CHECK(r.err.find("pixel mode requires --atlas") != std::string::npos);
}

// Evaluation batches must fit the tiny model's positions.
std::vector<std::string> eval_dims() {
  return {"--set", "sequence_length=16", "--set", "batch_size=2"};
}

TEST_CASE("eval-ppl writes the metrics CSV and is run-to-run identical") {
  Pipeline& pl = pipeline();
  std::vector<std::string> args =
      cat({"eval-ppl", "--model", "pm.ckpt", "--corpus", "tiny.txt",
           "--tokenizer", "tok.txt", "--atlas", "atlas.bin", "--out",
           "eval.csv"},
          eval_dims());
  CliResult r = run_cli(pl.dir.str(), args);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("ppl=") != std::string::npos);
  CHECK(r.out.find("tokens=") != std::string::npos);

  std::string csv = read_file(pl.dir.str() + "/eval.csv");
  std::vector<std::string> lines = split(csv, '\n');
  REQUIRE(lines.size() >= 3);
  CHECK(lines[0] == "model,corpus,noise_p,ppl,acc,prec,rec,tokens,seed");
  CHECK(lines[1].rfind("# ", 0) == 0);
  CHECK(lines[2].rfind("pm,tiny,0,", 0) == 0);

  CliResult r2 = run_cli(
      pl.dir.str(),
      cat({"eval-ppl", "--model", "pm.ckpt", "--corpus", "tiny.txt",
           "--tokenizer", "tok.txt", "--atlas", "atlas.bin", "--out",
           "eval2.csv"},
          eval_dims()));
  REQUIRE(r2.code == 0);
  CHECK(read_file(pl.dir.str() + "/eval2.csv") == csv);
}

TEST_CASE("eval-ppl fails cleanly on an empty corpus") {
  Pipeline& pl = pipeline();
  write_file(pl.dir.str() + "/empty.txt", "\n\n");
  CliResult r = run_cli(pl.dir.str(),
                        {"eval-ppl", "--model", "lm.ckpt", "--corpus",
                         "empty.txt", "--tokenizer", "tok.txt"});
  CHECK(r.code == 1);
  CHECK(r.err.find("empty corpus") != std::string::npos);
  CHECK(r.err.find("empty.txt") != std::string::npos);
}

TEST_CASE("eval-ppl rejects an atlas whose render config differs") {
  Pipeline& pl = pipeline();
  CliResult r = run_cli(pl.dir.str(),
                        {"atlas-build", "--vocab", "tok.txt", "--set",
                         "basic_font_size=9", "--out", "atlas9.bin"});
  REQUIRE(r.code == 0);
  r = run_cli(pl.dir.str(),
              {"eval-ppl", "--model", "pm.ckpt", "--corpus", "tiny.txt",
               "--tokenizer", "tok.txt", "--atlas", "atlas9.bin"});
  CHECK(r.code == 1);
  CHECK(r.err.find("atlas does not match checkpoint") != std::string::npos);
}

TEST_CASE("noise-sweep covers every model and level and matches eval-ppl") {
  Pipeline& pl = pipeline();
  CliResult r = run_cli(pl.dir.str(),
                        cat({"noise-sweep", "--models", "pm.ckpt,lm.ckpt",
                             "--corpus", "tiny.txt", "--tokenizer", "tok.txt",
                             "--atlas", "atlas.bin", "--levels", "0,0.5",
                             "--out", "sweep"},
                            eval_dims()));
  REQUIRE(r.code == 0);

  std::string csv = read_file(pl.dir.str() + "/sweep/noise_sweep.csv");
  CHECK(csv.find("cell failed") == std::string::npos);
  for (const char* model : {"pm", "lm"}) {
    for (const char* p : {"0", "0.5"}) {
      CAPTURE(model);
      CAPTURE(p);
      std::string ppl = csv_field(csv, model, p, 3);
      CHECK(ppl != "");
      CHECK(ppl != "nan");
    }
  }
  CHECK(fs::exists(pl.dir.str() + "/sweep/ppl_vs_p.pgm"));
  CHECK(fs::exists(pl.dir.str() + "/sweep/ppl_vs_p.png"));
  CHECK(fs::exists(pl.dir.str() + "/sweep/manifest.json"));

  // p=0 in fixed-tokenization mode is plain perplexity, so the CSV field
  // matches eval-ppl's output exactly.
  std::string eval_csv = read_or_empty(pl.dir.str() + "/eval.csv");
  if (!eval_csv.empty()) {
    CHECK(csv_field(csv, "pm", "0", 3) == csv_field(eval_csv, "pm", "0", 3));
  }
}

TEST_CASE("finetune trains a head, leaves the backbone untouched") {
  Pipeline& pl = pipeline();
  const std::string d = pl.dir.str();
  std::string train_tsv;
  std::string eval_tsv;
  const char* pos[] = {"the meal was great", "a fine day indeed",
                       "what a great show", "the trip was fine"};
  const char* neg[] = {"the meal was awful", "a bad day indeed",
                       "what an awful show", "the trip was bad"};
  for (int i = 0; i < 4; ++i) {
    train_tsv += "1\t" + std::string(pos[i]) + "\n";
    train_tsv += "0\t" + std::string(neg[i]) + "\n";
  }
  eval_tsv = "1\tthe show was great\n0\tthe show was awful\n";
  write_file(d + "/sent_train.tsv", train_tsv);
  write_file(d + "/sent_eval.tsv", eval_tsv);

  CliResult r = run_cli(d, {"finetune", "--model", "lm.ckpt", "--train",
                            "sent_train.tsv", "--eval", "sent_eval.tsv",
                            "--tokenizer", "tok.txt", "--out", "ft"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("accuracy=") != std::string::npos);
  CHECK(r.out.find("unchanged") != std::string::npos);

  std::string head = read_file(d + "/ft/head.txt");
  CHECK(head.rfind("PXHEAD1\n", 0) == 0);
  CHECK(head.find("hidden 16") != std::string::npos);
  std::string csv = read_file(d + "/ft/metrics.csv");
  CHECK(csv.rfind("model,corpus,noise_p,ppl,acc,prec,rec,tokens,seed", 0) ==
        0);

  // Noisy eval exercises the corruption path end to end.
  r = run_cli(d, {"finetune", "--model", "pm.ckpt", "--train",
                  "sent_train.tsv", "--eval", "sent_eval.tsv", "--tokenizer",
                  "tok.txt", "--atlas", "atlas.bin", "--eval-noise-p", "0.3",
                  "--out", "ftn"});
  REQUIRE(r.code == 0);
  RunManifest m = RunManifest::read(d + "/ftn/manifest.json");
  CHECK(m.config.at("eval_noise_p") == "0.3");
}

TEST_CASE("compare runs the whole A/B pipeline into one directory") {
  testsup::TempDir tmp("cli");
  write_tiny_corpus(tmp.str() + "/tiny.txt");
  CliResult r = run_cli(tmp.str(),
                        cat({"compare", "--corpus", "tiny.txt", "--levels",
                             "0,0.5", "--steps", "4", "--set",
                             "batch_size=2", "--set", "sequence_length=16",
                             "--seed", "6", "--out", "cmp"},
                            model_opts()));
  REQUIRE(r.code == 0);
  CHECK(r.out.find("[5/5]") != std::string::npos);

  for (const char* f : {"tokenizer.txt", "atlas.bin", "pm.ckpt", "lm.ckpt",
                        "pm.ckpt.loss.csv", "lm.ckpt.loss.csv", "compare.csv",
                        "ppl_vs_p.pgm", "ppl_vs_p.png", "manifest.json"}) {
    CAPTURE(f);
    CHECK(fs::exists(tmp.str() + "/cmp/" + f));
  }

  std::string csv = read_file(tmp.str() + "/cmp/compare.csv");
  for (const char* model : {"pm", "lm"}) {
    for (const char* p : {"0", "0.5"}) {
      CAPTURE(model);
      CAPTURE(p);
      CHECK(csv_field(csv, model, p, 3) != "");
    }
  }

  RunManifest m = RunManifest::read(tmp.str() + "/cmp/manifest.json");
  CHECK(m.command == "compare");
  CHECK(m.config.at("embedding_mode") == "both");
  CHECK(m.seed == 6);
}

TEST_CASE("malformed --set values exit with a config error") {
  testsup::TempDir tmp("cli");
  CliResult r = run_cli(tmp.str(), {"render", "--text", "x", "--out",
                                     "x.pgm", "--set", "oops"});
  CHECK(r.code == 1);
  CHECK(r.err.find("expected key=value") != std::string::npos);
}
