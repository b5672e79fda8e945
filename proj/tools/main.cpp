// pixellm: single executable exposing the end-to-end workflows.
//
// Exit codes: 0 success, 1 runtime failure (missing/invalid inputs),
// 2 usage errors (unknown flags, bad arguments). Errors are single-line
// "error: ..." messages on stderr. Every run writes exactly one manifest
// next to its outputs.

#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pixellm/atlas.hpp"
#include "pixellm/bpe.hpp"
#include "pixellm/corpus.hpp"
#include "pixellm/image_io.hpp"
#include "pixellm/manifest.hpp"
#include "pixellm/model.hpp"
#include "pixellm/noise.hpp"
#include "pixellm/render.hpp"
#include "pixellm/train.hpp"
#include "pixellm/util.hpp"

namespace fs = std::filesystem;
using namespace pixellm;

namespace {

// Reference results from the full-scale experiments this toolkit mirrors;
// recorded as annotations only, never reproduced at desk scale.
const char* kPplReference =
    "full-scale reference (not reproduced at this scale): multilingual "
    "reading-benchmark perplexity (en) LM 269 vs PM 138";
const char* kNoiseReference =
    "full-scale reference (not reproduced at this scale): perplexity from "
    "p=0 to p=0.5 rises LM 269 -> 79457 (x295) vs PM 139 -> 485 (x3.49)";

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

std::string path_stem(const std::string& p) {
  std::string stem = fs::path(p).stem().string();
  return stem.empty() ? p : stem;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create directory: " + dir);
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

// Flags shared by every subcommand.
struct Common {
  std::string config_file;
  std::string preset;
  std::vector<std::string> sets;
  uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;

  bool seed_given() const { return seed_opt && seed_opt->count() > 0; }
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_file,
                  "flat key=value config file (flags override file keys)");
  sub->add_option("--preset", c.preset,
                  "named config bundle: desk (default scale) or paper "
                  "(full-scale values, not runnable on a desk machine)")
      ->check(CLI::IsMember({"desk", "paper"}));
  sub->add_option("--set", c.sets, "override one config key as key=value")
      ->take_all();
  c.seed_opt =
      sub->add_option("--seed", c.seed, "base seed for every random stream");
}

void apply_preset(KeyValueConfig& kv, const std::string& name) {
  if (name.empty()) return;
  auto put = [&kv](const char* k, const char* v) { kv.set(k, v); };
  if (name == "desk") {
    put("vocab_size", "512");
    put("hidden_size", "128");
    put("num_layers", "4");
    put("num_heads", "4");
    put("intermediate_size", "344");
    put("max_positions", "256");
    put("steps", "2000");
    put("batch_size", "16");
    put("sequence_length", "64");
    put("learning_rate", "0.0003");
  } else if (name == "paper") {
    put("vocab_size", "32001");
    put("hidden_size", "768");
    put("num_layers", "12");
    put("num_heads", "12");
    put("intermediate_size", "2048");
    put("max_positions", "2048");
    put("rmsnorm_eps", "1e-05");
    put("basic_font_size", "10");
    put("image_height", "20");
    put("image_width", "50");
    put("channels", "1");
    put("steps", "100000");
    put("sequence_length", "2048");
  } else {
    throw ConfigError("unknown preset: " + name);
  }
}

// Explicit keys only (preset, then file, then --set); struct defaults fill
// the rest when each module parses the map.
KeyValueConfig build_kv(const Common& c, std::vector<std::string>* inputs) {
  KeyValueConfig kv;
  apply_preset(kv, c.preset);
  if (!c.config_file.empty()) {
    KeyValueConfig file = KeyValueConfig::load(c.config_file);
    for (const auto& [k, v] : file.values()) kv.set(k, v);
    if (inputs) inputs->push_back(c.config_file);
  }
  for (const auto& s : c.sets) {
    KeyValueConfig one = KeyValueConfig::parse(s);
    if (one.values().empty()) {
      throw ConfigError("--set expects key=value, got '" + s + "'");
    }
    for (const auto& [k, v] : one.values()) kv.set(k, v);
  }
  return kv;
}

// --seed (or the `seed` config key) feeds model_seed and train_seed unless
// those are set explicitly.
uint64_t resolve_seed(const Common& c, KeyValueConfig& kv) {
  uint64_t s = c.seed_given()
                   ? c.seed
                   : static_cast<uint64_t>(kv.get_int("seed", 0));
  kv.set("seed", std::to_string(s));
  if (!kv.has("model_seed")) kv.set("model_seed", std::to_string(s));
  if (!kv.has("train_seed")) kv.set("train_seed", std::to_string(s));
  return s;
}

RunManifest make_manifest(const std::string& command,
                          const std::vector<std::string>& args,
                          const KeyValueConfig& resolved, uint64_t seed,
                          const std::vector<std::string>& input_paths) {
  RunManifest m;
  m.command = command;
  m.args = args;
  m.config = resolved.values();
  m.seed = seed;
  for (const auto& p : input_paths) m.add_input(p);
  m.tool_version = kVersion;
  m.timestamp = now_timestamp_utc();
  return m;
}

std::vector<std::string> load_docs(const std::string& path) {
  std::vector<std::string> docs;
  for (auto& line : read_lines(path)) {
    if (!line.empty()) docs.push_back(std::move(line));
  }
  if (docs.empty()) throw InputError("empty corpus: " + path);
  return docs;
}

std::vector<double> parse_levels(const std::string& csv) {
  std::vector<double> out;
  for (const auto& part : split(csv, ',')) {
    if (part.empty()) continue;
    size_t pos = 0;
    double v = 0;
    try {
      v = std::stod(part, &pos);
    } catch (const std::exception&) {
      throw ConfigError("invalid noise level: '" + part + "'");
    }
    if (pos != part.size()) throw ConfigError("invalid noise level: '" + part + "'");
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("noise level out of [0,1]: " + part);
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("no noise levels given");
  return out;
}

NoiseDictionary load_dict(const std::string& path,
                          std::vector<std::string>* inputs) {
  if (path.empty()) return NoiseDictionary::bundled();
  if (inputs) inputs->push_back(path);
  return NoiseDictionary::load(path);
}

void write_ppl_plot(const MetricsReport& report,
                    const std::vector<std::string>& names,
                    const std::string& base_path) {
  static const float kShades[] = {1.0f, 0.55f, 0.8f, 0.35f, 0.65f, 0.45f};
  std::vector<PlotSeries> series;
  for (size_t i = 0; i < names.size(); ++i) {
    PlotSeries s;
    s.label = names[i];
    s.shade = kShades[i % 6];
    for (const auto& r : report.records) {
      if (r.model == names[i] && !r.failed) {
        s.x.push_back(r.noise_p);
        s.y.push_back(r.ppl);
      }
    }
    if (!s.x.empty()) series.push_back(std::move(s));
  }
  if (series.empty()) return;
  GlyphImage img = render_line_plot(series, 640, 400, /*log_y=*/true);
  write_pgm(img, base_path + ".pgm");
  write_png(img, base_path + ".png");
}

std::vector<std::string> texts_of(const std::vector<LabeledExample>& v) {
  std::vector<std::string> t;
  t.reserve(v.size());
  for (const auto& e : v) t.push_back(e.text);
  return t;
}

std::vector<int> labels_of(const std::vector<LabeledExample>& v) {
  std::vector<int> l;
  l.reserve(v.size());
  for (const auto& e : v) l.push_back(e.label);
  return l;
}

std::vector<LabeledExample> load_labeled(const std::string& path) {
  std::vector<LabeledExample> ex = parse_labeled_lines(read_lines(path));
  if (ex.empty()) throw InputError("empty labeled corpus: " + path);
  return ex;
}

// ---------------------------------------------------------------------------
// tokenizer-train

struct TokenizerTrainOpts {
  Common c;
  std::vector<std::string> corpus;
  std::string out;
  int vocab_size = 512;
  CLI::Option* vocab_opt = nullptr;
};

void run_tokenizer_train(const TokenizerTrainOpts& o,
                         const std::vector<std::string>& args) {
  std::vector<std::string> inputs;
  KeyValueConfig kv = build_kv(o.c, &inputs);
  uint64_t seed = resolve_seed(o.c, kv);
  if (o.vocab_opt->count()) kv.set("vocab_size", std::to_string(o.vocab_size));
  int target = static_cast<int>(kv.get_int("vocab_size", 512));

  std::vector<std::string> docs;
  for (const auto& f : o.corpus) {
    std::vector<std::string> d = load_docs(f);
    docs.insert(docs.end(), d.begin(), d.end());
    inputs.push_back(f);
  }
  BpeVocab vocab = train_bpe(docs, target);
  save_bpe(vocab, o.out);
  if (vocab.size() < target) {
    std::cout << "tokenizer: merge supply exhausted at " << vocab.size()
              << " pieces (target " << target << ")\n";
  }
  std::cout << "tokenizer: " << vocab.size() << " pieces -> " << o.out << "\n";

  KeyValueConfig snap = kv;
  snap.set("vocab_size", std::to_string(target));
  make_manifest("tokenizer-train", args, snap, seed, inputs)
      .write(o.out + ".manifest.json");
}

// ---------------------------------------------------------------------------
// atlas-build

struct AtlasBuildOpts {
  Common c;
  std::string vocab_file;
  std::string out;
  std::string font;
  CLI::Option* font_opt = nullptr;
};

void run_atlas_build(const AtlasBuildOpts& o,
                     const std::vector<std::string>& args) {
  std::vector<std::string> inputs;
  KeyValueConfig kv = build_kv(o.c, &inputs);
  uint64_t seed = resolve_seed(o.c, kv);
  if (o.font_opt->count()) kv.set("font_file", o.font);
  RenderConfig rc = RenderConfig::from_config(kv);
  rc.validate();

  BpeVocab vocab = load_bpe(o.vocab_file);
  inputs.push_back(o.vocab_file);
  if (!rc.font_file.empty()) inputs.push_back(rc.font_file);

  std::vector<std::string> surfaces(static_cast<size_t>(vocab.size()));
  for (int id = 0; id < vocab.size(); ++id) {
    surfaces[static_cast<size_t>(id)] = surface(vocab, id);
  }
  VocabAtlas atlas = VocabAtlas::build(surfaces, rc);
  atlas.persist(o.out);
  std::cout << "atlas: " << atlas.vocab_size() << " rows of "
            << atlas.image_height() << "x" << atlas.image_width() << " -> "
            << o.out << "\n";

  KeyValueConfig snap = kv;
  rc.to_config(snap);
  make_manifest("atlas-build", args, snap, seed, inputs)
      .write(o.out + ".manifest.json");
}

// ---------------------------------------------------------------------------
// render

struct RenderOpts {
  Common c;
  std::string text;
  std::string out;
  std::string font;
  CLI::Option* font_opt = nullptr;
};

void run_render(const RenderOpts& o, const std::vector<std::string>& args) {
  std::vector<std::string> inputs;
  KeyValueConfig kv = build_kv(o.c, &inputs);
  uint64_t seed = resolve_seed(o.c, kv);
  if (o.font_opt->count()) kv.set("font_file", o.font);
  RenderConfig rc = RenderConfig::from_config(kv);
  rc.validate();
  if (!rc.font_file.empty()) inputs.push_back(rc.font_file);

  GlyphImage img = render_word(o.text, rc);
  write_image(img, o.out);
  std::cout << "image: " << img.width << "x" << img.height << " -> " << o.out
            << "\n";

  KeyValueConfig snap = kv;
  rc.to_config(snap);
  snap.set("text", o.text);
  make_manifest("render", args, snap, seed, inputs)
      .write(o.out + ".manifest.json");
}

// ---------------------------------------------------------------------------
// pretrain

struct PretrainOpts {
  Common c;
  std::string corpus;
  std::string tokenizer;
  std::string atlas;
  std::string mode = "pixel";
  std::string out;
  int steps = 0;
  int batch_size = 0;
  int seq_len = 0;
  double lr = 0;
  int checkpoint_every = 0;
  CLI::Option* steps_opt = nullptr;
  CLI::Option* batch_opt = nullptr;
  CLI::Option* seq_opt = nullptr;
  CLI::Option* lr_opt = nullptr;
  CLI::Option* ckpt_opt = nullptr;
};

ProgressFn console_progress(const std::string& tag, int total) {
  return [tag, total](int step, double loss, double lr) {
    std::cout << tag << "step " << step << "/" << total << " loss "
              << format_double(loss) << " lr " << format_double(lr) << "\n"
              << std::flush;
  };
}

void run_pretrain(const PretrainOpts& o, const std::vector<std::string>& args) {
  std::vector<std::string> inputs;
  KeyValueConfig kv = build_kv(o.c, &inputs);
  uint64_t seed = resolve_seed(o.c, kv);
  if (o.steps_opt->count()) kv.set("steps", std::to_string(o.steps));
  if (o.batch_opt->count()) kv.set("batch_size", std::to_string(o.batch_size));
  if (o.seq_opt->count()) kv.set("sequence_length", std::to_string(o.seq_len));
  if (o.lr_opt->count()) kv.set("learning_rate", format_double(o.lr));
  if (o.ckpt_opt->count()) {
    kv.set("checkpoint_every", std::to_string(o.checkpoint_every));
  }
  kv.set("embedding_mode", o.mode);

  BpeVocab vocab = load_bpe(o.tokenizer);
  inputs.push_back(o.tokenizer);
  std::vector<std::string> docs = load_docs(o.corpus);
  inputs.push_back(o.corpus);

  ModelConfig mc = ModelConfig::from_config(kv);
  TrainConfig tc = TrainConfig::from_config(kv);
  // The model vocabulary tracks the tokenizer; a vocab_size key only sets
  // the tokenizer-training target.
  if (mc.vocab_size != vocab.size()) {
    std::cout << "note: model vocab_size follows the tokenizer ("
              << vocab.size() << " pieces)\n";
    mc.vocab_size = vocab.size();
  }

  std::optional<VocabAtlas> atlas;
  if (mc.embedding_mode == EmbeddingMode::pixel) {
    if (o.atlas.empty()) throw ConfigError("pixel mode requires --atlas");
    atlas = VocabAtlas::restore(o.atlas);
    inputs.push_back(o.atlas);
  }

  std::string ckpt_dir;
  if (tc.checkpoint_every > 0) {
    ckpt_dir = o.out + ".steps";
    ensure_dir(ckpt_dir);
  }

  PretrainResult res =
      pretrain(mc, tc, vocab, atlas ? &*atlas : nullptr, docs,
               console_progress("", tc.steps), ckpt_dir);
  const std::array<uint8_t, 32>* hash = atlas ? &atlas->config_hash() : nullptr;
  save_checkpoint(o.out, mc, res.params, hash);

  std::string curve = "step,loss\n";
  for (size_t i = 0; i < res.loss_curve.size(); ++i) {
    curve += std::to_string(i + 1) + "," +
             format_double(res.loss_curve[i]) + "\n";
  }
  write_file(o.out + ".loss.csv", curve);
  std::cout << "final loss " << format_double(res.loss_curve.back()) << "\n";
  std::cout << "checkpoint -> " << o.out << "\n";

  KeyValueConfig snap = kv;
  mc.to_config(snap);
  tc.to_config(snap);
  make_manifest("pretrain", args, snap, seed, inputs)
      .write(o.out + ".manifest.json");
}

// ---------------------------------------------------------------------------
// eval-ppl

struct EvalPplOpts {
  Common c;
  std::string model;
  std::string corpus;
  std::string tokenizer;
  std::string atlas;
  std::string out = "eval_report.csv";
};

// Restores the atlas for a pixel-mode checkpoint and enforces the recorded
// pairing hash.
std::optional<VocabAtlas> atlas_for_checkpoint(const Checkpoint& ck,
                                               const std::string& atlas_path,
                                               std::vector<std::string>* inputs) {
  if (ck.config.embedding_mode != EmbeddingMode::pixel) return std::nullopt;
  if (atlas_path.empty()) {
    throw ConfigError("pixel-mode checkpoint requires --atlas");
  }
  std::optional<VocabAtlas> atlas = VocabAtlas::restore(atlas_path);
  if (inputs) inputs->push_back(atlas_path);
  if (ck.has_atlas_hash && atlas->config_hash() != ck.atlas_hash) {
    throw ConsistencyError(
        "atlas does not match checkpoint: render config hash differs");
  }
  return atlas;
}

void run_eval_ppl(const EvalPplOpts& o, const std::vector<std::string>& args) {
  std::vector<std::string> inputs;
  KeyValueConfig kv = build_kv(o.c, &inputs);
  uint64_t seed = resolve_seed(o.c, kv);

  Checkpoint ck = load_checkpoint(o.model);
  inputs.push_back(o.model);
  BpeVocab vocab = load_bpe(o.tokenizer);
  inputs.push_back(o.tokenizer);
  std::vector<std::string> docs = load_docs(o.corpus);
  inputs.push_back(o.corpus);
  std::optional<VocabAtlas> atlas = atlas_for_checkpoint(ck, o.atlas, &inputs);

  TrainConfig tc = TrainConfig::from_config(kv);
  PerplexityResult r =
      perplexity(ck.config, ck.params, atlas ? &*atlas : nullptr, vocab, docs,
                 tc.batch_size, tc.sequence_length);
  std::cout << "ppl=" << format_double(r.ppl)
            << " mean_nll=" << format_double(r.mean_nll)
            << " tokens=" << r.tokens << "\n";

  MetricsReport rep;
  rep.annotations.push_back(kPplReference);
  rep.append({path_stem(o.model), path_stem(o.corpus), 0.0, r.ppl, std::nullopt,
              std::nullopt, std::nullopt, r.tokens, seed, false});
  write_file(o.out, rep.to_csv());
  std::cout << "report -> " << o.out << "\n";

  KeyValueConfig snap = kv;
  ck.config.to_config(snap);
  tc.to_config(snap);
  make_manifest("eval-ppl", args, snap, seed, inputs)
      .write(o.out + ".manifest.json");
}

// ---------------------------------------------------------------------------
// finetune

struct FinetuneOpts {
  Common c;
  std::string model;
  std::string train_file;
  std::string eval_file;
  std::string tokenizer;
  std::string atlas;
  std::string dict;
  std::string out;
  double eval_noise_p = 0;
  CLI::Option* noise_opt = nullptr;
};

std::string head_text(const ClassifierHead& head) {
  std::string out = "PXHEAD1\nhidden " + std::to_string(head.w.rows()) + "\n";
  for (Eigen::Index i = 0; i < head.w.rows(); ++i) {
    out += format_double(head.w(i, 0)) + " " + format_double(head.w(i, 1)) + "\n";
  }
  out += format_double(head.b(0)) + " " + format_double(head.b(1)) + "\n";
  return out;
}

void run_finetune(const FinetuneOpts& o, const std::vector<std::string>& args) {
  std::vector<std::string> inputs;
  KeyValueConfig kv = build_kv(o.c, &inputs);
  uint64_t seed = resolve_seed(o.c, kv);
  if (o.noise_opt->count()) kv.set("eval_noise_p", format_double(o.eval_noise_p));

  Checkpoint ck = load_checkpoint(o.model);
  inputs.push_back(o.model);
  BpeVocab vocab = load_bpe(o.tokenizer);
  inputs.push_back(o.tokenizer);
  std::vector<LabeledExample> train_ex = load_labeled(o.train_file);
  inputs.push_back(o.train_file);
  std::vector<LabeledExample> eval_ex = load_labeled(o.eval_file);
  inputs.push_back(o.eval_file);
  std::optional<VocabAtlas> atlas = atlas_for_checkpoint(ck, o.atlas, &inputs);
  const VocabAtlas* ap = atlas ? &*atlas : nullptr;

  std::string checksum_before = parameters_checksum(ck.params);

  HeadConfig hc;
  hc.steps = static_cast<int>(kv.get_int("head_steps", hc.steps));
  hc.learning_rate = kv.get_double("head_learning_rate", hc.learning_rate);
  hc.seed = seed;

  MatrixRMf train_features = classifier_features(ck.config, ck.params, ap,
                                                 vocab, texts_of(train_ex));
  HeadTrainResult tr = train_head(train_features, labels_of(train_ex), hc);
  if (tr.degenerate_training) {
    std::cerr << "warning: training labels are single-class; the head is "
                 "degenerate\n";
  }

  double p = kv.get_double("eval_noise_p", 0.0);
  MatrixRMf eval_features;
  if (p > 0) {
    NoiseDictionary dict = load_dict(o.dict, &inputs);
    RenderConfig rc = RenderConfig::from_config(kv);
    std::vector<Batch<float>> batches = noisy_classifier_inputs(
        ck.config, ap, vocab, rc, texts_of(eval_ex), dict, p,
        hash_combine(seed, "eval-noise"), ck.config.max_positions);
    eval_features = classifier_features_batches(ck.config, ck.params, ap, batches);
  } else {
    eval_features = classifier_features(ck.config, ck.params, ap, vocab,
                                        texts_of(eval_ex));
  }
  ClassifierMetrics m = evaluate_head(tr.head, eval_features, labels_of(eval_ex));

  std::string checksum_after = parameters_checksum(ck.params);
  if (checksum_after != checksum_before) {
    throw Error("backbone parameters changed during finetune");
  }
  std::cout << "accuracy=" << format_double(m.accuracy)
            << " precision=" << format_double(m.precision)
            << " recall=" << format_double(m.recall) << " count=" << m.count
            << (m.degenerate ? " degenerate=1" : "") << "\n";
  std::cout << "backbone checksum " << checksum_before.substr(0, 12)
            << " unchanged\n";

  ensure_dir(o.out);
  write_file(join_path(o.out, "head.txt"), head_text(tr.head));

  MetricsReport rep;
  if (tr.degenerate_training) {
    rep.annotations.push_back("single-class training set: head is degenerate");
  }
  if (m.degenerate) {
    rep.annotations.push_back("degenerate eval metrics (0/0 conventions applied)");
  }
  rep.append({path_stem(o.model), path_stem(o.eval_file), p, NAN, m.accuracy,
              m.precision, m.recall, m.count, seed, false});
  write_file(join_path(o.out, "metrics.csv"), rep.to_csv());
  std::cout << "head -> " << join_path(o.out, "head.txt") << "\n";
  std::cout << "metrics -> " << join_path(o.out, "metrics.csv") << "\n";

  KeyValueConfig snap = kv;
  ck.config.to_config(snap);
  snap.set("head_steps", std::to_string(hc.steps));
  snap.set("head_learning_rate", format_double(hc.learning_rate));
  snap.set("eval_noise_p", format_double(p));
  make_manifest("finetune", args, snap, seed, inputs)
      .write(join_path(o.out, "manifest.json"));
}

// ---------------------------------------------------------------------------
// noise-sweep

struct NoiseSweepOpts {
  Common c;
  std::string models;
  std::string corpus;
  std::string tokenizer;
  std::string atlas;
  std::string dict;
  std::string levels = "0,0.1,0.2,0.3,0.4,0.5";
  std::string out;
  bool retokenize = false;
};

void print_report_rows(const MetricsReport& rep) {
  for (const auto& r : rep.records) {
    std::cout << "model=" << r.model << " p=" << format_double(r.noise_p);
    if (r.failed) {
      std::cout << " failed\n";
    } else {
      std::cout << " ppl=" << format_double(r.ppl) << " tokens=" << r.tokens
                << "\n";
    }
  }
}

void run_noise_sweep(const NoiseSweepOpts& o,
                     const std::vector<std::string>& args) {
  std::vector<std::string> inputs;
  KeyValueConfig kv = build_kv(o.c, &inputs);
  uint64_t seed = resolve_seed(o.c, kv);

  BpeVocab vocab = load_bpe(o.tokenizer);
  inputs.push_back(o.tokenizer);
  std::vector<std::string> docs = load_docs(o.corpus);
  inputs.push_back(o.corpus);
  std::vector<double> levels = parse_levels(o.levels);
  NoiseDictionary dict = load_dict(o.dict, &inputs);
  RenderConfig rc = RenderConfig::from_config(kv);
  TrainConfig tc = TrainConfig::from_config(kv);

  std::vector<std::string> model_paths;
  for (const auto& p : split(o.models, ',')) {
    if (!p.empty()) model_paths.push_back(p);
  }
  if (model_paths.empty()) throw ConfigError("--models lists no checkpoints");

  std::deque<Checkpoint> checkpoints;
  std::optional<VocabAtlas> atlas;
  std::vector<SweepModel> models;
  std::vector<std::string> names;
  for (const auto& path : model_paths) {
    checkpoints.push_back(load_checkpoint(path));
    Checkpoint& ck = checkpoints.back();
    inputs.push_back(path);
    const VocabAtlas* ap = nullptr;
    if (ck.config.embedding_mode == EmbeddingMode::pixel) {
      if (!atlas) {
        if (o.atlas.empty()) {
          throw ConfigError("pixel-mode checkpoint requires --atlas");
        }
        atlas = VocabAtlas::restore(o.atlas);
        inputs.push_back(o.atlas);
      }
      if (ck.has_atlas_hash && atlas->config_hash() != ck.atlas_hash) {
        throw ConsistencyError(
            "atlas does not match checkpoint: render config hash differs");
      }
      ap = &*atlas;
    }
    std::string name = path_stem(path);
    while (std::count(names.begin(), names.end(), name) > 0) name += "_2";
    names.push_back(name);
    models.push_back({name, ck.config, &ck.params, ap});
  }

  MetricsReport rep = robustness_sweep(models, path_stem(o.corpus), docs,
                                       levels, dict, vocab, rc, seed,
                                       tc.batch_size, tc.sequence_length,
                                       o.retokenize);
  rep.annotations.insert(rep.annotations.begin(), kNoiseReference);
  print_report_rows(rep);

  ensure_dir(o.out);
  write_file(join_path(o.out, "noise_sweep.csv"), rep.to_csv());
  write_ppl_plot(rep, names, join_path(o.out, "ppl_vs_p"));
  std::cout << "report -> " << join_path(o.out, "noise_sweep.csv") << "\n";

  KeyValueConfig snap = kv;
  rc.to_config(snap);
  tc.to_config(snap);
  snap.set("levels", o.levels);
  snap.set("retokenize", o.retokenize ? "true" : "false");
  make_manifest("noise-sweep", args, snap, seed, inputs)
      .write(join_path(o.out, "manifest.json"));
}

// ---------------------------------------------------------------------------
// compare

struct CompareOpts {
  Common c;
  std::string corpus;
  std::string dict;
  std::string levels = "0,0.1,0.2,0.3,0.4,0.5";
  std::string out = "compare_report";
  int steps = 0;
  CLI::Option* steps_opt = nullptr;
};

void run_compare(const CompareOpts& o, const std::vector<std::string>& args) {
  std::vector<std::string> inputs;
  KeyValueConfig kv = build_kv(o.c, &inputs);
  uint64_t seed = resolve_seed(o.c, kv);
  if (o.steps_opt->count()) kv.set("steps", std::to_string(o.steps));
  ensure_dir(o.out);

  std::vector<std::string> docs;
  std::string corpus_name;
  if (o.corpus.empty()) {
    docs = bundled_smoke_corpus();
    corpus_name = "smoke";
  } else {
    docs = load_docs(o.corpus);
    corpus_name = path_stem(o.corpus);
    inputs.push_back(o.corpus);
  }
  std::vector<double> levels = parse_levels(o.levels);
  NoiseDictionary dict = load_dict(o.dict, &inputs);
  RenderConfig rc = RenderConfig::from_config(kv);
  rc.validate();
  if (!rc.font_file.empty()) inputs.push_back(rc.font_file);

  int target_vocab = static_cast<int>(kv.get_int("vocab_size", 512));
  std::cout << "[1/5] tokenizer (" << docs.size() << " docs, target "
            << target_vocab << " pieces)\n";
  BpeVocab vocab = train_bpe(docs, target_vocab);
  save_bpe(vocab, join_path(o.out, "tokenizer.txt"));
  std::cout << "tokenizer: " << vocab.size() << " pieces\n";

  std::cout << "[2/5] atlas\n";
  std::vector<std::string> surfaces(static_cast<size_t>(vocab.size()));
  for (int id = 0; id < vocab.size(); ++id) {
    surfaces[static_cast<size_t>(id)] = surface(vocab, id);
  }
  VocabAtlas atlas = VocabAtlas::build(surfaces, rc);
  atlas.persist(join_path(o.out, "atlas.bin"));

  ModelConfig mc = ModelConfig::from_config(kv);
  mc.vocab_size = vocab.size();
  TrainConfig tc = TrainConfig::from_config(kv);
  std::array<uint8_t, 32> atlas_hash = atlas.config_hash();

  auto save_run = [&](const char* name, ModelConfig cfg, EmbeddingMode mode,
                      const VocabAtlas* ap) {
    cfg.embedding_mode = mode;
    PretrainResult res = pretrain(cfg, tc, vocab, ap, docs,
                                  console_progress(std::string(name) + " ",
                                                   tc.steps));
    std::string path = join_path(o.out, std::string(name) + ".ckpt");
    save_checkpoint(path, cfg, res.params,
                    mode == EmbeddingMode::pixel ? &atlas_hash : nullptr);
    std::string curve = "step,loss\n";
    for (size_t i = 0; i < res.loss_curve.size(); ++i) {
      curve += std::to_string(i + 1) + "," +
               format_double(res.loss_curve[i]) + "\n";
    }
    write_file(path + ".loss.csv", curve);
    return std::make_pair(cfg, std::move(res.params));
  };

  std::cout << "[3/5] pretrain pixel model (" << tc.steps << " steps)\n";
  auto [pm_cfg, pm_params] = save_run("pm", mc, EmbeddingMode::pixel, &atlas);
  std::cout << "[4/5] pretrain token baseline (" << tc.steps << " steps)\n";
  auto [lm_cfg, lm_params] = save_run("lm", mc, EmbeddingMode::token, nullptr);

  std::cout << "[5/5] noise sweep (" << levels.size() << " levels)\n";
  std::vector<SweepModel> models = {{"pm", pm_cfg, &pm_params, &atlas},
                                    {"lm", lm_cfg, &lm_params, nullptr}};
  MetricsReport rep =
      robustness_sweep(models, corpus_name, docs, levels, dict, vocab, rc,
                       seed, tc.batch_size, tc.sequence_length, false);
  rep.annotations.insert(rep.annotations.begin(), kNoiseReference);
  print_report_rows(rep);

  write_file(join_path(o.out, "compare.csv"), rep.to_csv());
  write_ppl_plot(rep, {"pm", "lm"}, join_path(o.out, "ppl_vs_p"));

  // Growth summary across the sweep range for each model.
  for (const std::string& name : {std::string("pm"), std::string("lm")}) {
    const MetricsRecord* lo = nullptr;
    const MetricsRecord* hi = nullptr;
    for (const auto& r : rep.records) {
      if (r.model != name || r.failed) continue;
      if (!lo || r.noise_p < lo->noise_p) lo = &r;
      if (!hi || r.noise_p > hi->noise_p) hi = &r;
    }
    if (lo && hi && lo != hi && lo->ppl > 0) {
      std::cout << name << ": ppl " << format_double(lo->ppl) << " -> "
                << format_double(hi->ppl) << " (x"
                << format_double(hi->ppl / lo->ppl) << ")\n";
    }
  }
  std::cout << "report -> " << join_path(o.out, "compare.csv") << "\n";

  KeyValueConfig snap = kv;
  mc.to_config(snap);
  tc.to_config(snap);
  rc.to_config(snap);
  snap.set("embedding_mode", "both");
  snap.set("levels", o.levels);
  snap.set("corpus_name", corpus_name);
  make_manifest("compare", args, snap, seed, inputs)
      .write(join_path(o.out, "manifest.json"));
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);

  CLI::App app{"pixel language model toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  TokenizerTrainOpts tok;
  CLI::App* tok_sub = app.add_subcommand(
      "tokenizer-train", "train a byte-level BPE tokenizer");
  add_common(tok_sub, tok.c);
  tok_sub->add_option("--corpus", tok.corpus, "corpus file(s), one doc per line")
      ->required()
      ->take_all();
  tok.vocab_opt =
      tok_sub->add_option("--vocab-size", tok.vocab_size, "target piece count");
  tok_sub->add_option("--out", tok.out, "output tokenizer file")->required();

  AtlasBuildOpts ab;
  CLI::App* ab_sub = app.add_subcommand(
      "atlas-build", "pre-render every vocabulary token into an atlas");
  add_common(ab_sub, ab.c);
  ab_sub->add_option("--vocab", ab.vocab_file, "tokenizer file")->required();
  ab.font_opt = ab_sub->add_option("--font", ab.font,
                                   "TTF font file (default: embedded font)");
  ab_sub->add_option("--out", ab.out, "output atlas file")->required();

  RenderOpts rd;
  CLI::App* rd_sub =
      app.add_subcommand("render", "render a string to an image file");
  add_common(rd_sub, rd.c);
  rd_sub->add_option("--text", rd.text, "text to render")->required();
  rd.font_opt = rd_sub->add_option("--font", rd.font,
                                   "TTF font file (default: embedded font)");
  rd_sub->add_option("--out", rd.out, "output image (.pgm or .png)")->required();

  PretrainOpts pt;
  CLI::App* pt_sub = app.add_subcommand(
      "pretrain", "next-token pretraining (pixel or token embeddings)");
  add_common(pt_sub, pt.c);
  pt_sub->add_option("--corpus", pt.corpus, "training corpus")->required();
  pt_sub->add_option("--tokenizer", pt.tokenizer, "tokenizer file")->required();
  pt_sub->add_option("--atlas", pt.atlas, "atlas file (pixel mode)");
  pt_sub->add_option("--mode", pt.mode, "embedding mode: pixel|token")
      ->check(CLI::IsMember({"pixel", "token"}));
  pt_sub->add_option("--out", pt.out, "output checkpoint")->required();
  pt.steps_opt = pt_sub->add_option("--steps", pt.steps, "training steps");
  pt.batch_opt = pt_sub->add_option("--batch-size", pt.batch_size, "batch size");
  pt.seq_opt = pt_sub->add_option("--seq-len", pt.seq_len, "sequence length");
  pt.lr_opt = pt_sub->add_option("--lr", pt.lr, "peak learning rate");
  pt.ckpt_opt = pt_sub->add_option("--checkpoint-every", pt.checkpoint_every,
                                   "periodic checkpoint cadence (steps)");

  EvalPplOpts ev;
  CLI::App* ev_sub =
      app.add_subcommand("eval-ppl", "token-level perplexity on a corpus");
  add_common(ev_sub, ev.c);
  ev_sub->add_option("--model", ev.model, "model checkpoint")->required();
  ev_sub->add_option("--corpus", ev.corpus, "evaluation corpus")->required();
  ev_sub->add_option("--tokenizer", ev.tokenizer, "tokenizer file")->required();
  ev_sub->add_option("--atlas", ev.atlas, "atlas file (pixel mode)");
  ev_sub->add_option("--out", ev.out, "output CSV report");

  FinetuneOpts ft;
  CLI::App* ft_sub = app.add_subcommand(
      "finetune", "train a frozen-backbone classification head");
  add_common(ft_sub, ft.c);
  ft_sub->add_option("--model", ft.model, "model checkpoint")->required();
  ft_sub->add_option("--train", ft.train_file, "labeled training file")
      ->required();
  ft_sub->add_option("--eval", ft.eval_file, "labeled evaluation file")
      ->required();
  ft_sub->add_option("--tokenizer", ft.tokenizer, "tokenizer file")->required();
  ft_sub->add_option("--atlas", ft.atlas, "atlas file (pixel mode)");
  ft_sub->add_option("--dict", ft.dict, "noise dictionary (default: bundled)");
  ft.noise_opt = ft_sub->add_option("--eval-noise-p", ft.eval_noise_p,
                                    "character noise on eval inputs");
  ft_sub->add_option("--out", ft.out, "output directory")->required();

  NoiseSweepOpts ns;
  CLI::App* ns_sub = app.add_subcommand(
      "noise-sweep", "perplexity under character noise at several levels");
  add_common(ns_sub, ns.c);
  ns_sub->add_option("--models", ns.models, "comma-separated checkpoints")
      ->required();
  ns_sub->add_option("--corpus", ns.corpus, "evaluation corpus")->required();
  ns_sub->add_option("--tokenizer", ns.tokenizer, "tokenizer file")->required();
  ns_sub->add_option("--atlas", ns.atlas, "atlas file (pixel models)");
  ns_sub->add_option("--dict", ns.dict, "noise dictionary (default: bundled)");
  ns_sub->add_option("--levels", ns.levels, "comma-separated noise levels");
  ns_sub->add_flag("--retokenize", ns.retokenize,
                   "re-tokenize corrupted text instead of fixed tokenization");
  ns_sub->add_option("--out", ns.out, "output directory")->required();

  CompareOpts cp;
  CLI::App* cp_sub = app.add_subcommand(
      "compare", "full A/B pipeline: train both modes, sweep noise, report");
  add_common(cp_sub, cp.c);
  cp_sub->add_option("--corpus", cp.corpus,
                     "training corpus (default: bundled smoke corpus)");
  cp_sub->add_option("--dict", cp.dict, "noise dictionary (default: bundled)");
  cp_sub->add_option("--levels", cp.levels, "comma-separated noise levels");
  cp.steps_opt = cp_sub->add_option("--steps", cp.steps, "training steps");
  cp_sub->add_option("--out", cp.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    CLI::App* scope = &app;
    std::vector<CLI::App*> parsed = app.get_subcommands();
    if (parsed.size() == 1) scope = parsed[0];
    std::cerr << scope->help();
    return 2;
  }

  try {
    if (app.got_subcommand(tok_sub)) run_tokenizer_train(tok, args);
    else if (app.got_subcommand(ab_sub)) run_atlas_build(ab, args);
    else if (app.got_subcommand(rd_sub)) run_render(rd, args);
    else if (app.got_subcommand(pt_sub)) run_pretrain(pt, args);
    else if (app.got_subcommand(ev_sub)) run_eval_ppl(ev, args);
    else if (app.got_subcommand(ft_sub)) run_finetune(ft, args);
    else if (app.got_subcommand(ns_sub)) run_noise_sweep(ns, args);
    else if (app.got_subcommand(cp_sub)) run_compare(cp, args);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
}
