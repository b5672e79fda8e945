#pragma once

#include <map>
#include <string>
#include <vector>

#include "pixellm/bpe.hpp"
#include "pixellm/render.hpp"
#include "pixellm/train.hpp"

namespace pixellm {

// Map from character to visually confusable single-scalar replacements.
// File format: one entry per line, `char<TAB>rep1,rep2,...`; empty lines and
// lines starting with '#' are ignored.
struct NoiseDictionary {
  std::map<uint32_t, std::vector<uint32_t>> entries;

  static NoiseDictionary parse(const std::string& text,
                               const std::string& origin);
  static NoiseDictionary load(const std::string& path);
  // The compiled-in homoglyph table.
  static const NoiseDictionary& bundled();

  bool has(uint32_t cp) const { return entries.count(cp) != 0; }
  size_t size() const { return entries.size(); }
};

struct NoiseSpec {
  double p = 0.0;
  uint64_t seed = 0;
  enum class Mode { fixed_tokenization, retokenize } mode =
      Mode::fixed_tokenization;
  void validate() const;
};

// Independently replaces each scalar with probability p by a uniform choice
// from its confusable list; unmapped characters pass through. Deterministic
// given the seed and length-preserving in scalar count. p=0 is the byte-level
// identity.
std::string corrupt(const std::string& text, const NoiseSpec& spec,
                    const NoiseDictionary& dict);

// Same draw sequence threaded through an external generator (used to corrupt
// a whole token stream under one seed).
std::string corrupt_with_rng(const std::string& text, double p,
                             const NoiseDictionary& dict, Rng& rng);

// Corrupts characters inside each surface; token boundaries and count are
// preserved. Surfaces that are not valid UTF-8 (byte-level merge fragments)
// pass through untouched.
std::vector<std::string> corrupt_tokens(const std::vector<std::string>& surfaces,
                                        const NoiseSpec& spec,
                                        const NoiseDictionary& dict);

// ---------------------------------------------------------------------------
// Pixel-space sentence similarity

enum class CosineLevel { raw_pixels, projected };

// Mean-pooled per-token cosine similarity. Both sentences are split by the
// fixed tokenization of sentence_a (matched scalar counts required). Vectors
// are flattened quantized renders (raw_pixels) or their projector outputs
// (projected; requires params). Identical inputs return exactly 1.0; a
// zero-norm pooled vector is an error.
double pixel_cosine(const std::string& sentence_a, const std::string& sentence_b,
                    const Parameters<float>* params, const BpeVocab& vocab,
                    const RenderConfig& render_cfg, CosineLevel level);

// ---------------------------------------------------------------------------
// Noisy evaluation

// Token-level perplexity under character noise at probability p.
//
// Fixed-tokenization mode (default): the clean tokenization is kept. The
// pixel model reads rendered corrupted surfaces (atlas rows when a surface is
// unchanged); the token baseline re-encodes each corrupted surface in place,
// scoring the clean next token id at the last piece of each group. At p=0
// both reduce exactly to plain perplexity.
//
// Retokenize mode corrupts the document text and evaluates the re-tokenized
// result directly (measured separately; not part of the robustness criteria).
PerplexityResult noisy_perplexity(const ModelConfig& cfg,
                                  Parameters<float>& params,
                                  const VocabAtlas* atlas,
                                  const BpeVocab& vocab,
                                  const RenderConfig& render_cfg,
                                  const std::vector<std::string>& docs,
                                  const NoiseDictionary& dict, double p,
                                  uint64_t seed, int batch_size, int seq_len,
                                  bool retokenize = false);

// Per-example classification inputs under fixed-tokenization noise, ready for
// classifier_features_batches.
std::vector<Batch<float>> noisy_classifier_inputs(
    const ModelConfig& cfg, const VocabAtlas* atlas, const BpeVocab& vocab,
    const RenderConfig& render_cfg, const std::vector<std::string>& texts,
    const NoiseDictionary& dict, double p, uint64_t seed, int max_positions);

// ---------------------------------------------------------------------------
// Robustness sweep

struct SweepModel {
  std::string name;
  ModelConfig config;
  Parameters<float>* params;
  const VocabAtlas* atlas;  // null for token mode
};

// Evaluates every model at every noise level (fixed-tokenization mode) with
// per-cell seeds hash(base_seed, model, p). Evaluation failures mark the cell
// failed and the sweep continues.
MetricsReport robustness_sweep(const std::vector<SweepModel>& models,
                               const std::string& corpus_name,
                               const std::vector<std::string>& docs,
                               const std::vector<double>& p_levels,
                               const NoiseDictionary& dict,
                               const BpeVocab& vocab,
                               const RenderConfig& render_cfg,
                               uint64_t base_seed, int batch_size, int seq_len,
                               bool retokenize = false);

uint64_t cell_seed(uint64_t base_seed, const std::string& model_name, double p);

// ---------------------------------------------------------------------------
// Plots

// Minimal line plot: one polyline per series over shared x values, rendered
// to a grayscale image (ink high). Used for perplexity-vs-p and
// accuracy-vs-p report images.
struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
  float shade = 0.0f;  // ink intensity for this series
};

GlyphImage render_line_plot(const std::vector<PlotSeries>& series, int width,
                            int height, bool log_y);

}  // namespace pixellm
