#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pixellm/bpe.hpp"
#include "pixellm/model.hpp"

namespace pixellm {

struct TrainConfig {
  int steps = 2000;
  int batch_size = 16;
  int sequence_length = 64;
  double learning_rate = 3e-4;
  double warmup_frac = 0.05;  // linear warmup then cosine decay to 0
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;  // decoupled, 2-D tensors only
  uint64_t seed = 0;
  int checkpoint_every = 0;  // 0 = final checkpoint only
  int log_every = 50;
  // > 0 ends training early once kStopPatience consecutive step losses fall
  // below the threshold; 0 disables. The loss curve stops at the final step.
  double stop_below = 0;

  static constexpr int kStopPatience = 10;

  int warmup_steps() const {
    return static_cast<int>(std::llround(warmup_frac * steps));
  }
  void validate() const;
  double lr_at(int step) const;  // step in [1, steps]

  static TrainConfig from_config(const KeyValueConfig& kv);
  void to_config(KeyValueConfig& kv) const;
};

// ---------------------------------------------------------------------------
// Token stream packing
//
// Documents are tokenized and joined with EOS separators into one stream.
// Windows are consecutive chunks of sequence_length inputs whose targets are
// the stream shifted by one; the tail window is padded with PAD and padded
// targets are masked.

std::vector<int> pack_corpus(const BpeVocab& vocab,
                             const std::vector<std::string>& docs);

struct PackedWindows {
  int seq_len = 0;
  int count = 0;
  std::vector<int> inputs;   // count * seq_len
  std::vector<int> targets;  // count * seq_len, -1 masked
};

PackedWindows make_windows(const std::vector<int>& stream, int seq_len);

// ---------------------------------------------------------------------------
// Optimizer

// Decoupled-weight-decay adaptive-moment optimizer state over a parameter set.
struct AdamW {
  Parameters<float> m, v;
  int64_t t = 0;

  void init(const ModelConfig& cfg) {
    m.allocate(cfg, /*zero=*/true);
    v.allocate(cfg, /*zero=*/true);
    t = 0;
  }
  // One update with learning rate lr; weight decay applies to 2-D tensors.
  void step(Parameters<float>& params, Parameters<float>& grads,
            const TrainConfig& cfg, double lr);
};

// ---------------------------------------------------------------------------
// Pretraining

using ProgressFn = std::function<void(int step, double loss, double lr)>;

struct PretrainResult {
  Parameters<float> params;
  std::vector<float> loss_curve;  // one entry per step
};

// Next-token pretraining over a packed corpus. Deterministic given the seed;
// aborts with a diagnostic if the loss stops being finite.
PretrainResult pretrain(const ModelConfig& model_config,
                        const TrainConfig& train_config, const BpeVocab& vocab,
                        const VocabAtlas* atlas,
                        const std::vector<std::string>& docs,
                        const ProgressFn& progress = nullptr,
                        const std::string& checkpoint_dir = "");

// Same pipeline with embedding_mode forced to token.
PretrainResult train_token_baseline(ModelConfig model_config,
                                    const TrainConfig& train_config,
                                    const BpeVocab& vocab,
                                    const std::vector<std::string>& docs,
                                    const ProgressFn& progress = nullptr);

// ---------------------------------------------------------------------------
// Perplexity

struct PerplexityResult {
  double ppl = 0;
  double mean_nll = 0;
  size_t tokens = 0;  // scored target positions
};

// exp(mean -log p) over every non-initial position of the packed stream,
// accumulated in double precision.
PerplexityResult perplexity(const ModelConfig& cfg, Parameters<float>& params,
                            const VocabAtlas* atlas, const BpeVocab& vocab,
                            const std::vector<std::string>& docs,
                            int batch_size, int seq_len);

// Stream variants used by the noise harness: explicit inputs and targets
// aligned per position (targets[i] = id expected after position i, -1 masked).
PerplexityResult perplexity_stream(const ModelConfig& cfg,
                                   Parameters<float>& params,
                                   const VocabAtlas* atlas,
                                   const std::vector<int>& input_stream,
                                   const std::vector<int>& target_stream,
                                   int batch_size, int seq_len);

PerplexityResult perplexity_stream_images(const ModelConfig& cfg,
                                          Parameters<float>& params,
                                          const MatrixRMf& image_stream,
                                          const std::vector<int>& target_stream,
                                          int batch_size, int seq_len);

// ---------------------------------------------------------------------------
// Frozen-backbone classification

struct HeadConfig {
  int steps = 300;
  double learning_rate = 0.05;
  uint64_t seed = 0;
};

struct ClassifierHead {
  MatRM<float> w;  // hidden x 2
  VecX<float> b;   // 2
};

struct ClassifierMetrics {
  double accuracy = 0;
  double precision = 0;  // positive class 1; 0/0 -> 0.0 and degenerate
  double recall = 0;     // positive class 1; 0/0 -> 1.0 (vacuous)
  bool degenerate = false;
  size_t count = 0;
};

// Per-example feature: hidden state after the final norm at the last
// position of the example's sequence.
MatrixRMf classifier_features(const ModelConfig& cfg, Parameters<float>& params,
                              const VocabAtlas* atlas, const BpeVocab& vocab,
                              const std::vector<std::string>& texts);

// Feature extraction from prebuilt per-example batches (noisy inputs).
MatrixRMf classifier_features_batches(const ModelConfig& cfg,
                                      Parameters<float>& params,
                                      const VocabAtlas* atlas,
                                      const std::vector<Batch<float>>& examples);

// Trains a linear head on frozen features with full-batch updates. Labels are
// 0/1. A single-class training set sets `degenerate_training` and warns via
// the returned flag; training still runs.
struct HeadTrainResult {
  ClassifierHead head;
  bool degenerate_training = false;
};
HeadTrainResult train_head(const MatrixRMf& features,
                           const std::vector<int>& labels,
                           const HeadConfig& cfg);

// Argmax prediction; exact logit ties resolve to class 0.
std::vector<int> head_predict(const ClassifierHead& head,
                              const MatrixRMf& features);

ClassifierMetrics evaluate_head(const ClassifierHead& head,
                                const MatrixRMf& features,
                                const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// Metrics report

struct MetricsRecord {
  std::string model;
  std::string corpus;
  double noise_p = 0;
  double ppl = 0;
  std::optional<double> acc, prec, rec;
  size_t tokens = 0;
  uint64_t seed = 0;
  bool failed = false;
};

struct MetricsReport {
  std::vector<std::string> annotations;  // emitted as '#' comment lines
  std::vector<MetricsRecord> records;

  std::string to_csv() const;
  void append(const MetricsRecord& r) { records.push_back(r); }
};

// Labeled corpus line format: label<TAB>text with label in {0,1}.
struct LabeledExample {
  int label;
  std::string text;
};
std::vector<LabeledExample> parse_labeled_lines(
    const std::vector<std::string>& lines);

}  // namespace pixellm
