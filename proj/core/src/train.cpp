#include "pixellm/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pixellm {

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("steps must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (sequence_length < 1) throw ConfigError("sequence_length must be positive");
  if (learning_rate < 0) throw ConfigError("learning_rate must be nonnegative");
  if (warmup_frac < 0 || warmup_frac > 1) {
    throw ConfigError("warmup_frac must lie in [0,1]");
  }
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
    throw ConfigError("betas must lie in [0,1)");
  }
  if (adam_eps <= 0) throw ConfigError("adam_eps must be positive");
  if (weight_decay < 0) throw ConfigError("weight_decay must be nonnegative");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be nonnegative");
  if (log_every < 1) throw ConfigError("log_every must be positive");
  if (stop_below < 0) throw ConfigError("stop_below must be nonnegative");
}

double TrainConfig::lr_at(int step) const {
  const int w = warmup_steps();
  if (w > 0 && step <= w) {
    return learning_rate * static_cast<double>(step) / w;
  }
  if (steps <= w) return learning_rate;
  double progress = static_cast<double>(step - w) / (steps - w);
  return learning_rate * 0.5 * (1.0 + std::cos(M_PI * progress));
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& kv) {
  TrainConfig c;
  c.steps = static_cast<int>(kv.get_int("steps", c.steps));
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.sequence_length =
      static_cast<int>(kv.get_int("sequence_length", c.sequence_length));
  c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
  c.warmup_frac = kv.get_double("warmup_frac", c.warmup_frac);
  c.beta1 = kv.get_double("beta1", c.beta1);
  c.beta2 = kv.get_double("beta2", c.beta2);
  c.adam_eps = kv.get_double("adam_eps", c.adam_eps);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.seed = static_cast<uint64_t>(kv.get_int("train_seed", 0));
  c.checkpoint_every =
      static_cast<int>(kv.get_int("checkpoint_every", c.checkpoint_every));
  c.log_every = static_cast<int>(kv.get_int("log_every", c.log_every));
  c.stop_below = kv.get_double("stop_below", c.stop_below);
  c.validate();
  return c;
}

void TrainConfig::to_config(KeyValueConfig& kv) const {
  kv.set("steps", std::to_string(steps));
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("sequence_length", std::to_string(sequence_length));
  kv.set("learning_rate", format_double(learning_rate));
  kv.set("warmup_frac", format_double(warmup_frac));
  kv.set("beta1", format_double(beta1));
  kv.set("beta2", format_double(beta2));
  kv.set("adam_eps", format_double(adam_eps));
  kv.set("weight_decay", format_double(weight_decay));
  kv.set("train_seed", std::to_string(seed));
  kv.set("checkpoint_every", std::to_string(checkpoint_every));
  kv.set("log_every", std::to_string(log_every));
  kv.set("stop_below", format_double(stop_below));
}

// ---------------------------------------------------------------------------
// Packing

std::vector<int> pack_corpus(const BpeVocab& vocab,
                             const std::vector<std::string>& docs) {
  std::vector<int> stream;
  for (const auto& doc : docs) {
    std::vector<int> ids = encode(vocab, doc);
    stream.insert(stream.end(), ids.begin(), ids.end());
    stream.push_back(BpeVocab::kEos);
  }
  return stream;
}

PackedWindows make_windows(const std::vector<int>& stream, int seq_len) {
  PackedWindows w;
  w.seq_len = seq_len;
  const size_t n = stream.size();
  if (n == 0) return w;
  w.count = static_cast<int>((n + seq_len - 1) / static_cast<size_t>(seq_len));
  w.inputs.assign(static_cast<size_t>(w.count) * seq_len, BpeVocab::kPad);
  w.targets.assign(static_cast<size_t>(w.count) * seq_len, -1);
  for (size_t i = 0; i < n; ++i) {
    w.inputs[i] = stream[i];
    if (i + 1 < n) w.targets[i] = stream[i + 1];
  }
  return w;
}

namespace {

PackedWindows make_windows_pair(const std::vector<int>& inputs,
                                const std::vector<int>& targets, int seq_len) {
  if (inputs.size() != targets.size()) {
    throw InputError("stream evaluation: input/target length mismatch");
  }
  PackedWindows w;
  w.seq_len = seq_len;
  const size_t n = inputs.size();
  if (n == 0) return w;
  w.count = static_cast<int>((n + seq_len - 1) / static_cast<size_t>(seq_len));
  w.inputs.assign(static_cast<size_t>(w.count) * seq_len, BpeVocab::kPad);
  w.targets.assign(static_cast<size_t>(w.count) * seq_len, -1);
  std::copy(inputs.begin(), inputs.end(), w.inputs.begin());
  std::copy(targets.begin(), targets.end(), w.targets.begin());
  return w;
}

// Negative log-likelihood accumulated in double precision.
void accumulate_nll(const MatRM<float>& logits, const std::vector<int>& targets,
                    double& total, size_t& count) {
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    int t = targets[static_cast<size_t>(r)];
    if (t < 0) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      mx = std::max(mx, static_cast<double>(logits(r, c)));
    }
    double denom = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      denom += std::exp(static_cast<double>(logits(r, c)) - mx);
    }
    total += -(static_cast<double>(logits(r, t)) - mx - std::log(denom));
    ++count;
  }
}

std::vector<int> scorable_windows(const PackedWindows& w) {
  std::vector<int> idx;
  for (int k = 0; k < w.count; ++k) {
    const size_t base = static_cast<size_t>(k) * w.seq_len;
    for (int j = 0; j < w.seq_len; ++j) {
      if (w.targets[base + j] >= 0) {
        idx.push_back(k);
        break;
      }
    }
  }
  return idx;
}

}  // namespace

// ---------------------------------------------------------------------------
// Optimizer

void AdamW::step(Parameters<float>& params, Parameters<float>& grads,
                 const TrainConfig& cfg, double lr) {
  ++t;
  const float b1 = static_cast<float>(cfg.beta1);
  const float b2 = static_cast<float>(cfg.beta2);
  const float bc1 = static_cast<float>(1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
  const float bc2 = static_cast<float>(1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
  const float eps = static_cast<float>(cfg.adam_eps);
  const float flr = static_cast<float>(lr);
  const float wd = static_cast<float>(cfg.weight_decay);

  auto pr = params.tensor_refs();
  auto gr = grads.tensor_refs();
  auto mr = m.tensor_refs();
  auto vr = v.tensor_refs();
  for (size_t k = 0; k < pr.size(); ++k) {
    const bool decay = pr[k].shape.size() == 2;
    float* p = pr[k].data;
    const float* g = gr[k].data;
    float* mm = mr[k].data;
    float* vv = vr[k].data;
    for (size_t i = 0; i < pr[k].size; ++i) {
      mm[i] = b1 * mm[i] + (1.0f - b1) * g[i];
      vv[i] = b2 * vv[i] + (1.0f - b2) * g[i] * g[i];
      float mh = mm[i] / bc1;
      float vh = vv[i] / bc2;
      p[i] -= flr * (mh / (std::sqrt(vh) + eps));
      if (decay) p[i] -= flr * wd * p[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Pretraining

PretrainResult pretrain(const ModelConfig& model_config,
                        const TrainConfig& train_config, const BpeVocab& vocab,
                        const VocabAtlas* atlas,
                        const std::vector<std::string>& docs,
                        const ProgressFn& progress,
                        const std::string& checkpoint_dir) {
  model_config.validate();
  train_config.validate();
  if (model_config.vocab_size != static_cast<int>(vocab.size())) {
    throw ConfigError("model vocab_size does not match tokenizer vocabulary (" +
                      std::to_string(model_config.vocab_size) + " vs " +
                      std::to_string(vocab.size()) + ")");
  }
  if (docs.empty()) throw InputError("empty corpus");
  std::vector<int> stream = pack_corpus(vocab, docs);
  PackedWindows windows = make_windows(stream, train_config.sequence_length);
  std::vector<int> usable = scorable_windows(windows);
  if (usable.empty()) {
    throw InputError("corpus produced no trainable windows");
  }

  PretrainResult result;
  result.params = init_model<float>(model_config, atlas);
  AdamW opt;
  opt.init(model_config);
  Rng batch_rng(train_config.seed);
  const int L = train_config.sequence_length;
  const int B = train_config.batch_size;
  int below_threshold = 0;

  std::array<uint8_t, 32> atlas_hash{};
  const bool pixel = model_config.embedding_mode == EmbeddingMode::pixel;
  if (pixel && atlas) atlas_hash = atlas->config_hash();

  for (int step = 1; step <= train_config.steps; ++step) {
    Batch<float> batch;
    batch.batch = B;
    batch.seq_len = L;
    batch.input_ids.resize(static_cast<size_t>(B) * L);
    batch.targets.resize(static_cast<size_t>(B) * L);
    for (int b = 0; b < B; ++b) {
      int k = usable[static_cast<size_t>(batch_rng.next_below(usable.size()))];
      const size_t src = static_cast<size_t>(k) * L;
      const size_t dst = static_cast<size_t>(b) * L;
      for (int j = 0; j < L; ++j) {
        batch.input_ids[dst + j] = windows.inputs[src + j];
        batch.targets[dst + j] = windows.targets[src + j];
      }
    }
    GradResult<float> grad =
        loss_and_grad(model_config, result.params, atlas, batch);
    if (!std::isfinite(grad.loss)) {
      throw Error("training diverged at step " + std::to_string(step) +
                  " (loss not finite)");
    }
    double lr = train_config.lr_at(step);
    opt.step(result.params, grad.grads, train_config, lr);
    result.loss_curve.push_back(grad.loss);
    if (train_config.stop_below > 0 && grad.loss < train_config.stop_below) {
      ++below_threshold;
    } else {
      below_threshold = 0;
    }
    const bool stopping = train_config.stop_below > 0 &&
                          below_threshold >= TrainConfig::kStopPatience;
    if (progress &&
        (step == 1 || step == train_config.steps || stopping ||
         step % train_config.log_every == 0)) {
      progress(step, grad.loss, lr);
    }
    if (train_config.checkpoint_every > 0 && !checkpoint_dir.empty() &&
        step % train_config.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "step_%06d.ckpt", step);
      save_checkpoint(checkpoint_dir + "/" + name, model_config, result.params,
                      pixel && atlas ? &atlas_hash : nullptr);
    }
    if (stopping) break;
  }
  return result;
}

PretrainResult train_token_baseline(ModelConfig model_config,
                                    const TrainConfig& train_config,
                                    const BpeVocab& vocab,
                                    const std::vector<std::string>& docs,
                                    const ProgressFn& progress) {
  model_config.embedding_mode = EmbeddingMode::token;
  return pretrain(model_config, train_config, vocab, nullptr, docs, progress);
}

// ---------------------------------------------------------------------------
// Perplexity

namespace {

PerplexityResult eval_windows(const ModelConfig& cfg, Parameters<float>& params,
                              const VocabAtlas* atlas,
                              const PackedWindows& windows,
                              const MatrixRMf* image_rows, int batch_size) {
  const int L = windows.seq_len;
  double total = 0;
  size_t count = 0;
  for (int start = 0; start < windows.count; start += batch_size) {
    const int nb = std::min(batch_size, windows.count - start);
    Batch<float> batch;
    batch.batch = nb;
    batch.seq_len = L;
    const size_t base = static_cast<size_t>(start) * L;
    const size_t len = static_cast<size_t>(nb) * L;
    batch.targets.assign(windows.targets.begin() + base,
                         windows.targets.begin() + base + len);
    if (image_rows) {
      batch.has_images = true;
      batch.images.resize(static_cast<Eigen::Index>(len), image_rows->cols());
      for (size_t i = 0; i < len; ++i) {
        const size_t pos = base + i;
        if (pos < static_cast<size_t>(image_rows->rows())) {
          batch.images.row(static_cast<Eigen::Index>(i)) =
              image_rows->row(static_cast<Eigen::Index>(pos));
        } else {
          batch.images.row(static_cast<Eigen::Index>(i)).setZero();
        }
      }
    } else {
      batch.input_ids.assign(windows.inputs.begin() + base,
                             windows.inputs.begin() + base + len);
    }
    MatRM<float> e =
        detail::embed_batch<float>(cfg, params, atlas, batch, nullptr);
    MatRM<float> logits = forward_from_embeddings(cfg, params, e, nb, L);
    accumulate_nll(logits, batch.targets, total, count);
  }
  if (count == 0) throw InputError("corpus too small to score any token");
  PerplexityResult r;
  r.tokens = count;
  r.mean_nll = total / static_cast<double>(count);
  r.ppl = std::exp(r.mean_nll);
  return r;
}

}  // namespace

PerplexityResult perplexity(const ModelConfig& cfg, Parameters<float>& params,
                            const VocabAtlas* atlas, const BpeVocab& vocab,
                            const std::vector<std::string>& docs,
                            int batch_size, int seq_len) {
  if (docs.empty()) throw InputError("empty corpus");
  std::vector<int> stream = pack_corpus(vocab, docs);
  PackedWindows windows = make_windows(stream, seq_len);
  return eval_windows(cfg, params, atlas, windows, nullptr, batch_size);
}

PerplexityResult perplexity_stream(const ModelConfig& cfg,
                                   Parameters<float>& params,
                                   const VocabAtlas* atlas,
                                   const std::vector<int>& input_stream,
                                   const std::vector<int>& target_stream,
                                   int batch_size, int seq_len) {
  PackedWindows windows = make_windows_pair(input_stream, target_stream, seq_len);
  return eval_windows(cfg, params, atlas, windows, nullptr, batch_size);
}

PerplexityResult perplexity_stream_images(const ModelConfig& cfg,
                                          Parameters<float>& params,
                                          const MatrixRMf& image_stream,
                                          const std::vector<int>& target_stream,
                                          int batch_size, int seq_len) {
  if (static_cast<size_t>(image_stream.rows()) != target_stream.size()) {
    throw InputError("stream evaluation: image/target length mismatch");
  }
  std::vector<int> dummy_inputs(target_stream.size(), 0);
  PackedWindows windows = make_windows_pair(dummy_inputs, target_stream, seq_len);
  return eval_windows(cfg, params, nullptr, windows, &image_stream, batch_size);
}

// ---------------------------------------------------------------------------
// Classification

MatrixRMf classifier_features(const ModelConfig& cfg, Parameters<float>& params,
                              const VocabAtlas* atlas, const BpeVocab& vocab,
                              const std::vector<std::string>& texts) {
  if (texts.empty()) throw InputError("no classification examples");
  MatrixRMf features(static_cast<Eigen::Index>(texts.size()), cfg.hidden_size);
  for (size_t i = 0; i < texts.size(); ++i) {
    std::vector<int> ids = encode(vocab, texts[i]);
    if (ids.empty()) {
      throw InputError("classification example tokenizes to zero tokens");
    }
    if (static_cast<int>(ids.size()) > cfg.max_positions) {
      ids.resize(static_cast<size_t>(cfg.max_positions));
    }
    Batch<float> b;
    b.batch = 1;
    b.seq_len = static_cast<int>(ids.size());
    b.input_ids = ids;
    MatRM<float> hs = hidden_states(cfg, params, atlas, b);
    features.row(static_cast<Eigen::Index>(i)) = hs.row(hs.rows() - 1);
  }
  return features;
}

MatrixRMf classifier_features_batches(const ModelConfig& cfg,
                                      Parameters<float>& params,
                                      const VocabAtlas* atlas,
                                      const std::vector<Batch<float>>& examples) {
  if (examples.empty()) throw InputError("no classification examples");
  MatrixRMf features(static_cast<Eigen::Index>(examples.size()), cfg.hidden_size);
  for (size_t i = 0; i < examples.size(); ++i) {
    MatRM<float> hs = hidden_states(cfg, params, atlas, examples[i]);
    features.row(static_cast<Eigen::Index>(i)) = hs.row(hs.rows() - 1);
  }
  return features;
}

HeadTrainResult train_head(const MatrixRMf& features,
                           const std::vector<int>& labels,
                           const HeadConfig& cfg) {
  const Eigen::Index n = features.rows();
  const Eigen::Index h = features.cols();
  if (static_cast<size_t>(n) != labels.size()) {
    throw InputError("feature/label count mismatch");
  }
  if (n == 0) throw InputError("no training examples");
  for (int l : labels) {
    if (l != 0 && l != 1) throw InputError("labels must be 0 or 1");
  }
  if (cfg.steps < 1) throw ConfigError("head steps must be at least 1");

  HeadTrainResult out;
  out.head.w = MatRM<float>::Zero(h, 2);
  out.head.b = VecX<float>::Zero(2);
  bool has0 = false, has1 = false;
  for (int l : labels) (l == 0 ? has0 : has1) = true;
  out.degenerate_training = !(has0 && has1);

  // Full-batch adaptive-moment updates on the convex head objective.
  MatRM<float> mw = MatRM<float>::Zero(h, 2), vw = MatRM<float>::Zero(h, 2);
  VecX<float> mb = VecX<float>::Zero(2), vb = VecX<float>::Zero(2);
  const float b1 = 0.9f, b2 = 0.95f, eps = 1e-8f;
  const float lr = static_cast<float>(cfg.learning_rate);
  const float inv_n = 1.0f / static_cast<float>(n);

  for (int step = 1; step <= cfg.steps; ++step) {
    MatRM<float> logits = features * out.head.w;
    logits.rowwise() += out.head.b.transpose();
    MatRM<float> dlogits(n, 2);
    for (Eigen::Index r = 0; r < n; ++r) {
      float mx = std::max(logits(r, 0), logits(r, 1));
      float e0 = std::exp(logits(r, 0) - mx);
      float e1 = std::exp(logits(r, 1) - mx);
      float denom = e0 + e1;
      dlogits(r, 0) = e0 / denom * inv_n;
      dlogits(r, 1) = e1 / denom * inv_n;
      dlogits(r, labels[static_cast<size_t>(r)]) -= inv_n;
    }
    MatRM<float> gw = features.transpose() * dlogits;
    VecX<float> gb = dlogits.colwise().sum().transpose();
    float bc1 = 1.0f - std::pow(b1, static_cast<float>(step));
    float bc2 = 1.0f - std::pow(b2, static_cast<float>(step));
    auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
      m = b1 * m + (1.0f - b1) * g;
      v = (b2 * v.array() + (1.0f - b2) * g.array().square()).matrix();
      p -= (lr * (m.array() / bc1) /
            ((v.array() / bc2).sqrt() + eps))
               .matrix();
    };
    update(out.head.w, mw, vw, gw);
    update(out.head.b, mb, vb, gb);
  }
  return out;
}

std::vector<int> head_predict(const ClassifierHead& head,
                              const MatrixRMf& features) {
  MatRM<float> logits = features * head.w;
  logits.rowwise() += head.b.transpose();
  std::vector<int> pred(static_cast<size_t>(features.rows()));
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    pred[static_cast<size_t>(r)] = logits(r, 1) > logits(r, 0) ? 1 : 0;
  }
  return pred;
}

ClassifierMetrics evaluate_head(const ClassifierHead& head,
                                const MatrixRMf& features,
                                const std::vector<int>& labels) {
  if (static_cast<size_t>(features.rows()) != labels.size()) {
    throw InputError("feature/label count mismatch");
  }
  if (labels.empty()) throw InputError("empty evaluation set");
  std::vector<int> pred = head_predict(head, features);
  size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1 && pred[i] == 1) ++tp;
    else if (labels[i] == 0 && pred[i] == 1) ++fp;
    else if (labels[i] == 1 && pred[i] == 0) ++fn;
    else ++tn;
  }
  ClassifierMetrics m;
  m.count = labels.size();
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(m.count);
  if (tp + fp > 0) {
    m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  } else {
    m.precision = 0.0;  // no positive predictions
    m.degenerate = true;
  }
  if (tp + fn > 0) {
    m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  } else {
    m.recall = 1.0;  // vacuous: no positive examples
    m.degenerate = true;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Reports

std::string MetricsReport::to_csv() const {
  std::string out = "model,corpus,noise_p,ppl,acc,prec,rec,tokens,seed\n";
  for (const auto& a : annotations) {
    out += "# " + a + "\n";
  }
  auto opt_field = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
  };
  for (const auto& r : records) {
    out += r.model + "," + r.corpus + "," + format_double(r.noise_p) + "," +
           (r.failed || !std::isfinite(r.ppl) ? "nan" : format_double(r.ppl)) +
           "," + opt_field(r.acc) +
           "," + opt_field(r.prec) + "," + opt_field(r.rec) + "," +
           std::to_string(r.tokens) + "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

std::vector<LabeledExample> parse_labeled_lines(
    const std::vector<std::string>& lines) {
  std::vector<LabeledExample> out;
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    size_t tab = lines[i].find('\t');
    if (tab == std::string::npos) {
      throw FormatError("labeled line " + std::to_string(i + 1) +
                        ": missing tab separator");
    }
    std::string label = lines[i].substr(0, tab);
    if (label != "0" && label != "1") {
      throw FormatError("labeled line " + std::to_string(i + 1) +
                        ": label must be 0 or 1, got '" + label + "'");
    }
    out.push_back({label == "1" ? 1 : 0, lines[i].substr(tab + 1)});
  }
  return out;
}

}  // namespace pixellm
