#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pixellm/atlas.hpp"
#include "pixellm/util.hpp"

namespace pixellm {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class EmbeddingMode { pixel, token };
enum class PosScheme { rotary, learned_absolute };

struct ModelConfig {
  int hidden_size = 128;
  int intermediate_size = 344;
  int num_heads = 4;
  int num_layers = 4;
  int vocab_size = 512;
  int max_positions = 256;
  double rmsnorm_eps = 1e-5;
  EmbeddingMode embedding_mode = EmbeddingMode::pixel;
  int image_height = 20;  // pixel mode only
  int image_width = 50;   // pixel mode only
  PosScheme pos_scheme = PosScheme::rotary;
  uint64_t seed = 0;
  double rope_base = 10000.0;

  int head_dim() const { return hidden_size / num_heads; }
  int pixel_dim() const { return image_height * image_width; }
  void validate() const;

  static ModelConfig from_config(const KeyValueConfig& kv);
  void to_config(KeyValueConfig& kv) const;
};

template <typename T>
struct TensorRef {
  std::string name;
  T* data;
  std::vector<int> shape;
  size_t size;
};

template <typename T>
struct LayerParams {
  MatRM<T> wq, wk, wv, wo;  // hidden x hidden
  MatRM<T> w_gate, w_up;    // hidden x intermediate
  MatRM<T> w_down;          // intermediate x hidden
  VecX<T> norm_attn, norm_ffn;
};

// All learnable weights. Atlas pixels are constants and never appear here.
template <typename T>
struct Parameters {
  MatRM<T> projector;      // pixel_dim x hidden (pixel mode)
  VecX<T> projector_bias;  // hidden (pixel mode)
  MatRM<T> embedding;      // vocab x hidden (token mode)
  MatRM<T> pos_embedding;  // max_positions x hidden (learned_absolute only)
  std::vector<LayerParams<T>> layers;
  VecX<T> norm_final;  // hidden
  MatRM<T> head;       // hidden x vocab

  void allocate(const ModelConfig& cfg, bool zero = false) {
    auto mat = [&](int r, int c) {
      return zero ? MatRM<T>::Zero(r, c).eval() : MatRM<T>(r, c);
    };
    auto vec = [&](int n) { return zero ? VecX<T>::Zero(n).eval() : VecX<T>(n); };
    if (cfg.embedding_mode == EmbeddingMode::pixel) {
      projector = mat(cfg.pixel_dim(), cfg.hidden_size);
      projector_bias = vec(cfg.hidden_size);
    } else {
      embedding = mat(cfg.vocab_size, cfg.hidden_size);
    }
    if (cfg.pos_scheme == PosScheme::learned_absolute) {
      pos_embedding = mat(cfg.max_positions, cfg.hidden_size);
    }
    layers.resize(cfg.num_layers);
    for (auto& l : layers) {
      l.wq = mat(cfg.hidden_size, cfg.hidden_size);
      l.wk = mat(cfg.hidden_size, cfg.hidden_size);
      l.wv = mat(cfg.hidden_size, cfg.hidden_size);
      l.wo = mat(cfg.hidden_size, cfg.hidden_size);
      l.w_gate = mat(cfg.hidden_size, cfg.intermediate_size);
      l.w_up = mat(cfg.hidden_size, cfg.intermediate_size);
      l.w_down = mat(cfg.intermediate_size, cfg.hidden_size);
      l.norm_attn = vec(cfg.hidden_size);
      l.norm_ffn = vec(cfg.hidden_size);
    }
    norm_final = vec(cfg.hidden_size);
    head = mat(cfg.hidden_size, cfg.vocab_size);
  }

  // Stable-order traversal used by init, the optimizer, gradient checking,
  // and checkpoints.
  std::vector<TensorRef<T>> tensor_refs() {
    std::vector<TensorRef<T>> refs;
    auto add_mat = [&](const std::string& name, MatRM<T>& m) {
      if (m.size() == 0) return;
      refs.push_back({name, m.data(),
                      {static_cast<int>(m.rows()), static_cast<int>(m.cols())},
                      static_cast<size_t>(m.size())});
    };
    auto add_vec = [&](const std::string& name, VecX<T>& v) {
      if (v.size() == 0) return;
      refs.push_back(
          {name, v.data(), {static_cast<int>(v.size())}, static_cast<size_t>(v.size())});
    };
    add_mat("projector.weight", projector);
    add_vec("projector.bias", projector_bias);
    add_mat("embedding.weight", embedding);
    add_mat("pos_embedding.weight", pos_embedding);
    for (size_t i = 0; i < layers.size(); ++i) {
      std::string p = "layers." + std::to_string(i) + ".";
      add_mat(p + "attn.wq", layers[i].wq);
      add_mat(p + "attn.wk", layers[i].wk);
      add_mat(p + "attn.wv", layers[i].wv);
      add_mat(p + "attn.wo", layers[i].wo);
      add_vec(p + "norm_attn", layers[i].norm_attn);
      add_mat(p + "ffn.w_gate", layers[i].w_gate);
      add_mat(p + "ffn.w_up", layers[i].w_up);
      add_mat(p + "ffn.w_down", layers[i].w_down);
      add_vec(p + "norm_ffn", layers[i].norm_ffn);
    }
    add_vec("norm_final", norm_final);
    add_mat("head.weight", head);
    return refs;
  }
};

template <typename T>
size_t count_params(Parameters<T>& params) {
  size_t n = 0;
  for (const auto& r : params.tensor_refs()) n += r.size;
  return n;
}

// One training/evaluation batch of `batch` sequences of length `seq_len`.
// Pixel inputs come either from atlas rows addressed by input_ids or, when
// has_images is set, from explicit image rows (corrupted or OOV renders).
// Target -1 marks positions excluded from the loss.
template <typename T>
struct Batch {
  int batch = 1;
  int seq_len = 0;
  std::vector<int> input_ids;
  MatRM<T> images;
  bool has_images = false;
  std::vector<int> targets;
};

// ---------------------------------------------------------------------------
// Initialization
//
// Projector, embeddings, attention, feed-forward, and head weights draw from
// normal(0, 0.02); norm gains start at 1 and the projector bias at 0.
template <typename T>
Parameters<T> init_model(const ModelConfig& cfg, const VocabAtlas* atlas) {
  cfg.validate();
  if (cfg.embedding_mode == EmbeddingMode::pixel) {
    if (!atlas) throw ConfigError("pixel mode requires an atlas");
    if (atlas->vocab_size() < static_cast<uint32_t>(cfg.vocab_size)) {
      throw ConfigError("atlas smaller than model vocabulary");
    }
    if (atlas->image_height() != cfg.image_height ||
        atlas->image_width() != cfg.image_width) {
      throw ConfigError("atlas image dimensions do not match model config");
    }
  }
  Parameters<T> p;
  p.allocate(cfg);
  Rng rng(cfg.seed);
  for (auto& ref : p.tensor_refs()) {
    bool is_norm = ref.name.find("norm") != std::string::npos;
    bool is_bias = ref.name.find("bias") != std::string::npos;
    for (size_t i = 0; i < ref.size; ++i) {
      if (is_norm) {
        ref.data[i] = T(1);
      } else if (is_bias) {
        ref.data[i] = T(0);
      } else {
        ref.data[i] = static_cast<T>(0.02 * rng.next_normal());
      }
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward machinery

namespace detail {

template <typename T>
struct NormCache {
  MatRM<T> input;   // rows entering the norm
  MatRM<T> output;  // normalized rows
  VecX<T> inv;      // 1/sqrt(mean(x^2)+eps) per row
};

template <typename T>
void rmsnorm_forward(const MatRM<T>& x, const VecX<T>& gain, double eps,
                     NormCache<T>& cache) {
  const Eigen::Index n = x.cols();
  cache.input = x;
  cache.output.resize(x.rows(), n);
  cache.inv.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    T ms = x.row(r).squaredNorm() / static_cast<T>(n);
    T inv = T(1) / std::sqrt(ms + static_cast<T>(eps));
    cache.inv[r] = inv;
    cache.output.row(r) = (x.row(r) * inv).cwiseProduct(gain.transpose());
  }
}

template <typename T>
void rmsnorm_backward(const NormCache<T>& cache, const VecX<T>& gain,
                      const MatRM<T>& dout, MatRM<T>& dx, VecX<T>& dgain) {
  const Eigen::Index n = cache.input.cols();
  dx.resize(cache.input.rows(), n);
  for (Eigen::Index r = 0; r < cache.input.rows(); ++r) {
    T inv = cache.inv[r];
    auto x = cache.input.row(r);
    // u = dout .* gain;  dx = inv*u - x * (inv^3/n) * dot(u, x)
    Eigen::Matrix<T, 1, Eigen::Dynamic> u =
        dout.row(r).cwiseProduct(gain.transpose());
    T proj = u.dot(x);
    dx.row(r) = u * inv - x * (inv * inv * inv * proj / static_cast<T>(n));
    dgain += (dout.row(r).cwiseProduct(x) * inv).transpose();
  }
}

// Rotary tables for positions 0..len-1 (adjacent-pair convention).
template <typename T>
void rope_tables(int len, int head_dim, double base, MatRM<T>& cos_t,
                 MatRM<T>& sin_t) {
  const int half = head_dim / 2;
  cos_t.resize(len, half);
  sin_t.resize(len, half);
  for (int pos = 0; pos < len; ++pos) {
    for (int i = 0; i < half; ++i) {
      double theta = pos * std::pow(base, -2.0 * i / head_dim);
      cos_t(pos, i) = static_cast<T>(std::cos(theta));
      sin_t(pos, i) = static_cast<T>(std::sin(theta));
    }
  }
}

// In-place rotation of rows of a (len x head_dim) block; sign=-1 inverts.
template <typename T, typename Block>
void rope_apply(Block block, const MatRM<T>& cos_t, const MatRM<T>& sin_t,
                int sign) {
  const int half = static_cast<int>(block.cols()) / 2;
  for (Eigen::Index r = 0; r < block.rows(); ++r) {
    for (int i = 0; i < half; ++i) {
      T c = cos_t(r, i);
      T s = sin_t(r, i) * static_cast<T>(sign);
      T a = block(r, 2 * i);
      T b = block(r, 2 * i + 1);
      block(r, 2 * i) = a * c - b * s;
      block(r, 2 * i + 1) = a * s + b * c;
    }
  }
}

template <typename T>
struct LayerTrace {
  NormCache<T> norm1, norm2;
  MatRM<T> q, k, v;               // post-rope q/k, (B*L) x hidden
  std::vector<MatRM<T>> attn;     // softmax probs per (seq, head)
  MatRM<T> ctx;                   // attention output before wo
  MatRM<T> gate_pre, up, act;     // ffn intermediates
};

template <typename T>
struct Trace {
  MatRM<T> embeddings;  // E, input to the stack
  std::vector<LayerTrace<T>> layers;
  NormCache<T> norm_final;
};

// Runs the decoder stack over stacked embeddings; fills the trace when given.
template <typename T>
MatRM<T> decoder_stack(const ModelConfig& cfg, Parameters<T>& params,
                       const MatRM<T>& embeddings, int batch, int seq_len,
                       Trace<T>* trace) {
  const int h = cfg.hidden_size;
  const int nh = cfg.num_heads;
  const int hd = cfg.head_dim();
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));
  if (embeddings.rows() != static_cast<Eigen::Index>(batch) * seq_len ||
      embeddings.cols() != h) {
    throw InputError("decoder: embedding matrix shape mismatch");
  }
  if (seq_len < 1 || seq_len > cfg.max_positions) {
    throw InputError("decoder: sequence length out of range (1.." +
                     std::to_string(cfg.max_positions) + ")");
  }

  MatRM<T> cos_t, sin_t;
  if (cfg.pos_scheme == PosScheme::rotary) {
    rope_tables<T>(seq_len, hd, cfg.rope_base, cos_t, sin_t);
  }

  MatRM<T> x = embeddings;
  if (trace) {
    trace->embeddings = embeddings;
    trace->layers.resize(cfg.num_layers);
  }

  NormCache<T> local_norm;
  for (int li = 0; li < cfg.num_layers; ++li) {
    LayerParams<T>& lp = params.layers[li];
    LayerTrace<T> scratch;
    LayerTrace<T>& lt = trace ? trace->layers[li] : scratch;

    rmsnorm_forward(x, lp.norm_attn, cfg.rmsnorm_eps, lt.norm1);
    const MatRM<T>& xn = lt.norm1.output;
    lt.q.noalias() = xn * lp.wq;
    lt.k.noalias() = xn * lp.wk;
    lt.v.noalias() = xn * lp.wv;
    lt.ctx.resize(x.rows(), h);
    lt.attn.assign(static_cast<size_t>(batch) * nh, MatRM<T>());

    for (int b = 0; b < batch; ++b) {
      const Eigen::Index row0 = static_cast<Eigen::Index>(b) * seq_len;
      for (int hh = 0; hh < nh; ++hh) {
        auto qh = lt.q.block(row0, hh * hd, seq_len, hd);
        auto kh = lt.k.block(row0, hh * hd, seq_len, hd);
        auto vh = lt.v.block(row0, hh * hd, seq_len, hd);
        if (cfg.pos_scheme == PosScheme::rotary) {
          rope_apply<T>(qh, cos_t, sin_t, +1);
          rope_apply<T>(kh, cos_t, sin_t, +1);
        }
        MatRM<T> scores = (qh * kh.transpose()) * inv_sqrt;
        for (int i = 0; i < seq_len; ++i) {
          for (int j = i + 1; j < seq_len; ++j) {
            scores(i, j) = -std::numeric_limits<T>::infinity();
          }
        }
        // Row softmax with max subtraction; masked entries become exact 0.
        for (int i = 0; i < seq_len; ++i) {
          T mx = scores.row(i).head(i + 1).maxCoeff();
          T denom = T(0);
          for (int j = 0; j <= i; ++j) {
            T e = std::exp(scores(i, j) - mx);
            scores(i, j) = e;
            denom += e;
          }
          for (int j = 0; j <= i; ++j) scores(i, j) /= denom;
          for (int j = i + 1; j < seq_len; ++j) scores(i, j) = T(0);
        }
        lt.attn[static_cast<size_t>(b) * nh + hh] = scores;
        lt.ctx.block(row0, hh * hd, seq_len, hd).noalias() = scores * vh;
      }
    }
    x.noalias() += lt.ctx * lp.wo;

    rmsnorm_forward(x, lp.norm_ffn, cfg.rmsnorm_eps, lt.norm2);
    const MatRM<T>& xn2 = lt.norm2.output;
    lt.gate_pre.noalias() = xn2 * lp.w_gate;
    lt.up.noalias() = xn2 * lp.w_up;
    lt.act = lt.gate_pre.unaryExpr([](T u) {
      return u / (T(1) + std::exp(-u));  // silu
    });
    lt.act = lt.act.cwiseProduct(lt.up);
    x.noalias() += lt.act * lp.w_down;
  }

  NormCache<T>& nf = trace ? trace->norm_final : local_norm;
  rmsnorm_forward(x, params.norm_final, cfg.rmsnorm_eps, nf);
  return nf.output;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Embeddings

// Pixel embedding of a token id sequence: atlas row -> projector -> bias.
template <typename T>
MatRM<T> pixel_embed(const ModelConfig& cfg, const Parameters<T>& params,
                     const VocabAtlas& atlas, const std::vector<int>& ids) {
  if (cfg.embedding_mode != EmbeddingMode::pixel) {
    throw ConfigError("pixel_embed requires a pixel-mode model");
  }
  MatrixRMf img = atlas.lookup(ids);
  MatRM<T> e = img.template cast<T>() * params.projector;
  e.rowwise() += params.projector_bias.transpose();
  return e;
}

// Pixel embedding of explicit image rows (corrupted or OOV renders).
template <typename T>
MatRM<T> pixel_embed_images(const ModelConfig& cfg, const Parameters<T>& params,
                            const MatRM<T>& images) {
  if (images.cols() != params.projector.rows()) {
    throw InputError("pixel_embed: image width does not match projector");
  }
  MatRM<T> e = images * params.projector;
  e.rowwise() += params.projector_bias.transpose();
  return e;
}

namespace detail {

// Builds the embedding matrix for a batch and returns the pixel inputs (when
// applicable) for the projector backward pass.
template <typename T>
MatRM<T> embed_batch(const ModelConfig& cfg, Parameters<T>& params,
                     const VocabAtlas* atlas, const Batch<T>& batch,
                     MatRM<T>* pixel_inputs_out) {
  const size_t n = static_cast<size_t>(batch.batch) * batch.seq_len;
  MatRM<T> e;
  if (cfg.embedding_mode == EmbeddingMode::pixel) {
    MatRM<T> img;
    if (batch.has_images) {
      img = batch.images;
    } else {
      if (!atlas) throw ConfigError("pixel mode forward requires an atlas");
      if (batch.input_ids.size() != n) throw InputError("batch id count mismatch");
      img = atlas->lookup(batch.input_ids).template cast<T>();
    }
    if (img.rows() != static_cast<Eigen::Index>(n)) {
      throw InputError("batch image count mismatch");
    }
    e = img * params.projector;
    e.rowwise() += params.projector_bias.transpose();
    if (pixel_inputs_out) *pixel_inputs_out = std::move(img);
  } else {
    if (batch.input_ids.size() != n) throw InputError("batch id count mismatch");
    e.resize(static_cast<Eigen::Index>(n), cfg.hidden_size);
    for (size_t i = 0; i < n; ++i) {
      int id = batch.input_ids[i];
      if (id < 0 || id >= cfg.vocab_size) {
        throw InputError("token id out of range: " + std::to_string(id));
      }
      e.row(static_cast<Eigen::Index>(i)) = params.embedding.row(id);
    }
  }
  if (cfg.pos_scheme == PosScheme::learned_absolute) {
    for (int b = 0; b < batch.batch; ++b) {
      for (int t = 0; t < batch.seq_len; ++t) {
        e.row(static_cast<Eigen::Index>(b) * batch.seq_len + t) +=
            params.pos_embedding.row(t);
      }
    }
  }
  return e;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward

// Decoder over externally supplied embeddings; proves the stack is agnostic
// to the embedding mode. Returns (batch*seq_len) x vocab logits.
template <typename T>
MatRM<T> forward_from_embeddings(const ModelConfig& cfg, Parameters<T>& params,
                                 const MatRM<T>& embeddings, int batch,
                                 int seq_len) {
  MatRM<T> hidden =
      detail::decoder_stack<T>(cfg, params, embeddings, batch, seq_len, nullptr);
  return hidden * params.head;
}

// Single-sequence convenience: logits for ids[0..s-1], one row per position.
template <typename T>
MatRM<T> forward(const ModelConfig& cfg, Parameters<T>& params,
                 const VocabAtlas* atlas, const std::vector<int>& ids) {
  if (ids.empty()) throw InputError("forward: empty sequence");
  Batch<T> b;
  b.batch = 1;
  b.seq_len = static_cast<int>(ids.size());
  b.input_ids = ids;
  MatRM<T> e = detail::embed_batch<T>(cfg, params, atlas, b, nullptr);
  return forward_from_embeddings(cfg, params, e, 1, b.seq_len);
}

// Hidden states after the final norm for a batch; used by the classifier.
template <typename T>
MatRM<T> hidden_states(const ModelConfig& cfg, Parameters<T>& params,
                       const VocabAtlas* atlas, const Batch<T>& batch) {
  MatRM<T> e = detail::embed_batch<T>(cfg, params, atlas, batch, nullptr);
  return detail::decoder_stack<T>(cfg, params, e, batch.batch, batch.seq_len,
                               nullptr);
}

// ---------------------------------------------------------------------------
// Loss and gradients

// Mean cross-entropy over rows whose target is not -1.
// When dlogits is non-null it receives d(loss)/d(logits).
template <typename T>
T cross_entropy(const MatRM<T>& logits, const std::vector<int>& targets,
                MatRM<T>* dlogits = nullptr, size_t* scored_out = nullptr) {
  if (static_cast<size_t>(logits.rows()) != targets.size()) {
    throw InputError("cross_entropy: logits/targets shape mismatch");
  }
  size_t scored = 0;
  for (int t : targets) {
    if (t >= static_cast<int>(logits.cols())) {
      throw InputError("cross_entropy: target id out of range");
    }
    if (t >= 0) ++scored;
  }
  if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
  if (scored == 0) {
    if (scored_out) *scored_out = 0;
    return T(0);
  }
  double total = 0;
  const T inv_n = T(1) / static_cast<T>(scored);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    int t = targets[static_cast<size_t>(r)];
    if (t < 0) continue;
    T mx = logits.row(r).maxCoeff();
    T denom = T(0);
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      denom += std::exp(logits(r, c) - mx);
    }
    T log_denom = std::log(denom);
    total += static_cast<double>(-(logits(r, t) - mx - log_denom));
    if (dlogits) {
      for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        T p = std::exp(logits(r, c) - mx) / denom;
        (*dlogits)(r, c) = p * inv_n;
      }
      (*dlogits)(r, t) -= inv_n;
    }
  }
  if (scored_out) *scored_out = scored;
  return static_cast<T>(total / static_cast<double>(scored));
}

template <typename T>
struct GradResult {
  T loss = T(0);
  size_t scored = 0;
  Parameters<T> grads;
};

// Loss of a batch without gradients; shares every code path with
// loss_and_grad so finite differences check the same function.
template <typename T>
T batch_loss(const ModelConfig& cfg, Parameters<T>& params,
             const VocabAtlas* atlas, const Batch<T>& batch) {
  MatRM<T> e = detail::embed_batch<T>(cfg, params, atlas, batch, nullptr);
  MatRM<T> logits = forward_from_embeddings(cfg, params, e, batch.batch,
                                            batch.seq_len);
  return cross_entropy(logits, batch.targets);
}

// Exact reverse-mode gradients of batch_loss with respect to every parameter
// tensor, including the pixel projector. Atlas pixels are constants.
template <typename T>
GradResult<T> loss_and_grad(const ModelConfig& cfg, Parameters<T>& params,
                            const VocabAtlas* atlas, const Batch<T>& batch) {
  const int h = cfg.hidden_size;
  const int nh = cfg.num_heads;
  const int hd = cfg.head_dim();
  const int B = batch.batch;
  const int L = batch.seq_len;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));

  MatRM<T> pixel_inputs;
  MatRM<T> e = detail::embed_batch(cfg, params, atlas, batch,
                                   cfg.embedding_mode == EmbeddingMode::pixel
                                       ? &pixel_inputs
                                       : nullptr);
  detail::Trace<T> trace;
  MatRM<T> hidden = detail::decoder_stack(cfg, params, e, B, L, &trace);
  MatRM<T> logits = hidden * params.head;

  GradResult<T> result;
  MatRM<T> dlogits;
  result.loss = cross_entropy(logits, batch.targets, &dlogits, &result.scored);
  result.grads.allocate(cfg, /*zero=*/true);
  Parameters<T>& g = result.grads;

  g.head.noalias() = hidden.transpose() * dlogits;
  MatRM<T> dhidden = dlogits * params.head.transpose();

  MatRM<T> dx;
  detail::rmsnorm_backward(trace.norm_final, params.norm_final, dhidden, dx,
                           g.norm_final);

  MatRM<T> cos_t, sin_t;
  if (cfg.pos_scheme == PosScheme::rotary) {
    detail::rope_tables<T>(L, hd, cfg.rope_base, cos_t, sin_t);
  }

  for (int li = cfg.num_layers - 1; li >= 0; --li) {
    LayerParams<T>& lp = params.layers[li];
    LayerParams<T>& lg = g.layers[li];
    detail::LayerTrace<T>& lt = trace.layers[li];

    // FFN backward: x_out = x_mid + act * w_down
    MatRM<T> dact = dx * lp.w_down.transpose();
    lg.w_down.noalias() = lt.act.transpose() * dx;
    MatRM<T> silu = lt.gate_pre.unaryExpr(
        [](T u) { return u / (T(1) + std::exp(-u)); });
    MatRM<T> dup = dact.cwiseProduct(silu);
    MatRM<T> dgate = dact.cwiseProduct(lt.up).cwiseProduct(
        lt.gate_pre.unaryExpr([](T u) {
          T s = T(1) / (T(1) + std::exp(-u));
          return s * (T(1) + u * (T(1) - s));
        }));
    lg.w_up.noalias() = lt.norm2.output.transpose() * dup;
    lg.w_gate.noalias() = lt.norm2.output.transpose() * dgate;
    MatRM<T> dxn2 = dup * lp.w_up.transpose() + dgate * lp.w_gate.transpose();
    MatRM<T> dx_norm2;
    detail::rmsnorm_backward(lt.norm2, lp.norm_ffn, dxn2, dx_norm2, lg.norm_ffn);
    dx += dx_norm2;  // residual branch

    // Attention backward: x_mid = x_in + ctx * wo
    MatRM<T> dctx = dx * lp.wo.transpose();
    lg.wo.noalias() = lt.ctx.transpose() * dx;
    MatRM<T> dq = MatRM<T>::Zero(lt.q.rows(), h);
    MatRM<T> dk = MatRM<T>::Zero(lt.k.rows(), h);
    MatRM<T> dv = MatRM<T>::Zero(lt.v.rows(), h);
    for (int b = 0; b < B; ++b) {
      const Eigen::Index row0 = static_cast<Eigen::Index>(b) * L;
      for (int hh = 0; hh < nh; ++hh) {
        const MatRM<T>& A = lt.attn[static_cast<size_t>(b) * nh + hh];
        auto qh = lt.q.block(row0, hh * hd, L, hd);
        auto kh = lt.k.block(row0, hh * hd, L, hd);
        auto vh = lt.v.block(row0, hh * hd, L, hd);
        auto dch = dctx.block(row0, hh * hd, L, hd);
        MatRM<T> dA = dch * vh.transpose();
        dv.block(row0, hh * hd, L, hd).noalias() = A.transpose() * dch;
        MatRM<T> dS(L, L);
        for (int i = 0; i < L; ++i) {
          T dot = dA.row(i).dot(A.row(i));
          dS.row(i) = A.row(i).cwiseProduct((dA.row(i).array() - dot).matrix());
        }
        dq.block(row0, hh * hd, L, hd).noalias() = (dS * kh) * inv_sqrt;
        dk.block(row0, hh * hd, L, hd).noalias() = (dS.transpose() * qh) * inv_sqrt;
        if (cfg.pos_scheme == PosScheme::rotary) {
          detail::rope_apply<T>(dq.block(row0, hh * hd, L, hd), cos_t, sin_t, -1);
          detail::rope_apply<T>(dk.block(row0, hh * hd, L, hd), cos_t, sin_t, -1);
        }
      }
    }
    const MatRM<T>& xn = lt.norm1.output;
    lg.wq.noalias() = xn.transpose() * dq;
    lg.wk.noalias() = xn.transpose() * dk;
    lg.wv.noalias() = xn.transpose() * dv;
    MatRM<T> dxn = dq * lp.wq.transpose();
    dxn.noalias() += dk * lp.wk.transpose();
    dxn.noalias() += dv * lp.wv.transpose();
    MatRM<T> dx_norm1;
    detail::rmsnorm_backward(lt.norm1, lp.norm_attn, dxn, dx_norm1, lg.norm_attn);
    dx += dx_norm1;
  }

  // Embedding backward.
  if (cfg.pos_scheme == PosScheme::learned_absolute) {
    for (int b = 0; b < B; ++b) {
      for (int t = 0; t < L; ++t) {
        g.pos_embedding.row(t) +=
            dx.row(static_cast<Eigen::Index>(b) * L + t);
      }
    }
  }
  if (cfg.embedding_mode == EmbeddingMode::pixel) {
    g.projector.noalias() = pixel_inputs.transpose() * dx;
    g.projector_bias = dx.colwise().sum().transpose();
  } else {
    for (size_t i = 0; i < batch.input_ids.size(); ++i) {
      g.embedding.row(batch.input_ids[i]) += dx.row(static_cast<Eigen::Index>(i));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Generation

struct GenerateOptions {
  enum class Strategy { greedy, temperature } strategy = Strategy::greedy;
  double temperature = 1.0;
  uint64_t seed = 0;
  int eos_id = 2;
};

// Autoregressive extension of a nonempty prompt. Greedy breaks logit ties
// toward the lowest id; temperature sampling is seed-deterministic. Prompt
// ids at or beyond the model vocabulary are legal in pixel mode when the
// atlas carries extended rows for them.
std::vector<int> generate(const ModelConfig& cfg, Parameters<float>& params,
                          const VocabAtlas* atlas,
                          const std::vector<int>& prompt_ids, int max_new,
                          const GenerateOptions& options);

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  ModelConfig config;
  Parameters<float> params;
  bool has_atlas_hash = false;
  std::array<uint8_t, 32> atlas_hash{};
};

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     Parameters<float>& params,
                     const std::array<uint8_t, 32>* atlas_hash);
Checkpoint load_checkpoint(const std::string& path);

// SHA-256 over every parameter tensor in traversal order.
std::string parameters_checksum(Parameters<float>& params);

}  // namespace pixellm
