#include "pixellm/noise.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

extern const unsigned char pixellm_embedded_noise_dict[];
extern const std::size_t pixellm_embedded_noise_dict_size;

namespace pixellm {

// ---------------------------------------------------------------------------
// Dictionary

NoiseDictionary NoiseDictionary::parse(const std::string& text,
                                       const std::string& origin) {
  NoiseDictionary dict;
  size_t line_no = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') {
      if (pos > text.size()) break;
      continue;
    }
    auto fail = [&](const std::string& msg) {
      throw FormatError(origin + ":" + std::to_string(line_no) + ": " + msg);
    };
    size_t tab = line.find('\t');
    if (tab == std::string::npos) fail("missing tab separator");
    std::vector<char32_t> key_cps = utf8_decode(line.substr(0, tab));
    if (key_cps.size() != 1) fail("key must be a single character");
    uint32_t key = static_cast<uint32_t>(key_cps[0]);
    if (dict.entries.count(key)) fail("duplicate entry");
    std::vector<uint32_t> reps;
    std::string rest = line.substr(tab + 1);
    for (const std::string& item : split(rest, ',')) {
      std::vector<char32_t> cps = utf8_decode(item);
      if (cps.size() != 1) {
        fail("replacement must be a single character, got '" + item + "'");
      }
      reps.push_back(static_cast<uint32_t>(cps[0]));
    }
    if (reps.empty()) fail("empty replacement list");
    if (reps.size() == 1 && reps[0] == key) fail("character maps to itself only");
    dict.entries.emplace(key, std::move(reps));
    if (pos > text.size()) break;
  }
  if (dict.entries.empty()) {
    throw FormatError(origin + ": dictionary has no entries");
  }
  return dict;
}

NoiseDictionary NoiseDictionary::load(const std::string& path) {
  return parse(read_file(path), path);
}

const NoiseDictionary& NoiseDictionary::bundled() {
  static const NoiseDictionary dict = parse(
      std::string(reinterpret_cast<const char*>(pixellm_embedded_noise_dict),
                  pixellm_embedded_noise_dict_size),
      "<bundled>");
  return dict;
}

void NoiseSpec::validate() const {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ConfigError("noise probability must lie in [0,1]");
  }
}

// ---------------------------------------------------------------------------
// Corruption

std::string corrupt_with_rng(const std::string& text, double p,
                             const NoiseDictionary& dict, Rng& rng) {
  std::vector<char32_t> cps = utf8_decode(text);
  std::string out;
  out.reserve(text.size());
  for (char32_t cp : cps) {
    uint32_t emit = static_cast<uint32_t>(cp);
    // One draw per scalar keeps the stream deterministic regardless of
    // dictionary coverage.
    double u = rng.next_double();
    if (u < p) {
      auto it = dict.entries.find(emit);
      if (it != dict.entries.end()) {
        emit = it->second[rng.next_below(it->second.size())];
      }
    }
    out += utf8_encode_one(static_cast<char32_t>(emit));
  }
  return out;
}

std::string corrupt(const std::string& text, const NoiseSpec& spec,
                    const NoiseDictionary& dict) {
  spec.validate();
  if (spec.p == 0.0) return text;
  Rng rng(spec.seed);
  return corrupt_with_rng(text, spec.p, dict, rng);
}

std::vector<std::string> corrupt_tokens(const std::vector<std::string>& surfaces,
                                        const NoiseSpec& spec,
                                        const NoiseDictionary& dict) {
  spec.validate();
  if (spec.p == 0.0) return surfaces;
  Rng rng(spec.seed);
  std::vector<std::string> out;
  out.reserve(surfaces.size());
  for (const std::string& s : surfaces) {
    if (!utf8_valid(s)) {
      out.push_back(s);
      continue;
    }
    out.push_back(corrupt_with_rng(s, spec.p, dict, rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pixel-space similarity

namespace {

void render_piece_row(const RenderConfig& rc, const std::string& piece_bytes,
                      float* dst) {
  GlyphImage img = render_word(surface_from_bytes(piece_bytes), rc);
  std::vector<uint8_t> q = quantize_image(img);
  for (size_t i = 0; i < q.size(); ++i) dst[i] = q[i] / 255.0f;
}

}  // namespace

double pixel_cosine(const std::string& sentence_a, const std::string& sentence_b,
                    const Parameters<float>* params, const BpeVocab& vocab,
                    const RenderConfig& render_cfg, CosineLevel level) {
  render_cfg.validate();
  if (level == CosineLevel::projected && !params) {
    throw ConfigError("projected similarity requires model parameters");
  }
  std::vector<int> ids = encode(vocab, sentence_a);
  if (ids.empty()) {
    throw InputError("pixel_cosine: sentence tokenizes to zero tokens");
  }
  std::vector<std::string> pieces_a;
  std::vector<size_t> lens;
  size_t total = 0;
  for (int id : ids) {
    const std::string& pb = vocab.piece_bytes(id);
    pieces_a.push_back(pb);
    size_t l = utf8_decode(pb).size();
    lens.push_back(l);
    total += l;
  }
  std::vector<char32_t> cps_b = utf8_decode(sentence_b);
  if (cps_b.size() != total) {
    throw InputError(
        "pixel_cosine: sentences differ in character count under the fixed "
        "tokenization (" +
        std::to_string(total) + " vs " + std::to_string(cps_b.size()) + ")");
  }
  std::vector<std::string> pieces_b;
  size_t off = 0;
  for (size_t l : lens) {
    std::string s;
    for (size_t i = 0; i < l; ++i) {
      s += utf8_encode_one(cps_b[off + i]);
    }
    off += l;
    pieces_b.push_back(std::move(s));
  }

  const int pixel_dim = render_cfg.image_height * render_cfg.image_width;
  const Eigen::Index dim =
      level == CosineLevel::raw_pixels
          ? pixel_dim
          : static_cast<Eigen::Index>(params->projector.cols());
  if (level == CosineLevel::projected &&
      params->projector.rows() != pixel_dim) {
    throw InputError("pixel_cosine: projector does not match render size");
  }

  auto pooled = [&](const std::vector<std::string>& pieces) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim);
    Eigen::RowVectorXf row(pixel_dim);
    for (const std::string& piece : pieces) {
      render_piece_row(render_cfg, piece, row.data());
      if (level == CosineLevel::raw_pixels) {
        acc += row.transpose().cast<double>();
      } else {
        Eigen::RowVectorXf e = row * params->projector;
        e += params->projector_bias.transpose();
        acc += e.transpose().cast<double>();
      }
    }
    acc /= static_cast<double>(pieces.size());
    return acc;
  };

  Eigen::VectorXd va = pooled(pieces_a);
  Eigen::VectorXd vb = pieces_a == pieces_b ? va : pooled(pieces_b);
  if (pieces_a == pieces_b) return 1.0;
  double na = va.norm(), nb = vb.norm();
  if (na == 0.0 || nb == 0.0) {
    throw InputError("pixel_cosine: zero pooled vector, similarity undefined");
  }
  double c = va.dot(vb) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Noisy evaluation

namespace {

// Corrupted piece per stream position; unchanged pieces stay byte-identical
// so downstream paths can reuse atlas rows and clean ids.
std::vector<std::string> corrupt_stream_pieces(const BpeVocab& vocab,
                                               const std::vector<int>& stream,
                                               const NoiseDictionary& dict,
                                               double p, uint64_t seed) {
  std::vector<std::string> dirty(stream.size());
  Rng rng(seed);
  for (size_t i = 0; i < stream.size(); ++i) {
    const std::string& piece = vocab.piece_bytes(stream[i]);
    if (p == 0.0 || piece.empty() || !utf8_valid(piece)) {
      dirty[i] = piece;
    } else {
      dirty[i] = corrupt_with_rng(piece, p, dict, rng);
    }
  }
  return dirty;
}

}  // namespace

PerplexityResult noisy_perplexity(const ModelConfig& cfg,
                                  Parameters<float>& params,
                                  const VocabAtlas* atlas,
                                  const BpeVocab& vocab,
                                  const RenderConfig& render_cfg,
                                  const std::vector<std::string>& docs,
                                  const NoiseDictionary& dict, double p,
                                  uint64_t seed, int batch_size, int seq_len,
                                  bool retokenize) {
  NoiseSpec spec;
  spec.p = p;
  spec.seed = seed;
  spec.validate();
  if (docs.empty()) throw InputError("empty corpus");

  if (retokenize) {
    Rng rng(seed);
    std::vector<std::string> dirty_docs;
    dirty_docs.reserve(docs.size());
    for (const std::string& d : docs) {
      dirty_docs.push_back(p == 0.0 ? d : corrupt_with_rng(d, p, dict, rng));
    }
    return perplexity(cfg, params, atlas, vocab, dirty_docs, batch_size,
                      seq_len);
  }

  std::vector<int> stream = pack_corpus(vocab, docs);
  const size_t n = stream.size();
  std::vector<std::string> dirty =
      corrupt_stream_pieces(vocab, stream, dict, p, seed);
  std::vector<int> targets(n, -1);
  for (size_t i = 0; i + 1 < n; ++i) targets[i] = stream[i + 1];

  if (cfg.embedding_mode == EmbeddingMode::pixel) {
    if (!atlas) throw ConfigError("pixel mode evaluation requires an atlas");
    if (render_config_hash(render_cfg) != atlas->config_hash()) {
      throw ConsistencyError(
          "noise evaluation: render config/font does not match the atlas");
    }
    MatrixRMf images(static_cast<Eigen::Index>(n), atlas->row_elems());
    for (size_t i = 0; i < n; ++i) {
      if (dirty[i] == vocab.piece_bytes(stream[i])) {
        images.row(static_cast<Eigen::Index>(i)) = atlas->row(
            static_cast<uint32_t>(stream[i]));
      } else {
        render_piece_row(render_cfg, dirty[i],
                         images.row(static_cast<Eigen::Index>(i)).data());
      }
    }
    return perplexity_stream_images(cfg, params, images, targets, batch_size,
                                    seq_len);
  }

  // Token baseline: re-encode each corrupted surface in place; the clean next
  // id is scored at the last piece of each group.
  std::vector<int> inputs;
  std::vector<int> expanded_targets;
  inputs.reserve(n);
  expanded_targets.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    if (dirty[i] == vocab.piece_bytes(stream[i])) {
      inputs.push_back(stream[i]);
      expanded_targets.push_back(targets[i]);
      continue;
    }
    std::vector<int> group = encode(vocab, dirty[i]);
    if (group.empty()) group.push_back(BpeVocab::kUnk);
    for (size_t j = 0; j < group.size(); ++j) {
      inputs.push_back(group[j]);
      expanded_targets.push_back(j + 1 == group.size() ? targets[i] : -1);
    }
  }
  return perplexity_stream(cfg, params, nullptr, inputs, expanded_targets,
                           batch_size, seq_len);
}

std::vector<Batch<float>> noisy_classifier_inputs(
    const ModelConfig& cfg, const VocabAtlas* atlas, const BpeVocab& vocab,
    const RenderConfig& render_cfg, const std::vector<std::string>& texts,
    const NoiseDictionary& dict, double p, uint64_t seed, int max_positions) {
  if (texts.empty()) throw InputError("no classification examples");
  const bool pixel = cfg.embedding_mode == EmbeddingMode::pixel;
  if (pixel) {
    if (!atlas) throw ConfigError("pixel mode inputs require an atlas");
    if (render_config_hash(render_cfg) != atlas->config_hash()) {
      throw ConsistencyError(
          "noise evaluation: render config/font does not match the atlas");
    }
  }
  Rng rng(seed);
  std::vector<Batch<float>> out;
  out.reserve(texts.size());
  for (const std::string& text : texts) {
    std::vector<int> ids = encode(vocab, text);
    if (ids.empty()) {
      throw InputError("classification example tokenizes to zero tokens");
    }
    if (static_cast<int>(ids.size()) > max_positions) {
      ids.resize(static_cast<size_t>(max_positions));
    }
    std::vector<std::string> dirty(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
      const std::string& piece = vocab.piece_bytes(ids[i]);
      dirty[i] = (p == 0.0 || piece.empty() || !utf8_valid(piece))
                     ? piece
                     : corrupt_with_rng(piece, p, dict, rng);
    }
    Batch<float> b;
    b.batch = 1;
    if (pixel) {
      b.seq_len = static_cast<int>(ids.size());
      b.has_images = true;
      b.images.resize(static_cast<Eigen::Index>(ids.size()), atlas->row_elems());
      for (size_t i = 0; i < ids.size(); ++i) {
        if (dirty[i] == vocab.piece_bytes(ids[i])) {
          b.images.row(static_cast<Eigen::Index>(i)) =
              atlas->row(static_cast<uint32_t>(ids[i]));
        } else {
          render_piece_row(render_cfg, dirty[i],
                           b.images.row(static_cast<Eigen::Index>(i)).data());
        }
      }
    } else {
      std::vector<int> expanded;
      for (size_t i = 0; i < ids.size(); ++i) {
        if (dirty[i] == vocab.piece_bytes(ids[i])) {
          expanded.push_back(ids[i]);
        } else {
          std::vector<int> group = encode(vocab, dirty[i]);
          if (group.empty()) group.push_back(BpeVocab::kUnk);
          expanded.insert(expanded.end(), group.begin(), group.end());
        }
      }
      // Keep the sentence end; the feature reads the final position.
      if (static_cast<int>(expanded.size()) > max_positions) {
        expanded.erase(expanded.begin(),
                       expanded.end() - max_positions);
      }
      b.seq_len = static_cast<int>(expanded.size());
      b.input_ids = std::move(expanded);
    }
    out.push_back(std::move(b));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sweep

uint64_t cell_seed(uint64_t base_seed, const std::string& model_name,
                   double p) {
  uint64_t h = hash_combine(base_seed, model_name);
  return hash_combine(h, format_double(p));
}

MetricsReport robustness_sweep(const std::vector<SweepModel>& models,
                               const std::string& corpus_name,
                               const std::vector<std::string>& docs,
                               const std::vector<double>& p_levels,
                               const NoiseDictionary& dict,
                               const BpeVocab& vocab,
                               const RenderConfig& render_cfg,
                               uint64_t base_seed, int batch_size, int seq_len,
                               bool retokenize) {
  MetricsReport report;
  for (const SweepModel& m : models) {
    for (double p : p_levels) {
      MetricsRecord r;
      r.model = m.name;
      r.corpus = corpus_name;
      r.noise_p = p;
      r.seed = cell_seed(base_seed, m.name, p);
      try {
        PerplexityResult pr =
            noisy_perplexity(m.config, *m.params, m.atlas, vocab, render_cfg,
                             docs, dict, p, r.seed, batch_size, seq_len,
                             retokenize);
        r.ppl = pr.ppl;
        r.tokens = pr.tokens;
      } catch (const std::exception& e) {
        r.failed = true;
        report.annotations.push_back("cell failed: model=" + m.name +
                                     " p=" + format_double(p) +
                                     " error=" + e.what());
      }
      report.records.push_back(r);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Plots

namespace {

void plot_point(GlyphImage& img, int x, int y, float shade) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  float& px = img.pixels[static_cast<size_t>(y) * img.width + x];
  px = std::min(px, shade);
}

void plot_line(GlyphImage& img, double x0, double y0, double x1, double y1,
               float shade) {
  int steps = static_cast<int>(
      std::max(2.0, 2.0 * std::max(std::abs(x1 - x0), std::abs(y1 - y0))));
  for (int i = 0; i <= steps; ++i) {
    double t = static_cast<double>(i) / steps;
    int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
    int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
    plot_point(img, x, y, shade);
    plot_point(img, x + 1, y, shade);
    plot_point(img, x, y + 1, shade);
  }
}

void stamp_text(GlyphImage& canvas, const std::string& text, int x0, int y0) {
  size_t scalars = utf8_decode(text).size();
  RenderConfig rc;
  rc.image_height = 16;
  rc.image_width = static_cast<int>(8 * scalars + 8);
  rc.basic_font_size = 11;
  rc.min_font_size = 4;
  rc.max_font_size = 11;
  GlyphImage g = render_word(text, rc);
  for (int r = 0; r < g.height; ++r) {
    for (int c = 0; c < g.width; ++c) {
      float ink = g.pixels[static_cast<size_t>(r) * g.width + c];
      if (ink > 0) plot_point(canvas, x0 + c, y0 + r, 1.0f - ink);
    }
  }
}

}  // namespace

GlyphImage render_line_plot(const std::vector<PlotSeries>& series, int width,
                            int height, bool log_y) {
  if (width < 80 || height < 60) {
    throw InputError("plot dimensions too small");
  }
  GlyphImage img;
  img.width = width;
  img.height = height;
  img.pixels.assign(static_cast<size_t>(width) * height, 1.0f);  // white

  const int ml = 48, mr = 16, mt = 16, mb = 32;
  const int px0 = ml, px1 = width - mr, py0 = height - mb, py1 = mt;

  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& s : series) {
    for (size_t i = 0; i < s.x.size(); ++i) {
      double y = s.y[i];
      if (log_y) y = std::log10(std::max(y, 1e-12));
      if (first) {
        xmin = xmax = s.x[i];
        ymin = ymax = y;
        first = false;
      } else {
        xmin = std::min(xmin, s.x[i]);
        xmax = std::max(xmax, s.x[i]);
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
      }
    }
  }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;

  auto sx = [&](double x) {
    return px0 + (x - xmin) / (xmax - xmin) * (px1 - px0);
  };
  auto sy = [&](double y) {
    if (log_y) y = std::log10(std::max(y, 1e-12));
    return py0 + (y - ymin) / (ymax - ymin) * (py1 - py0);
  };

  // Axes and x ticks.
  plot_line(img, px0, py0, px1, py0, 0.0f);
  plot_line(img, px0, py0, px0, py1, 0.0f);
  if (!series.empty()) {
    for (double x : series[0].x) {
      plot_line(img, sx(x), py0, sx(x), py0 + 4, 0.0f);
    }
  }

  int legend_y = mt;
  for (const auto& s : series) {
    for (size_t i = 0; i + 1 < s.x.size(); ++i) {
      plot_line(img, sx(s.x[i]), sy(s.y[i]), sx(s.x[i + 1]), sy(s.y[i + 1]),
                s.shade);
    }
    for (size_t i = 0; i < s.x.size(); ++i) {
      for (int dx = -1; dx <= 1; ++dx) {
        for (int dy = -1; dy <= 1; ++dy) {
          plot_point(img, static_cast<int>(std::lround(sx(s.x[i]))) + dx,
                     static_cast<int>(std::lround(sy(s.y[i]))) + dy, s.shade);
        }
      }
    }
    if (!s.label.empty()) {
      plot_line(img, px1 - 110, legend_y + 8, px1 - 90, legend_y + 8, s.shade);
      stamp_text(img, s.label, px1 - 84, legend_y);
      legend_y += 18;
    }
  }
  return img;
}

}  // namespace pixellm
