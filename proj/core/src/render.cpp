#include "pixellm/render.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <unordered_map>

#include "pixellm/raster.hpp"

namespace pixellm {

namespace {

// Ink bounding box of the laid-out text in font units, pen advances applied.
struct TextBox {
  double minx = 0, maxx = 0, ymin = 0, ymax = 0;
  bool has_ink = false;
};

TextBox measure(const Font& font, const std::vector<char32_t>& scalars) {
  TextBox box;
  double pen = 0;
  bool first = true;
  for (char32_t cp : scalars) {
    uint16_t gid = font.glyph_id(cp);
    const GlyphMetrics& m = font.metrics(gid);
    if (m.has_outline) {
      double x0 = pen + m.xmin, x1 = pen + m.xmax;
      if (first) {
        box.minx = x0;
        box.maxx = x1;
        box.ymin = m.ymin;
        box.ymax = m.ymax;
        first = false;
      } else {
        box.minx = std::min(box.minx, x0);
        box.maxx = std::max(box.maxx, x1);
        box.ymin = std::min(box.ymin, m.ymin);
        box.ymax = std::max(box.ymax, m.ymax);
      }
      box.has_ink = true;
    }
    pen += m.advance;
  }
  return box;
}

// The canvas baseline centers the em band (ascender..descender) vertically.
double band_baseline(const Font& font, double scale, double canvas_h) {
  return canvas_h / 2.0 + scale * (font.ascender() + font.descender()) / 2.0;
}

bool box_fits(const Font& font, const TextBox& box, double scale, int width,
              int height) {
  if (!box.has_ink) return true;
  if (scale * (box.maxx - box.minx) > width - 2.0) return false;
  double by = band_baseline(font, scale, height);
  if (by - scale * box.ymax < 0.0) return false;
  if (by - scale * box.ymin > static_cast<double>(height)) return false;
  return true;
}

// Area-averaging 1D resample of a row-major buffer along one axis.
std::vector<float> resample_axis(const std::vector<float>& src, int src_w,
                                 int src_h, int dst_extent, bool horizontal) {
  int dst_w = horizontal ? dst_extent : src_w;
  int dst_h = horizontal ? src_h : dst_extent;
  std::vector<float> dst(static_cast<size_t>(dst_w) * dst_h, 0.0f);
  int src_extent = horizontal ? src_w : src_h;
  double r = static_cast<double>(src_extent) / dst_extent;
  int lines = horizontal ? src_h : src_w;
  for (int line = 0; line < lines; ++line) {
    for (int j = 0; j < dst_extent; ++j) {
      double a = j * r, b = (j + 1) * r;
      double acc = 0;
      int i0 = static_cast<int>(std::floor(a));
      int i1 = std::min(src_extent, static_cast<int>(std::ceil(b)));
      for (int i = i0; i < i1; ++i) {
        double overlap = std::min<double>(i + 1, b) - std::max<double>(i, a);
        if (overlap <= 0) continue;
        size_t idx = horizontal ? static_cast<size_t>(line) * src_w + i
                                : static_cast<size_t>(i) * src_w + line;
        acc += overlap * src[idx];
      }
      size_t odx = horizontal ? static_cast<size_t>(line) * dst_w + j
                              : static_cast<size_t>(j) * dst_w + line;
      dst[odx] = static_cast<float>(acc / r);
    }
  }
  return dst;
}

}  // namespace

void RenderConfig::validate() const {
  if (image_height <= 0 || image_width <= 0) {
    throw ConfigError("render config: image dimensions must be positive");
  }
  if (channels != 1) {
    throw ConfigError("render config: channels must be 1");
  }
  if (min_font_size < 1 || min_font_size > basic_font_size ||
      basic_font_size > max_font_size) {
    throw ConfigError(
        "render config: require 1 <= min_font_size <= basic_font_size <= max_font_size");
  }
}

std::string RenderConfig::canonical_string() const {
  std::string s;
  s += "basic_font_size=" + std::to_string(basic_font_size) + "\n";
  s += "image_height=" + std::to_string(image_height) + "\n";
  s += "image_width=" + std::to_string(image_width) + "\n";
  s += "channels=" + std::to_string(channels) + "\n";
  s += "max_font_size=" + std::to_string(max_font_size) + "\n";
  s += "min_font_size=" + std::to_string(min_font_size) + "\n";
  s += std::string("polarity=") + (polarity_ink_high ? "ink_high" : "ink_low") + "\n";
  return s;
}

RenderConfig RenderConfig::from_config(const KeyValueConfig& kv) {
  RenderConfig rc;
  rc.font_file = kv.get_string("font_file", rc.font_file);
  rc.basic_font_size = static_cast<int>(kv.get_int("basic_font_size", rc.basic_font_size));
  rc.image_height = static_cast<int>(kv.get_int("image_height", rc.image_height));
  rc.image_width = static_cast<int>(kv.get_int("image_width", rc.image_width));
  rc.channels = static_cast<int>(kv.get_int("channels", rc.channels));
  rc.max_font_size = static_cast<int>(kv.get_int("max_font_size", rc.max_font_size));
  rc.min_font_size = static_cast<int>(kv.get_int("min_font_size", rc.min_font_size));
  rc.polarity_ink_high = kv.get_bool("polarity_ink_high", rc.polarity_ink_high);
  return rc;
}

void RenderConfig::to_config(KeyValueConfig& kv) const {
  kv.set("font_file", font_file);
  kv.set("basic_font_size", std::to_string(basic_font_size));
  kv.set("image_height", std::to_string(image_height));
  kv.set("image_width", std::to_string(image_width));
  kv.set("channels", std::to_string(channels));
  kv.set("max_font_size", std::to_string(max_font_size));
  kv.set("min_font_size", std::to_string(min_font_size));
  kv.set("polarity_ink_high", polarity_ink_high ? "true" : "false");
}

double GlyphImage::ink_sum() const {
  double s = 0;
  for (float v : pixels) s += v;
  return s;
}

std::vector<uint8_t> quantize_image(const GlyphImage& img) {
  std::vector<uint8_t> out(img.pixels.size());
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    out[i] = static_cast<uint8_t>(std::lround(255.0 * img.pixels[i]));
  }
  return out;
}

const Font& resolve_font(const RenderConfig& config) {
  if (config.font_file.empty()) return Font::embedded();
  static std::mutex mu;
  static std::unordered_map<std::string, std::unique_ptr<Font>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(config.font_file);
  if (it == cache.end()) {
    auto font = std::make_unique<Font>(Font::load(config.font_file));
    it = cache.emplace(config.font_file, std::move(font)).first;
  }
  return *it->second;
}

bool text_fits(const std::string& text, int font_size, const RenderConfig& config) {
  config.validate();
  const Font& font = resolve_font(config);
  TextBox box = measure(font, utf8_decode(text));
  double scale = static_cast<double>(font_size) / font.units_per_em();
  return box_fits(font, box, scale, config.image_width, config.image_height);
}

int fit_font_size(const std::string& text, const RenderConfig& config) {
  config.validate();
  const Font& font = resolve_font(config);
  std::vector<char32_t> scalars = utf8_decode(text);
  if (scalars.empty()) return config.basic_font_size;
  TextBox box = measure(font, scalars);
  if (!box.has_ink) return config.max_font_size;

  auto fits = [&](int s) {
    double scale = static_cast<double>(s) / font.units_per_em();
    return box_fits(font, box, scale, config.image_width, config.image_height);
  };
  if (!fits(config.min_font_size)) return config.min_font_size;
  if (fits(config.max_font_size)) return config.max_font_size;
  // Largest fitting size: the predicate is monotone non-increasing in s.
  int lo = config.min_font_size, hi = config.max_font_size;
  while (lo + 1 < hi) {
    int mid = lo + (hi - lo) / 2;
    if (fits(mid)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

GlyphImage render_word(const std::string& text, const RenderConfig& config) {
  config.validate();
  const Font& font = resolve_font(config);
  const int W = config.image_width, H = config.image_height;

  GlyphImage img;
  img.width = W;
  img.height = H;
  img.source_text = text;

  std::vector<char32_t> scalars = utf8_decode(text);
  TextBox box = measure(font, scalars);
  std::vector<float> coverage(static_cast<size_t>(W) * H, 0.0f);

  if (box.has_ink) {
    int size = fit_font_size(text, config);
    double scale = static_cast<double>(size) / font.units_per_em();
    bool direct = box_fits(font, box, scale, W, H);

    // Overflow fallback: rasterize at the floor size onto a canvas large
    // enough for the ink, then area-average the overflowing axes down.
    bool width_ok = direct || scale * (box.maxx - box.minx) <= W - 2.0;
    double by = band_baseline(font, scale, H);
    bool height_ok = direct || (by - scale * box.ymax >= 0.0 &&
                                by - scale * box.ymin <= static_cast<double>(H));
    int W2 = width_ok ? W
                      : static_cast<int>(std::ceil(scale * (box.maxx - box.minx))) + 2;
    int H2 = height_ok ? H
                       : static_cast<int>(std::ceil(scale * (box.ymax - box.ymin))) + 2;
    double baseline = height_ok ? band_baseline(font, scale, H2)
                                : 1.0 + scale * box.ymax;
    double offset_x = 1.0 - scale * box.minx;

    std::vector<Edge> edges;
    double pen = 0;
    for (char32_t cp : scalars) {
      uint16_t gid = font.glyph_id(cp);
      const GlyphMetrics& m = font.metrics(gid);
      if (m.has_outline) {
        GlyphOutline outline = font.outline(gid);
        flatten_outline(outline, scale, offset_x + scale * pen, baseline, edges);
      }
      pen += m.advance;
    }
    std::vector<float> buf;
    rasterize_edges(edges, W2, H2, buf);
    if (W2 != W) buf = resample_axis(buf, W2, H2, W, /*horizontal=*/true);
    if (H2 != H) buf = resample_axis(buf, W, H2, H, /*horizontal=*/false);
    coverage = std::move(buf);
  }

  img.pixels.resize(coverage.size());
  for (size_t i = 0; i < coverage.size(); ++i) {
    float v = std::min(1.0f, std::max(0.0f, coverage[i]));
    img.pixels[i] = config.polarity_ink_high ? v : 1.0f - v;
  }
  return img;
}

std::vector<GlyphImage> render_sequence(const std::vector<std::string>& texts,
                                        const RenderConfig& config) {
  std::vector<GlyphImage> out;
  out.reserve(texts.size());
  for (const std::string& t : texts) out.push_back(render_word(t, config));
  return out;
}

}  // namespace pixellm
