#pragma once

#include <string>
#include <vector>

#include "pixellm/font.hpp"
#include "pixellm/util.hpp"

namespace pixellm {

struct RenderConfig {
  std::string font_file;        // empty resolves to the embedded font
  int basic_font_size = 10;     // px per em
  int image_height = 20;
  int image_width = 50;
  int channels = 1;
  int max_font_size = 20;       // scale-up ceiling for short words
  int min_font_size = 4;        // scale-down floor
  bool polarity_ink_high = true;

  void validate() const;  // throws ConfigError on invariant violations
  // Deterministic field dump used for config hashing and manifests.
  std::string canonical_string() const;

  static RenderConfig from_config(const KeyValueConfig& kv);
  void to_config(KeyValueConfig& kv) const;
};

struct GlyphImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;  // row-major, each value in [0,1]
  std::string source_text;

  float at(int row, int col) const {
    return pixels[static_cast<size_t>(row) * width + col];
  }
  double ink_sum() const;
};

// round(255 * pixel) per pixel, row-major.
std::vector<uint8_t> quantize_image(const GlyphImage& img);

// Returns the parsed font for the config (embedded by default). Cached per
// path behind a lock; the returned reference lives for the process.
const Font& resolve_font(const RenderConfig& config);

// Largest size in [min_font_size, max_font_size] whose ink bounding box fits
// the canvas with a 1 px margin; min_font_size when nothing fits; the basic
// size for empty text. The fit predicate is linear in size, so it is monotone.
int fit_font_size(const std::string& text, const RenderConfig& config);

// Exposed for property tests: the fit predicate checked by fit_font_size.
bool text_fits(const std::string& text, int font_size, const RenderConfig& config);

GlyphImage render_word(const std::string& text, const RenderConfig& config);
std::vector<GlyphImage> render_sequence(const std::vector<std::string>& texts,
                                        const RenderConfig& config);

}  // namespace pixellm
