#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "pixellm/util.hpp"

namespace pixellm {

// Quadratic TrueType outlines in font units, composites already resolved.
struct GlyphPoint {
  double x;
  double y;
  bool on_curve;
};

struct GlyphOutline {
  std::vector<std::vector<GlyphPoint>> contours;
  bool empty() const { return contours.empty(); }
};

struct GlyphMetrics {
  double advance = 0;  // font units
  double xmin = 0, ymin = 0, xmax = 0, ymax = 0;  // glyf header bbox
  bool has_outline = false;
};

// Minimal TrueType (glyf-flavored) font reader: cmap formats 4 and 12, simple
// and composite glyphs, horizontal metrics. Layout beyond cmap + advances
// (shaping, kerning) is out of scope.
class Font {
 public:
  static Font parse(std::vector<uint8_t> bytes);  // throws FormatError
  static Font load(const std::string& path);      // throws ConfigError
  static const Font& embedded();

  uint16_t units_per_em() const { return units_per_em_; }
  double ascender() const { return ascender_; }
  double descender() const { return descender_; }  // negative
  uint16_t glyph_count() const { return num_glyphs_; }

  // 0 (notdef) when the codepoint is unmapped.
  uint16_t glyph_id(char32_t cp) const;
  bool has_codepoint(char32_t cp) const { return cmap_.count(cp) > 0; }

  const GlyphMetrics& metrics(uint16_t gid) const;
  // Resolves composite references recursively; result is in font units.
  GlyphOutline outline(uint16_t gid) const;

  const std::vector<uint8_t>& bytes() const { return bytes_; }

 private:
  Font() = default;
  void parse_tables();
  void parse_head_hhea_maxp();
  void parse_cmap();
  void parse_hmtx_and_boxes();
  void append_glyph(uint16_t gid, const std::array<double, 6>& xform, int depth,
                    GlyphOutline& out) const;

  std::vector<uint8_t> bytes_;
  std::unordered_map<uint32_t, std::pair<uint32_t, uint32_t>> tables_;  // tag -> (off, len)
  std::unordered_map<char32_t, uint16_t> cmap_;
  std::vector<GlyphMetrics> metrics_;
  std::vector<uint32_t> loca_;
  uint32_t glyf_off_ = 0, glyf_len_ = 0;
  uint16_t units_per_em_ = 1000;
  uint16_t num_glyphs_ = 0;
  double ascender_ = 0, descender_ = 0;
};

}  // namespace pixellm
