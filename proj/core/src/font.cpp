#include "pixellm/font.hpp"

#include <cstring>
#include <mutex>

extern const unsigned char pixellm_embedded_font[];
extern const std::size_t pixellm_embedded_font_size;

namespace pixellm {

namespace {

// Big-endian bounds-checked reader.
struct Reader {
  const uint8_t* data;
  size_t size;

  void require(size_t off, size_t n) const {
    if (off + n > size || off + n < off) {
      throw FormatError("font: read past end of table data");
    }
  }
  uint8_t u8(size_t off) const {
    require(off, 1);
    return data[off];
  }
  uint16_t u16(size_t off) const {
    require(off, 2);
    return static_cast<uint16_t>((data[off] << 8) | data[off + 1]);
  }
  int16_t i16(size_t off) const { return static_cast<int16_t>(u16(off)); }
  uint32_t u32(size_t off) const {
    require(off, 4);
    return (static_cast<uint32_t>(data[off]) << 24) |
           (static_cast<uint32_t>(data[off + 1]) << 16) |
           (static_cast<uint32_t>(data[off + 2]) << 8) |
           static_cast<uint32_t>(data[off + 3]);
  }
};

constexpr uint32_t tag(const char* s) {
  return (static_cast<uint32_t>(static_cast<uint8_t>(s[0])) << 24) |
         (static_cast<uint32_t>(static_cast<uint8_t>(s[1])) << 16) |
         (static_cast<uint32_t>(static_cast<uint8_t>(s[2])) << 8) |
         static_cast<uint32_t>(static_cast<uint8_t>(s[3]));
}

double f2dot14(int16_t v) { return static_cast<double>(v) / 16384.0; }

// Composite glyph flags.
constexpr uint16_t ARG_1_AND_2_ARE_WORDS = 0x0001;
constexpr uint16_t ARGS_ARE_XY_VALUES = 0x0002;
constexpr uint16_t WE_HAVE_A_SCALE = 0x0008;
constexpr uint16_t MORE_COMPONENTS = 0x0020;
constexpr uint16_t WE_HAVE_AN_X_AND_Y_SCALE = 0x0040;
constexpr uint16_t WE_HAVE_A_TWO_BY_TWO = 0x0080;
constexpr uint16_t SCALED_COMPONENT_OFFSET = 0x0800;

// Simple glyph point flags.
constexpr uint8_t ON_CURVE = 0x01;
constexpr uint8_t X_SHORT = 0x02;
constexpr uint8_t Y_SHORT = 0x04;
constexpr uint8_t REPEAT_FLAG = 0x08;
constexpr uint8_t X_SAME_OR_POS = 0x10;
constexpr uint8_t Y_SAME_OR_POS = 0x20;

}  // namespace

Font Font::parse(std::vector<uint8_t> bytes) {
  Font f;
  f.bytes_ = std::move(bytes);
  f.parse_tables();
  f.parse_head_hhea_maxp();
  f.parse_cmap();
  f.parse_hmtx_and_boxes();
  return f;
}

Font Font::load(const std::string& path) {
  std::string data;
  try {
    data = read_file(path);
  } catch (const InputError& e) {
    throw ConfigError(std::string("font file unreadable: ") + e.what());
  }
  try {
    return parse(std::vector<uint8_t>(data.begin(), data.end()));
  } catch (const FormatError& e) {
    throw ConfigError("font file invalid: " + path + ": " + e.what());
  }
}

const Font& Font::embedded() {
  static const Font font = parse(std::vector<uint8_t>(
      pixellm_embedded_font, pixellm_embedded_font + pixellm_embedded_font_size));
  return font;
}

void Font::parse_tables() {
  Reader r{bytes_.data(), bytes_.size()};
  uint32_t sfnt = r.u32(0);
  if (sfnt != 0x00010000 && sfnt != tag("true")) {
    throw FormatError("font: not a TrueType (glyf) font");
  }
  uint16_t num_tables = r.u16(4);
  for (uint16_t i = 0; i < num_tables; ++i) {
    size_t rec = 12 + static_cast<size_t>(i) * 16;
    uint32_t t = r.u32(rec);
    uint32_t off = r.u32(rec + 8);
    uint32_t len = r.u32(rec + 12);
    if (off > bytes_.size() || len > bytes_.size() - off) {
      throw FormatError("font: table record out of bounds");
    }
    tables_[t] = {off, len};
  }
  for (const char* need : {"head", "maxp", "cmap", "loca", "glyf", "hhea", "hmtx"}) {
    if (!tables_.count(tag(need))) {
      throw FormatError(std::string("font: missing table ") + need);
    }
  }
}

void Font::parse_head_hhea_maxp() {
  Reader r{bytes_.data(), bytes_.size()};
  auto [head_off, head_len] = tables_[tag("head")];
  if (head_len < 54) throw FormatError("font: head table too short");
  if (r.u32(head_off + 12) != 0x5F0F3CF5) throw FormatError("font: bad head magic");
  units_per_em_ = r.u16(head_off + 18);
  if (units_per_em_ == 0) throw FormatError("font: unitsPerEm is zero");
  int16_t index_to_loc = r.i16(head_off + 50);

  auto [maxp_off, maxp_len] = tables_[tag("maxp")];
  if (maxp_len < 6) throw FormatError("font: maxp table too short");
  num_glyphs_ = r.u16(maxp_off + 4);

  auto [hhea_off, hhea_len] = tables_[tag("hhea")];
  if (hhea_len < 36) throw FormatError("font: hhea table too short");
  ascender_ = r.i16(hhea_off + 4);
  descender_ = r.i16(hhea_off + 6);

  auto [loca_off, loca_len] = tables_[tag("loca")];
  size_t entries = static_cast<size_t>(num_glyphs_) + 1;
  loca_.resize(entries);
  if (index_to_loc == 0) {
    if (loca_len < entries * 2) throw FormatError("font: loca table too short");
    for (size_t i = 0; i < entries; ++i) {
      loca_[i] = static_cast<uint32_t>(r.u16(loca_off + i * 2)) * 2;
    }
  } else {
    if (loca_len < entries * 4) throw FormatError("font: loca table too short");
    for (size_t i = 0; i < entries; ++i) loca_[i] = r.u32(loca_off + i * 4);
  }
  auto [g_off, g_len] = tables_[tag("glyf")];
  glyf_off_ = g_off;
  glyf_len_ = g_len;
  for (size_t i = 0; i < entries; ++i) {
    if (loca_[i] > glyf_len_) throw FormatError("font: loca offset out of bounds");
  }
}

void Font::parse_cmap() {
  Reader r{bytes_.data(), bytes_.size()};
  auto [cmap_off, cmap_len] = tables_[tag("cmap")];
  uint16_t num_subtables = r.u16(cmap_off + 2);
  uint32_t best = 0;
  int best_rank = -1;
  for (uint16_t i = 0; i < num_subtables; ++i) {
    size_t rec = cmap_off + 4 + static_cast<size_t>(i) * 8;
    uint16_t platform = r.u16(rec);
    uint16_t encoding = r.u16(rec + 2);
    uint32_t sub_off = cmap_off + r.u32(rec + 4);
    int rank = -1;
    if (platform == 3 && encoding == 10) rank = 4;       // Windows UCS-4
    else if (platform == 0 && encoding == 4) rank = 3;   // Unicode full
    else if (platform == 3 && encoding == 1) rank = 2;   // Windows BMP
    else if (platform == 0) rank = 1;                    // Unicode BMP
    if (rank > best_rank) {
      best_rank = rank;
      best = sub_off;
    }
  }
  if (best_rank < 0) throw FormatError("font: no usable cmap subtable");

  uint16_t format = r.u16(best);
  if (format == 4) {
    uint16_t seg_count_x2 = r.u16(best + 6);
    uint16_t seg_count = seg_count_x2 / 2;
    size_t ends = best + 14;
    size_t starts = ends + seg_count_x2 + 2;
    size_t deltas = starts + seg_count_x2;
    size_t ranges = deltas + seg_count_x2;
    for (uint16_t s = 0; s < seg_count; ++s) {
      uint16_t end = r.u16(ends + s * 2);
      uint16_t start = r.u16(starts + s * 2);
      int16_t delta = r.i16(deltas + s * 2);
      uint16_t range_off = r.u16(ranges + s * 2);
      if (start == 0xFFFF && end == 0xFFFF) continue;
      for (uint32_t c = start; c <= end; ++c) {
        uint16_t gid;
        if (range_off == 0) {
          gid = static_cast<uint16_t>((c + delta) & 0xFFFF);
        } else {
          size_t idx = ranges + s * 2 + range_off + (c - start) * 2;
          gid = r.u16(idx);
          if (gid != 0) gid = static_cast<uint16_t>((gid + delta) & 0xFFFF);
        }
        if (gid != 0 && gid < num_glyphs_) cmap_[c] = gid;
        if (c == 0xFFFF) break;
      }
    }
  } else if (format == 12) {
    uint32_t num_groups = r.u32(best + 12);
    for (uint32_t g = 0; g < num_groups; ++g) {
      size_t rec = best + 16 + static_cast<size_t>(g) * 12;
      uint32_t start = r.u32(rec);
      uint32_t end = r.u32(rec + 4);
      uint32_t gid0 = r.u32(rec + 8);
      if (end < start || end - start > 0x10FFFF) {
        throw FormatError("font: cmap format 12 group out of range");
      }
      for (uint32_t c = start; c <= end; ++c) {
        uint32_t gid = gid0 + (c - start);
        if (gid != 0 && gid < num_glyphs_) cmap_[c] = static_cast<uint16_t>(gid);
      }
    }
  } else {
    throw FormatError("font: unsupported cmap format " + std::to_string(format));
  }
}

void Font::parse_hmtx_and_boxes() {
  Reader r{bytes_.data(), bytes_.size()};
  auto [hhea_off, hhea_len] = tables_[tag("hhea")];
  uint16_t num_hmetrics = r.u16(hhea_off + 34);
  auto [hmtx_off, hmtx_len] = tables_[tag("hmtx")];
  if (num_hmetrics == 0) throw FormatError("font: numberOfHMetrics is zero");

  metrics_.resize(num_glyphs_);
  uint16_t last_advance = 0;
  for (uint16_t gid = 0; gid < num_glyphs_; ++gid) {
    GlyphMetrics& m = metrics_[gid];
    if (gid < num_hmetrics) {
      last_advance = r.u16(hmtx_off + static_cast<size_t>(gid) * 4);
    }
    m.advance = last_advance;
    uint32_t start = loca_[gid], end = loca_[gid + 1];
    if (end > start) {
      if (end - start < 10) throw FormatError("font: glyph record too short");
      size_t off = glyf_off_ + start;
      m.xmin = r.i16(off + 2);
      m.ymin = r.i16(off + 4);
      m.xmax = r.i16(off + 6);
      m.ymax = r.i16(off + 8);
      m.has_outline = true;
    }
  }
}

uint16_t Font::glyph_id(char32_t cp) const {
  auto it = cmap_.find(cp);
  return it == cmap_.end() ? 0 : it->second;
}

const GlyphMetrics& Font::metrics(uint16_t gid) const {
  if (gid >= metrics_.size()) gid = 0;
  return metrics_[gid];
}

GlyphOutline Font::outline(uint16_t gid) const {
  GlyphOutline out;
  append_glyph(gid >= num_glyphs_ ? 0 : gid, {1, 0, 0, 1, 0, 0}, 0, out);
  return out;
}

// xform is the affine map (a, b, c, d, e, f): x' = a*x + c*y + e, y' = b*x + d*y + f.
void Font::append_glyph(uint16_t gid, const std::array<double, 6>& xform, int depth,
                        GlyphOutline& out) const {
  if (depth > 8) throw FormatError("font: composite glyph nesting too deep");
  uint32_t start = loca_[gid], end = loca_[gid + 1];
  if (end <= start) return;  // empty glyph (e.g. space)
  Reader r{bytes_.data() + glyf_off_, glyf_len_};
  size_t off = start;
  int16_t num_contours = r.i16(off);
  off += 10;

  auto apply = [&xform](double x, double y) -> std::pair<double, double> {
    return {xform[0] * x + xform[2] * y + xform[4],
            xform[1] * x + xform[3] * y + xform[5]};
  };

  if (num_contours >= 0) {
    std::vector<uint16_t> contour_ends(num_contours);
    for (int c = 0; c < num_contours; ++c) {
      contour_ends[c] = r.u16(off);
      off += 2;
    }
    uint16_t num_points = num_contours == 0 ? 0 : contour_ends.back() + 1;
    uint16_t instr_len = r.u16(off);
    off += 2 + instr_len;

    std::vector<uint8_t> flags;
    flags.reserve(num_points);
    while (flags.size() < num_points) {
      uint8_t f = r.u8(off++);
      flags.push_back(f);
      if (f & REPEAT_FLAG) {
        uint8_t count = r.u8(off++);
        for (uint8_t k = 0; k < count && flags.size() < num_points; ++k) {
          flags.push_back(f);
        }
      }
    }
    std::vector<double> xs(num_points), ys(num_points);
    int32_t x = 0;
    for (uint16_t i = 0; i < num_points; ++i) {
      uint8_t f = flags[i];
      if (f & X_SHORT) {
        uint8_t d = r.u8(off++);
        x += (f & X_SAME_OR_POS) ? d : -static_cast<int32_t>(d);
      } else if (!(f & X_SAME_OR_POS)) {
        x += r.i16(off);
        off += 2;
      }
      xs[i] = x;
    }
    int32_t y = 0;
    for (uint16_t i = 0; i < num_points; ++i) {
      uint8_t f = flags[i];
      if (f & Y_SHORT) {
        uint8_t d = r.u8(off++);
        y += (f & Y_SAME_OR_POS) ? d : -static_cast<int32_t>(d);
      } else if (!(f & Y_SAME_OR_POS)) {
        y += r.i16(off);
        off += 2;
      }
      ys[i] = y;
    }
    uint16_t point = 0;
    for (int c = 0; c < num_contours; ++c) {
      std::vector<GlyphPoint> contour;
      for (; point <= contour_ends[c]; ++point) {
        auto [px, py] = apply(xs[point], ys[point]);
        contour.push_back({px, py, (flags[point] & ON_CURVE) != 0});
      }
      if (contour.size() >= 2) out.contours.push_back(std::move(contour));
    }
  } else {
    for (;;) {
      uint16_t flags = r.u16(off);
      uint16_t child = r.u16(off + 2);
      off += 4;
      double dx = 0, dy = 0;
      if (flags & ARG_1_AND_2_ARE_WORDS) {
        if (flags & ARGS_ARE_XY_VALUES) {
          dx = r.i16(off);
          dy = r.i16(off + 2);
        }
        off += 4;
      } else {
        if (flags & ARGS_ARE_XY_VALUES) {
          dx = static_cast<int8_t>(r.u8(off));
          dy = static_cast<int8_t>(r.u8(off + 1));
        }
        off += 2;
      }
      // Point-matching placement (ARGS_ARE_XY_VALUES unset) is not supported;
      // such components fall back to a zero offset.
      double a = 1, b = 0, c = 0, d = 1;
      if (flags & WE_HAVE_A_SCALE) {
        a = d = f2dot14(r.i16(off));
        off += 2;
      } else if (flags & WE_HAVE_AN_X_AND_Y_SCALE) {
        a = f2dot14(r.i16(off));
        d = f2dot14(r.i16(off + 2));
        off += 4;
      } else if (flags & WE_HAVE_A_TWO_BY_TWO) {
        a = f2dot14(r.i16(off));
        b = f2dot14(r.i16(off + 2));
        c = f2dot14(r.i16(off + 4));
        d = f2dot14(r.i16(off + 6));
        off += 8;
      }
      if (flags & SCALED_COMPONENT_OFFSET) {
        double tx = a * dx + c * dy;
        double ty = b * dx + d * dy;
        dx = tx;
        dy = ty;
      }
      // Compose child transform with the parent's.
      std::array<double, 6> m;
      m[0] = xform[0] * a + xform[2] * b;
      m[1] = xform[1] * a + xform[3] * b;
      m[2] = xform[0] * c + xform[2] * d;
      m[3] = xform[1] * c + xform[3] * d;
      m[4] = xform[0] * dx + xform[2] * dy + xform[4];
      m[5] = xform[1] * dx + xform[3] * dy + xform[5];
      if (child < num_glyphs_) append_glyph(child, m, depth + 1, out);
      if (!(flags & MORE_COMPONENTS)) break;
    }
  }
}

}  // namespace pixellm
