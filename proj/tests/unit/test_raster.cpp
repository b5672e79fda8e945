#include <cmath>
#include <vector>

#include "doctest.h"
#include "pixellm/font.hpp"
#include "pixellm/raster.hpp"

using namespace pixellm;

namespace {

// Signed horizontal-ray crossing count; nonzero means inside.
int winding_at(const std::vector<Edge>& edges, double px, double py) {
  int w = 0;
  for (const auto& e : edges) {
    if (e.y0 <= py) {
      if (e.y1 > py) {
        double t = (py - e.y0) / (e.y1 - e.y0);
        if (e.x0 + t * (e.x1 - e.x0) > px) ++w;
      }
    } else if (e.y1 <= py) {
      double t = (py - e.y0) / (e.y1 - e.y0);
      if (e.x0 + t * (e.x1 - e.x0) > px) --w;
    }
  }
  return w;
}

// Independent per-pixel coverage estimate from a 16x16 point grid.
double point_coverage(const std::vector<Edge>& edges, int x, int y) {
  int inside = 0;
  for (int sy = 0; sy < 16; ++sy) {
    for (int sx = 0; sx < 16; ++sx) {
      double px = x + (sx + 0.5) / 16.0;
      double py = y + (sy + 0.5) / 16.0;
      if (winding_at(edges, px, py) != 0) ++inside;
    }
  }
  return inside / 256.0;
}

}  // namespace

TEST_CASE("rasterizer coverage agrees with a point-sampling oracle") {
  const Font& font = Font::embedded();
  const int w = 30, h = 30;
  for (char32_t cp : {U'o', U'A', U'g', U'%'}) {
    CAPTURE(static_cast<uint32_t>(cp));
    uint16_t gid = font.glyph_id(cp);
    REQUIRE(gid != 0);
    const GlyphMetrics& m = font.metrics(gid);
    GlyphOutline outline = font.outline(gid);
    REQUIRE_FALSE(outline.empty());

    const double scale = 20.0 / font.units_per_em();
    const double ox = 2.0 - scale * m.xmin;
    const double oy = 24.0;  // baseline; 20 px covers the ascender above it
    std::vector<Edge> edges;
    flatten_outline(outline, scale, ox, oy, edges);
    REQUIRE_FALSE(edges.empty());

    std::vector<float> buffer;
    rasterize_edges(edges, w, h, buffer);
    REQUIRE(buffer.size() == static_cast<size_t>(w) * h);

    double total_diff = 0;
    double ink = 0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double got = buffer[static_cast<size_t>(y) * w + x];
        CHECK(got >= 0.0);
        CHECK(got <= 1.0);
        double want = point_coverage(edges, x, y);
        CHECK(std::abs(got - want) <= 0.25);
        total_diff += std::abs(got - want);
        ink += got;
      }
    }
    CHECK(ink > 0);
    CHECK(total_diff / (w * h) < 0.02);
  }
}

TEST_CASE("geometry outside the canvas is clipped, not wrapped") {
  // A large square overlapping the canvas edge: outside rows stay empty.
  std::vector<Edge> edges{{-10, -10, 40, -10},
                          {40, -10, 40, 5},
                          {40, 5, -10, 5},
                          {-10, 5, -10, -10}};
  std::vector<float> buffer;
  rasterize_edges(edges, 8, 8, buffer);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      float v = buffer[static_cast<size_t>(y) * 8 + x];
      if (y < 5) {
        CHECK(v == doctest::Approx(1.0f));
      } else {
        CHECK(v == 0.0f);
      }
    }
  }
}

TEST_CASE("flatten_outline respects the deviation tolerance") {
  // One quadratic arc; finer tolerance may only add edges, and every edge
  // endpoint stays near the exact curve.
  GlyphOutline outline;
  outline.contours.push_back({{0, 0, true}, {50, 100, false}, {100, 0, true}});
  std::vector<Edge> coarse, fine;
  flatten_outline(outline, 1.0, 0, 100, coarse, 2.0);
  flatten_outline(outline, 1.0, 0, 100, fine, 0.05);
  CHECK(fine.size() >= coarse.size());
  for (const auto& e : fine) {
    // Curve in device space: y = 100 - parabola through (0,0),(50,50),(100,0).
    auto on_curve = [](double x) {
      double t = x / 100.0;
      return 100.0 - (2 * t * (1 - t) * 100.0);
    };
    CHECK(std::abs(e.y0 - on_curve(e.x0)) < 1.5);
  }
}
