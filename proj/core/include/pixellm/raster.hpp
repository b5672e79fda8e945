#pragma once

#include <vector>

#include "pixellm/font.hpp"

namespace pixellm {

// A straight edge in device space (y grows downward).
struct Edge {
  double x0, y0, x1, y1;
};

// Flattens a quadratic TrueType outline into device-space edges.
// The affine map is x_dev = ox + scale * x_font, y_dev = oy - scale * y_font
// (font y grows upward). Curve flattening subdivides until the control point
// deviates from the chord midpoint by less than `tolerance` device pixels.
void flatten_outline(const GlyphOutline& outline, double scale, double ox,
                     double oy, std::vector<Edge>& edges,
                     double tolerance = 0.1);

// Anti-aliased nonzero-winding fill. Coverage is accumulated into `buffer`
// (row-major width x height, values clamped to [0,1]) using `supersample`
// scanlines per pixel row with exact horizontal span coverage. Geometry
// outside the canvas is clipped.
void rasterize_edges(const std::vector<Edge>& edges, int width, int height,
                     std::vector<float>& buffer, int supersample = 4);

}  // namespace pixellm
