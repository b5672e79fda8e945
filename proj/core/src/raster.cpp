#include "pixellm/raster.hpp"

#include <algorithm>
#include <cmath>

namespace pixellm {

namespace {

void add_edge(std::vector<Edge>& edges, double x0, double y0, double x1, double y1) {
  if (y0 == y1) return;  // horizontal edges never cross a scanline
  edges.push_back({x0, y0, x1, y1});
}

void flatten_quad(std::vector<Edge>& edges, double x0, double y0, double cx,
                  double cy, double x1, double y1, double tol, int depth) {
  // Distance from the control point to the chord midpoint bounds the error.
  double dx = cx - 0.5 * (x0 + x1);
  double dy = cy - 0.5 * (y0 + y1);
  if (depth >= 16 || dx * dx + dy * dy <= tol * tol) {
    add_edge(edges, x0, y0, x1, y1);
    return;
  }
  double mx0 = 0.5 * (x0 + cx), my0 = 0.5 * (y0 + cy);
  double mx1 = 0.5 * (cx + x1), my1 = 0.5 * (cy + y1);
  double mx = 0.5 * (mx0 + mx1), my = 0.5 * (my0 + my1);
  flatten_quad(edges, x0, y0, mx0, my0, mx, my, tol, depth + 1);
  flatten_quad(edges, mx, my, mx1, my1, x1, y1, tol, depth + 1);
}

}  // namespace

void flatten_outline(const GlyphOutline& outline, double scale, double ox,
                     double oy, std::vector<Edge>& edges, double tolerance) {
  for (const auto& contour : outline.contours) {
    const size_t n = contour.size();
    if (n < 2) continue;
    auto dev = [&](const GlyphPoint& p) -> std::pair<double, double> {
      return {ox + scale * p.x, oy - scale * p.y};
    };
    auto midpoint = [](const GlyphPoint& a, const GlyphPoint& b) -> GlyphPoint {
      return {0.5 * (a.x + b.x), 0.5 * (a.y + b.y), true};
    };

    // Normalize: build a point list beginning with an on-curve point,
    // inserting implied on-curve midpoints between consecutive off-curve
    // points (TrueType convention).
    size_t first_on = n;
    for (size_t i = 0; i < n; ++i) {
      if (contour[i].on_curve) {
        first_on = i;
        break;
      }
    }
    std::vector<GlyphPoint> pts;
    pts.reserve(n * 2);
    if (first_on == n) {
      // All off-curve: start from the implied midpoint of the last/first pair.
      pts.push_back(midpoint(contour[n - 1], contour[0]));
      for (size_t i = 0; i < n; ++i) {
        pts.push_back(contour[i]);
        pts.push_back(midpoint(contour[i], contour[(i + 1) % n]));
      }
      pts.pop_back();  // final midpoint equals the starting point
    } else {
      for (size_t k = 0; k <= n; ++k) {
        const GlyphPoint& cur = contour[(first_on + k) % n];
        if (k == n) break;
        if (!pts.empty() && !pts.back().on_curve && !cur.on_curve) {
          pts.push_back(midpoint(pts.back(), cur));
        }
        pts.push_back(cur);
      }
    }

    // Walk the normalized list emitting lines and quadratics, closing back to
    // the start point.
    const GlyphPoint start = pts[0];
    size_t i = 1;
    GlyphPoint prev = start;
    while (i <= pts.size()) {
      const GlyphPoint& cur = i == pts.size() ? start : pts[i];
      if (cur.on_curve) {
        auto [ax, ay] = dev(prev);
        auto [bx, by] = dev(cur);
        add_edge(edges, ax, ay, bx, by);
        prev = cur;
        ++i;
      } else {
        const GlyphPoint& next = (i + 1 >= pts.size()) ? start : pts[i + 1];
        GlyphPoint endp = next.on_curve ? next : midpoint(cur, next);
        auto [ax, ay] = dev(prev);
        auto [cx, cy] = dev(cur);
        auto [bx, by] = dev(endp);
        flatten_quad(edges, ax, ay, cx, cy, bx, by, tolerance, 0);
        prev = endp;
        i += next.on_curve ? 2 : 1;
      }
    }
  }
}

void rasterize_edges(const std::vector<Edge>& edges, int width, int height,
                     std::vector<float>& buffer, int supersample) {
  buffer.assign(static_cast<size_t>(width) * height, 0.0f);
  if (edges.empty()) return;
  const double weight = 1.0 / supersample;
  std::vector<std::pair<double, int>> crossings;

  for (int row = 0; row < height; ++row) {
    float* out = buffer.data() + static_cast<size_t>(row) * width;
    for (int s = 0; s < supersample; ++s) {
      double ys = row + (s + 0.5) / supersample;
      crossings.clear();
      for (const Edge& e : edges) {
        double ymin = std::min(e.y0, e.y1);
        double ymax = std::max(e.y0, e.y1);
        if (ys < ymin || ys >= ymax) continue;  // half-open: no double counting
        double t = (ys - e.y0) / (e.y1 - e.y0);
        double x = e.x0 + t * (e.x1 - e.x0);
        crossings.emplace_back(x, e.y1 > e.y0 ? 1 : -1);
      }
      if (crossings.empty()) continue;
      std::sort(crossings.begin(), crossings.end());
      int winding = 0;
      for (size_t k = 0; k + 1 <= crossings.size(); ++k) {
        winding += crossings[k].second;
        if (winding == 0 || k + 1 == crossings.size()) continue;
        double xs = std::max(0.0, crossings[k].first);
        double xe = std::min(static_cast<double>(width), crossings[k + 1].first);
        if (xe <= xs) continue;
        int px0 = static_cast<int>(std::floor(xs));
        int px1 = static_cast<int>(std::ceil(xe)) - 1;
        for (int px = px0; px <= px1 && px < width; ++px) {
          double overlap = std::min<double>(px + 1, xe) - std::max<double>(px, xs);
          if (overlap > 0) out[px] += static_cast<float>(overlap * weight);
        }
      }
    }
  }
  for (float& v : buffer) v = std::min(1.0f, std::max(0.0f, v));
}

}  // namespace pixellm
