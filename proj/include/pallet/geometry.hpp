#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

namespace pallet {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

using Polygon = std::vector<Vec2>;  // convex, counter-clockwise

// Rectangle [x0, x0+len] x [y0, y0+wid] rotated by yaw (radians) about its
// center.
inline Polygon rotated_rect(double x0, double y0, double len, double wid,
                            double yaw) {
  const double cx = x0 + 0.5 * len;
  const double cy = y0 + 0.5 * wid;
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  const double hx = 0.5 * len;
  const double hy = 0.5 * wid;
  Polygon out(4);
  const double corners[4][2] = {{-hx, -hy}, {hx, -hy}, {hx, hy}, {-hx, hy}};
  for (int i = 0; i < 4; ++i) {
    out[static_cast<std::size_t>(i)] =
        Vec2{cx + corners[i][0] * c - corners[i][1] * s,
             cy + corners[i][0] * s + corners[i][1] * c};
  }
  return out;
}

// Sutherland-Hodgman clip of a convex subject against one half-plane
// (left side of edge a->b kept).
inline Polygon clip_edge(const Polygon& subject, const Vec2& a, const Vec2& b) {
  Polygon out;
  const std::size_t n = subject.size();
  if (n == 0) return out;
  out.reserve(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& cur = subject[i];
    const Vec2& prev = subject[(i + n - 1) % n];
    const double dc = cross(a, b, cur);
    const double dp = cross(a, b, prev);
    if (dp >= 0.0) {
      if (dc >= 0.0) {
        out.push_back(cur);
      } else {
        const double t = dp / (dp - dc);
        out.push_back(Vec2{prev.x + t * (cur.x - prev.x),
                           prev.y + t * (cur.y - prev.y)});
      }
    } else if (dc >= 0.0) {
      const double t = dp / (dp - dc);
      out.push_back(
          Vec2{prev.x + t * (cur.x - prev.x), prev.y + t * (cur.y - prev.y)});
      out.push_back(cur);
    }
  }
  return out;
}

// Intersection of two convex CCW polygons.
inline Polygon convex_intersect(const Polygon& a, const Polygon& b) {
  Polygon out = a;
  const std::size_t n = b.size();
  for (std::size_t i = 0; i < n && !out.empty(); ++i) {
    out = clip_edge(out, b[i], b[(i + 1) % n]);
  }
  return out;
}

inline double polygon_area(const Polygon& p) {
  const std::size_t n = p.size();
  if (n < 3) return 0.0;
  double a = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& u = p[i];
    const Vec2& v = p[(i + 1) % n];
    a += u.x * v.y - v.x * u.y;
  }
  return 0.5 * a;
}

// Area centroid; falls back to the vertex mean for degenerate polygons.
inline Vec2 polygon_centroid(const Polygon& p) {
  const std::size_t n = p.size();
  Vec2 c;
  if (n == 0) return c;
  double a2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& u = p[i];
    const Vec2& v = p[(i + 1) % n];
    const double w = u.x * v.y - v.x * u.y;
    a2 += w;
    c.x += (u.x + v.x) * w;
    c.y += (u.y + v.y) * w;
  }
  if (std::abs(a2) < 1e-12) {
    c = Vec2{0, 0};
    for (const auto& v : p) {
      c.x += v.x;
      c.y += v.y;
    }
    c.x /= static_cast<double>(n);
    c.y /= static_cast<double>(n);
    return c;
  }
  c.x /= 3.0 * a2;
  c.y /= 3.0 * a2;
  return c;
}

// Andrew monotone chain; returns a CCW convex hull (no repeated last point).
inline Polygon convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Vec2& a, const Vec2& b) {
                          return a.x == b.x && a.y == b.y;
                        }),
            pts.end());
  const std::size_t n = pts.size();
  if (n < 3) return pts;
  Polygon hull(2 * n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  const std::size_t lower = k + 1;
  for (std::size_t i = n - 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

// Inclusive containment with tolerance; a point on the boundary counts as
// inside. Handles degenerate hulls (point, segment).
inline bool point_in_convex(const Polygon& hull, const Vec2& p,
                            double tol = 1e-9) {
  const std::size_t n = hull.size();
  if (n == 0) return false;
  if (n == 1)
    return std::abs(p.x - hull[0].x) <= tol && std::abs(p.y - hull[0].y) <= tol;
  if (n == 2) {
    const Vec2& a = hull[0];
    const Vec2& b = hull[1];
    if (std::abs(cross(a, b, p)) >
        tol * std::max(1.0, std::hypot(b.x - a.x, b.y - a.y)))
      return false;
    const double t = (p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y);
    const double len2 = (b.x - a.x) * (b.x - a.x) + (b.y - a.y) * (b.y - a.y);
    return t >= -tol && t <= len2 + tol;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (cross(hull[i], hull[(i + 1) % n], p) < -tol) return false;
  }
  return true;
}

}  // namespace pallet
