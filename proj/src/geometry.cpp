#include "blockspot/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace blockspot::geometry {

namespace {

double cross(const Point& o, const Point& a, const Point& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

double dist2(const Point& a, const Point& b) {
    double dx = a.x - b.x, dy = a.y - b.y;
    return dx * dx + dy * dy;
}

double signed_area(const std::vector<Point>& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const Point& p = v[i];
        const Point& q = v[(i + 1) % v.size()];
        s += p.x * q.y - p.y * q.x;
    }
    return 0.5 * s;
}

// Proper crossing of open segments (shared endpoints of adjacent edges do
// not count).
bool segments_cross(const Point& a, const Point& b, const Point& c, const Point& d) {
    double d1 = cross(c, d, a);
    double d2 = cross(c, d, b);
    double d3 = cross(a, b, c);
    double d4 = cross(a, b, d);
    return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
           ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

}  // namespace

Polygon::Polygon(std::vector<Point> vertices) {
    for (const Point& p : vertices) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
            throw DegeneratePolygon("polygon vertex is not finite");
        }
    }
    // Fuse consecutive near-duplicate vertices (including last->first).
    std::vector<Point> fused;
    for (const Point& p : vertices) {
        if (fused.empty() || dist2(fused.back(), p) > kDegenerateTol * kDegenerateTol) {
            fused.push_back(p);
        }
    }
    while (fused.size() > 1 && dist2(fused.front(), fused.back()) <= kDegenerateTol * kDegenerateTol) {
        fused.pop_back();
    }
    if (fused.size() < 3) {
        throw DegeneratePolygon("polygon needs at least 3 distinct vertices");
    }
    double a = signed_area(fused);
    if (std::abs(a) < kDegenerateTol) {
        throw DegeneratePolygon("polygon area below degeneracy tolerance");
    }
    if (a < 0) std::reverse(fused.begin(), fused.end());

    const std::size_t n = fused.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (j == i || (j + 1) % n == i || (i + 1) % n == j) continue;
            if (segments_cross(fused[i], fused[(i + 1) % n], fused[j], fused[(j + 1) % n])) {
                throw DegeneratePolygon("polygon is self-intersecting");
            }
        }
    }
    verts_ = std::move(fused);
}

double Polygon::area() const { return std::abs(signed_area(verts_)); }

Point Polygon::centroid() const {
    // Area-weighted centroid; verts_ are CCW so the signed area is positive.
    double a = 0.0, cx = 0.0, cy = 0.0;
    for (std::size_t i = 0; i < verts_.size(); ++i) {
        const Point& p = verts_[i];
        const Point& q = verts_[(i + 1) % verts_.size()];
        double w = p.x * q.y - q.x * p.y;
        a += w;
        cx += (p.x + q.x) * w;
        cy += (p.y + q.y) * w;
    }
    a *= 0.5;
    return {cx / (6.0 * a), cy / (6.0 * a)};
}

void Polygon::bounds(double& min_x, double& min_y, double& max_x, double& max_y) const {
    min_x = min_y = std::numeric_limits<double>::infinity();
    max_x = max_y = -std::numeric_limits<double>::infinity();
    for (const Point& p : verts_) {
        min_x = std::min(min_x, p.x);
        min_y = std::min(min_y, p.y);
        max_x = std::max(max_x, p.x);
        max_y = std::max(max_y, p.y);
    }
}

bool Polygon::is_convex() const {
    const std::size_t n = verts_.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (cross(verts_[i], verts_[(i + 1) % n], verts_[(i + 2) % n]) < 0) return false;
    }
    return true;
}

bool Polygon::contains(const Point& p) const {
    // Crossing-number test; points on an edge count as inside.
    const std::size_t n = verts_.size();
    bool inside = false;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Point& a = verts_[j];
        const Point& b = verts_[i];
        double c = cross(a, b, p);
        if (std::abs(c) < 1e-12 && p.x >= std::min(a.x, b.x) - 1e-12 &&
            p.x <= std::max(a.x, b.x) + 1e-12 && p.y >= std::min(a.y, b.y) - 1e-12 &&
            p.y <= std::max(a.y, b.y) + 1e-12) {
            return true;
        }
        if ((b.y > p.y) != (a.y > p.y)) {
            double t = (p.y - b.y) / (a.y - b.y);
            if (p.x < b.x + t * (a.x - b.x)) inside = !inside;
        }
    }
    return inside;
}

double polygon_area(const Polygon& p) { return p.area(); }

Polygon convex_hull(const std::vector<Point>& points) {
    if (points.empty()) throw EmptyInput("convex hull of empty point set");

    std::vector<Point> pts = points;
    std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) {
        return a.x < b.x || (a.x == b.x && a.y < b.y);
    });
    pts.erase(std::unique(pts.begin(), pts.end(),
                          [](const Point& a, const Point& b) {
                              return dist2(a, b) <= kDegenerateTol * kDegenerateTol;
                          }),
              pts.end());

    const std::size_t n = pts.size();
    // Monotone chain; strict turns only, so collinear points are dropped.
    std::vector<Point> hull(2 * n);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    for (std::size_t i = n - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k > 0 ? k - 1 : 0);
    if (hull.size() < 3) throw CollinearInput("all points are collinear");
    return Polygon(std::move(hull));
}

std::vector<std::array<Point, 3>> triangulate(const Polygon& p) {
    std::vector<std::array<Point, 3>> tris;
    const std::vector<Point>& v = p.vertices();
    if (p.is_convex()) {
        for (std::size_t i = 1; i + 1 < v.size(); ++i) {
            tris.push_back({v[0], v[i], v[i + 1]});
        }
        return tris;
    }
    // Ear clipping on the CCW vertex ring.
    std::vector<Point> ring = v;
    while (ring.size() > 3) {
        const std::size_t n = ring.size();
        bool clipped = false;
        for (std::size_t i = 0; i < n; ++i) {
            const Point& a = ring[(i + n - 1) % n];
            const Point& b = ring[i];
            const Point& c = ring[(i + 1) % n];
            if (cross(a, b, c) <= 0) continue;  // reflex or flat
            bool ear = true;
            for (std::size_t j = 0; j < n && ear; ++j) {
                if (j == (i + n - 1) % n || j == i || j == (i + 1) % n) continue;
                const Point& q = ring[j];
                if (cross(a, b, q) >= 0 && cross(b, c, q) >= 0 && cross(c, a, q) >= 0) {
                    ear = false;
                }
            }
            if (!ear) continue;
            tris.push_back({a, b, c});
            ring.erase(ring.begin() + static_cast<std::ptrdiff_t>(i));
            clipped = true;
            break;
        }
        if (!clipped) break;  // numerically stuck; remaining ring is near-flat
    }
    if (ring.size() == 3) tris.push_back({ring[0], ring[1], ring[2]});
    return tris;
}

namespace {

// Sutherland-Hodgman clip of a convex CCW subject by a convex CCW clip
// polygon; returns the clipped region's area.
double convex_clip_area(const std::array<Point, 3>& subject, const std::array<Point, 3>& clip) {
    std::vector<Point> out(subject.begin(), subject.end());
    for (std::size_t e = 0; e < 3 && !out.empty(); ++e) {
        const Point& ca = clip[e];
        const Point& cb = clip[(e + 1) % 3];
        std::vector<Point> in;
        in.swap(out);
        const std::size_t n = in.size();
        for (std::size_t i = 0; i < n; ++i) {
            const Point& cur = in[i];
            const Point& nxt = in[(i + 1) % n];
            double side_cur = cross(ca, cb, cur);
            double side_nxt = cross(ca, cb, nxt);
            if (side_cur >= 0) out.push_back(cur);
            if ((side_cur > 0 && side_nxt < 0) || (side_cur < 0 && side_nxt > 0)) {
                double t = side_cur / (side_cur - side_nxt);
                out.push_back({cur.x + t * (nxt.x - cur.x), cur.y + t * (nxt.y - cur.y)});
            }
        }
    }
    if (out.size() < 3) return 0.0;
    return std::abs(signed_area(out));
}

}  // namespace

double intersection_area(const Polygon& a, const Polygon& b) {
    double amin_x, amin_y, amax_x, amax_y, bmin_x, bmin_y, bmax_x, bmax_y;
    a.bounds(amin_x, amin_y, amax_x, amax_y);
    b.bounds(bmin_x, bmin_y, bmax_x, bmax_y);
    if (amax_x < bmin_x || bmax_x < amin_x || amax_y < bmin_y || bmax_y < amin_y) {
        return 0.0;
    }
    double total = 0.0;
    for (const auto& ta : triangulate(a)) {
        for (const auto& tb : triangulate(b)) {
            total += convex_clip_area(ta, tb);
        }
    }
    return total;
}

MatchResult geometric_match(const Polygon& g, const Polygon& p, double threshold) {
    double inter = intersection_area(g, p);
    double score = std::max(inter / g.area(), inter / p.area());
    return {score > threshold, score};
}

}  // namespace blockspot::geometry
