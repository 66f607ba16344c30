#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "blockspot/errors.hpp"

namespace blockspot::geometry {

struct DegeneratePolygon : InputError {
    using InputError::InputError;
};
struct CollinearInput : InputError {
    using InputError::InputError;
};
struct EmptyInput : InputError {
    using InputError::InputError;
};

struct Point {
    double x = 0.0;
    double y = 0.0;
};

// Vertices closer than this are fused at construction; polygons whose area
// falls below it are rejected.
inline constexpr double kDegenerateTol = 1e-9;

// Simple polygon, validated and normalized to counter-clockwise orientation
// at construction. Immutable afterwards.
class Polygon {
  public:
    explicit Polygon(std::vector<Point> vertices);

    const std::vector<Point>& vertices() const { return verts_; }
    std::size_t size() const { return verts_.size(); }

    double area() const;
    Point centroid() const;
    void bounds(double& min_x, double& min_y, double& max_x, double& max_y) const;
    bool is_convex() const;
    bool contains(const Point& p) const;  // boundary counts as inside

  private:
    std::vector<Point> verts_;
};

double polygon_area(const Polygon& p);

Polygon convex_hull(const std::vector<Point>& points);

// Area of a ∩ b. Non-convex inputs are ear-clipped into triangles and the
// pairwise triangle intersections are summed.
double intersection_area(const Polygon& a, const Polygon& b);

struct MatchResult {
    bool matched = false;
    double score = 0.0;
};

// Overlap criterion: score = max(inter/area(g), inter/area(p)), matched when
// score > threshold. The max of the two containment ratios keeps one-to-many
// layouts matchable from either side.
MatchResult geometric_match(const Polygon& g, const Polygon& p, double threshold);

// Fan/ear-clip triangulation of a simple polygon (CCW). Exposed for tests.
std::vector<std::array<Point, 3>> triangulate(const Polygon& p);

}  // namespace blockspot::geometry
