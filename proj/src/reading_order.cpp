#include "blockspot/reading_order.hpp"

#include <algorithm>
#include <numeric>

namespace blockspot {

namespace {

struct Box {
    double y0, y1, cx, cy;
};

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t i) {
    while (parent[i] != i) {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    return i;
}

}  // namespace

std::vector<std::size_t> reading_order(const std::vector<geometry::Polygon>& polys) {
    const std::size_t n = polys.size();
    std::vector<Box> boxes(n);
    for (std::size_t i = 0; i < n; ++i) {
        double x0, y0, x1, y1;
        polys[i].bounds(x0, y0, x1, y1);
        geometry::Point c = polys[i].centroid();
        boxes[i] = {y0, y1, c.x, c.y};
    }

    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double overlap = std::min(boxes[i].y1, boxes[j].y1) - std::max(boxes[i].y0, boxes[j].y0);
            double min_h = std::min(boxes[i].y1 - boxes[i].y0, boxes[j].y1 - boxes[j].y0);
            if (overlap >= 0.5 * min_h) {
                parent[find_root(parent, i)] = find_root(parent, j);
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> line_y(n, 0.0);
    std::vector<std::size_t> line_count(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t r = find_root(parent, i);
        line_y[r] += boxes[i].cy;
        line_count[r] += 1;
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        std::size_t ra = find_root(parent, a), rb = find_root(parent, b);
        if (ra != rb) {
            double ya = line_y[ra] / static_cast<double>(line_count[ra]);
            double yb = line_y[rb] / static_cast<double>(line_count[rb]);
            if (ya != yb) return ya < yb;
            return ra < rb;
        }
        if (boxes[a].cx != boxes[b].cx) return boxes[a].cx < boxes[b].cx;
        return a < b;
    });
    return order;
}

}  // namespace blockspot
