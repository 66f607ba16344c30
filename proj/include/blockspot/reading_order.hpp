#pragma once

#include <vector>

#include "blockspot/geometry.hpp"

namespace blockspot {

// Orders polygons for transcription joining: members are grouped into lines
// by vertical-extent overlap (>= 50% of the smaller height), lines run
// top-to-bottom, members within a line left-to-right by centroid x.
std::vector<std::size_t> reading_order(const std::vector<geometry::Polygon>& polys);

}  // namespace blockspot
