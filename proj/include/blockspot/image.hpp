#pragma once

#include <cstddef>
#include <vector>

#include "blockspot/errors.hpp"

namespace blockspot {

// Row-major intensity image, values in [0,1], channels interleaved
// (data[(y*width + x)*channels + c]).
struct RasterImage {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<float> data;

    RasterImage() = default;
    RasterImage(int w, int h, int c, float fill = 0.0f)
        : width(w), height(h), channels(c),
          data(static_cast<std::size_t>(w) * h * c, fill) {}

    bool empty() const { return width <= 0 || height <= 0; }

    float& at(int y, int x, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    float at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

}  // namespace blockspot
