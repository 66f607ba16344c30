#pragma once

#include <memory>
#include <string>
#include <vector>

#include "blockspot/dataset_io.hpp"
#include "blockspot/errors.hpp"
#include "blockspot/geometry.hpp"
#include "blockspot/image.hpp"

namespace blockspot::blockgen {

struct DimensionMismatch : InputError {
    using InputError::InputError;
};
struct EmptyCrop : InputError {
    using InputError::InputError;
};

struct TextInstance {
    geometry::Polygon polygon;
    std::string text;
    bool ignore = false;
};

struct ImageDims {
    int width = 0;
    int height = 0;
    int channels = 3;
};

using PositionFeature = std::vector<double>;  // 2K values in [0,1]
using VisualFeature = std::vector<double>;    // length d
using FeatureVector = std::vector<double>;    // [position ; visual]
using ClusterLabel = int;

// Polygon perimeter resampled to K equally spaced points, normalized by the
// image dims componentwise. Out-of-image vertices are clamped first.
PositionFeature position_features(const TextInstance& inst, const ImageDims& dims, int k);

// Spatial feature map over a fixed cell grid; global average pooling over
// the cells yields the visual feature.
struct FeatureMap {
    int cells_h = 0;
    int cells_w = 0;
    int dim = 0;
    std::vector<double> data;  // cells_h * cells_w * dim

    double at(int cy, int cx, int d) const {
        return data[(static_cast<std::size_t>(cy) * cells_w + cx) * dim + d];
    }
};

class FeatureExtractor {
  public:
    virtual ~FeatureExtractor() = default;
    virtual int feature_dim() const = 0;
    virtual int input_height() const = 0;
    virtual int input_width() const = 0;
    virtual FeatureMap extract(const RasterImage& preprocessed) const = 0;
};

// Deterministic dependency-free extractor: per cell of a 4x4 grid, per-channel
// color histograms plus a gradient-orientation histogram. Bin counts are
// chosen so 3*color_bins + orientation_bins equals the feature dim (default
// 20+20+20+4 = 64).
struct BuiltinExtractorConfig {
    int color_bins = 20;
    int orientation_bins = 4;
    int grid = 4;
    int input_size = 32;
};

std::unique_ptr<FeatureExtractor> make_builtin_extractor(const BuiltinExtractorConfig& cfg = {});

VisualFeature visual_features(const RasterImage& crop, const FeatureExtractor& extractor);

// Euclidean DBSCAN. Core points with >= min_pts neighbors (self included)
// within eps form clusters; border points join the cluster of their nearest
// core; noise points get fresh singleton labels. Labels are dense from 0 in
// first-occurrence order.
std::vector<ClusterLabel> dbscan(const std::vector<FeatureVector>& features, double eps,
                                 int min_pts);

struct TextBlock {
    geometry::Polygon polygon;      // convex hull of member vertices
    std::vector<int> members;       // instance indices in reading order
    std::string text;               // member texts joined by single spaces
    bool ignore = false;
};

// One block per distinct label; block polygon is the convex hull of all
// member vertices, text joined in reading order.
std::vector<TextBlock> merge_blocks(const std::vector<TextInstance>& instances,
                                    const std::vector<ClusterLabel>& labels);

struct BlockGenConfig {
    double eps = 0.3;
    int min_pts = 1;
    int resample_points = 8;    // K
    int visual_dim = 64;        // d
    double position_weight = 1.0;  // lambda applied to the position block
    BuiltinExtractorConfig extractor;
};

// Feature vector for one instance: position and visual blocks each
// L2-normalized, position block scaled by lambda, then concatenated.
FeatureVector instance_features(const TextInstance& inst, const ImageDims& dims,
                                const RasterImage& image, const FeatureExtractor& extractor,
                                const BlockGenConfig& cfg);

// Full pipeline over one annotation record. Ignore-flagged instances are
// excluded from clustering and passed through as singleton ignore blocks.
io::AnnotationRecord generate_blocks(const io::AnnotationRecord& annotation,
                                     const RasterImage& image, const BlockGenConfig& cfg);

}  // namespace blockspot::blockgen
