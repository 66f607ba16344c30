#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "blockspot/errors.hpp"
#include "blockspot/geometry.hpp"
#include "blockspot/image.hpp"

namespace blockspot::io {

struct SchemaError : InputError {
    using InputError::InputError;
};
struct MissingImage : InputError {
    using InputError::InputError;
};
struct EmptyIntersection : InputError {
    using InputError::InputError;
};
struct ImageError : InputError {
    using InputError::InputError;
};

struct InstanceRecord {
    std::vector<geometry::Point> polygon;
    std::string text;
    bool ignore = false;
};

struct BlockRecord {
    std::vector<geometry::Point> polygon;
    std::vector<int> members;  // indices into instances
    std::string text;
};

struct AnnotationRecord {
    std::string image;  // path relative to the JSONL's directory
    int width = 0;
    int height = 0;
    std::vector<InstanceRecord> instances;
    std::optional<std::vector<BlockRecord>> blocks;
};

// JSONL, one record per line. Schema errors report the 1-based line number.
std::vector<AnnotationRecord> load_annotations(const std::string& path);
void save_annotations(const std::vector<AnnotationRecord>& records, const std::string& path);

AnnotationRecord parse_record(const std::string& json_line);  // single line
std::string format_record(const AnnotationRecord& record);    // canonical one-line JSON

// PNG or binary PPM (P6), by file magic.
RasterImage load_image(const std::string& path);
void save_png(const RasterImage& img, const std::string& path);

inline constexpr int kCropHeight = 64;
inline constexpr int kCropWidth = 256;

// Axis-aligned crop of the polygon's bounding box, clamped to the image.
// Throws EmptyIntersection when the box misses the image entirely.
RasterImage crop_axis_aligned(const RasterImage& image, const geometry::Polygon& polygon);

// Block cutting: axis-aligned crop, pixels outside the polygon replaced by
// the crop's mean border color, then resized to 64x256.
RasterImage crop_block(const RasterImage& image, const geometry::Polygon& polygon);

struct SynthSample {
    RasterImage image;  // 64x256x3
    std::string text;   // 1-5 words, single spaces
};

inline constexpr int kGlyphSize = 8;

// Fixed procedural 8x8 glyph for a character; identical across calls.
std::vector<float> glyph_bitmap(char c);

// Deterministic synthetic sample: the text's characters (spaces included)
// fill 8x8 patch cells in raster order on a black canvas.
SynthSample synth_sample(std::uint64_t seed);

// Word boxes for a synth sample's layout, one per whitespace word, in text
// order. Used to emit instance polygons for generated data.
std::vector<std::vector<geometry::Point>> synth_word_boxes(const std::string& text);

}  // namespace blockspot::io
